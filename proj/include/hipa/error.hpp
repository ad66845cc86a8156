#pragma once

#include <stdexcept>
#include <string>

namespace hipa {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define HIPA_DEFINE_ERROR(Name)                  \
    class Name : public Error {                  \
    public:                                      \
        using Error::Error;                      \
    };

HIPA_DEFINE_ERROR(ShapeMismatch)
HIPA_DEFINE_ERROR(InvalidHyperparam)
HIPA_DEFINE_ERROR(NotScalar)
HIPA_DEFINE_ERROR(NoTape)
HIPA_DEFINE_ERROR(NotDivisible)
HIPA_DEFINE_ERROR(UnsupportedScale)
HIPA_DEFINE_ERROR(InvalidSize)
HIPA_DEFINE_ERROR(TooSmall)
HIPA_DEFINE_ERROR(DecodeError)
HIPA_DEFINE_ERROR(UnsupportedColorType)
HIPA_DEFINE_ERROR(MissingGrad)
HIPA_DEFINE_ERROR(CorruptCheckpoint)
HIPA_DEFINE_ERROR(ConfigMismatch)
HIPA_DEFINE_ERROR(ConfigError)
HIPA_DEFINE_ERROR(DataError)

#undef HIPA_DEFINE_ERROR

/// Raised by the trainer when the loss stops being finite.
class NanLoss : public Error {
public:
    NanLoss(std::string what, long step, std::string batch_ids)
        : Error(std::move(what)), step_(step), batch_ids_(std::move(batch_ids)) {}

    long step() const noexcept { return step_; }
    const std::string& batch_ids() const noexcept { return batch_ids_; }

private:
    long step_;
    std::string batch_ids_;
};

} // namespace hipa
