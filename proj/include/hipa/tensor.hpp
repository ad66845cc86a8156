#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hipa/error.hpp"

namespace hipa {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel_of(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

inline Shape row_major_strides(const Shape& s) {
    Shape st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

template <class T>
class Tape;

namespace detail {

template <class T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    std::uint64_t tape = 0;  // serial of the recording tape, 0 if none
    std::ptrdiff_t node = -1;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

} // namespace detail

/// Dense row-major tensor with shared ownership of its storage. Copies alias
/// the same buffer; use clone() for a deep copy.
template <class T>
class Tensor {
public:
    using value_type = T;
    using Impl = detail::TensorImpl<T>;

    Tensor() : impl_(std::make_shared<Impl>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<Impl>()) {
        for (Index e : shape)
            if (e < 1) throw ShapeMismatch("tensor extents must be positive, got " + to_string(shape));
        impl_->data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
        impl_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
        if (numel_of(shape) != static_cast<Index>(values.size()))
            throw ShapeMismatch("shape " + to_string(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s), T(0)); }
    static Tensor ones(Shape s) { return Tensor(std::move(s), T(1)); }
    static Tensor scalar(T v) { return Tensor(Shape{1}, v); }
    static Tensor from(std::initializer_list<T> v) {
        return Tensor(Shape{static_cast<Index>(v.size())}, std::vector<T>(v));
    }

    bool empty() const { return impl_->data.empty(); }
    const Shape& shape() const { return impl_->shape; }
    Index dim(std::ptrdiff_t i) const {
        const auto n = static_cast<std::ptrdiff_t>(impl_->shape.size());
        if (i < 0) i += n;
        return impl_->shape.at(static_cast<std::size_t>(i));
    }
    std::size_t ndim() const { return impl_->shape.size(); }
    Index numel() const { return static_cast<Index>(impl_->data.size()); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    std::vector<T>& values() { return impl_->data; }
    const std::vector<T>& values() const { return impl_->data; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<T> grad() { return impl_->grad; }
    std::span<const T> grad() const { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        impl_->requires_grad = on;
        return *this;
    }

    /// True once this tensor was produced by a recorded operation.
    bool on_tape() const { return impl_->node >= 0; }

    T item() const {
        if (impl_->data.size() != 1) throw NotScalar("item() on tensor of shape " + to_string(shape()));
        return impl_->data[0];
    }

    T& operator[](Index i) { return impl_->data[static_cast<std::size_t>(i)]; }
    const T& operator[](Index i) const { return impl_->data[static_cast<std::size_t>(i)]; }

    template <class... I>
    T& at(I... idx) {
        return impl_->data[offset({static_cast<Index>(idx)...})];
    }
    template <class... I>
    const T& at(I... idx) const {
        return impl_->data[offset({static_cast<Index>(idx)...})];
    }

    /// Deep copy of the values, detached from any tape.
    Tensor clone() const { return Tensor(shape(), impl_->data); }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape(), std::vector<U>(impl_->data.begin(), impl_->data.end()));
    }

    bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

    const std::shared_ptr<Impl>& impl() const { return impl_; }

private:
    std::size_t offset(std::initializer_list<Index> idx) const {
        if (idx.size() != impl_->shape.size()) throw ShapeMismatch("index rank mismatch");
        std::size_t off = 0;
        std::size_t d = 0;
        for (Index i : idx) {
            const Index e = impl_->shape[d++];
            if (i < 0 || i >= e) throw ShapeMismatch("index out of range");
            off = off * static_cast<std::size_t>(e) + static_cast<std::size_t>(i);
        }
        return off;
    }

    std::shared_ptr<Impl> impl_;
};

/// Define-by-run gradient tape. Nodes are appended in construction order so
/// inputs always precede the nodes that consume them.
template <class T>
class Tape {
public:
    using Backward = std::function<void()>;

    Tape() : serial_(next_serial()) {}

    /// Unique per tape; a new tape never reuses a dead one's serial even at the same address.
    std::uint64_t serial() const { return serial_; }

    std::ptrdiff_t record(Backward fn) {
        nodes_.push_back(std::move(fn));
        return static_cast<std::ptrdiff_t>(nodes_.size()) - 1;
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void run_backward(std::ptrdiff_t from) const {
        for (std::ptrdiff_t i = from; i >= 0; --i) nodes_[static_cast<std::size_t>(i)]();
    }

    static Tape*& active() {
        thread_local Tape* current = nullptr;
        return current;
    }

private:
    static std::uint64_t next_serial() {
        static std::atomic<std::uint64_t> counter{0};
        return ++counter;
    }

    std::uint64_t serial_;
    std::vector<Backward> nodes_;
};

/// Installs a fresh tape for the current thread for the lifetime of the scope.
template <class T>
class TapeScope {
public:
    TapeScope() : previous_(Tape<T>::active()) { Tape<T>::active() = &tape_; }
    ~TapeScope() { Tape<T>::active() = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

    Tape<T>& tape() { return tape_; }

private:
    Tape<T> tape_;
    Tape<T>* previous_;
};

/// Suspends gradient recording on the current thread.
template <class T>
class NoGradGuard {
public:
    NoGradGuard() : previous_(Tape<T>::active()) { Tape<T>::active() = nullptr; }
    ~NoGradGuard() { Tape<T>::active() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape<T>* previous_;
};

namespace detail {

template <class T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
    if (Tape<T>::active() == nullptr) return false;
    for (const auto* t : inputs)
        if (t && t->requires_grad()) return true;
    return false;
}

template <class T>
bool should_record(const std::vector<Tensor<T>>& inputs) {
    if (Tape<T>::active() == nullptr) return false;
    for (const auto& t : inputs)
        if (t.requires_grad()) return true;
    return false;
}

/// Attaches `fn` as the backward rule producing `out`.
template <class T>
void attach(Tensor<T>& out, std::function<void()> fn) {
    auto* tape = Tape<T>::active();
    auto& impl = *out.impl();
    impl.requires_grad = true;
    impl.tape = tape->serial();
    impl.node = tape->record(std::move(fn));
}

template <class T>
bool wants_grad(const std::shared_ptr<TensorImpl<T>>& p) {
    return p->requires_grad;
}

} // namespace detail

/// Propagates d(loss)/d(x) to every tensor that requires a gradient.
/// Gradients accumulate additively into existing buffers.
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) throw NotScalar("backward() needs a scalar loss, got " + to_string(loss.shape()));
    const auto& impl = loss.impl();
    auto* tape = Tape<T>::active();
    if (tape == nullptr || impl->tape != tape->serial() || impl->node < 0)
        throw NoTape("loss was not produced under the active tape");
    impl->ensure_grad()[0] += T(1);
    tape->run_backward(impl->node);
}

} // namespace hipa
