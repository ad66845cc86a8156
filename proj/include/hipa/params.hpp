#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hipa/rng.hpp"
#include "hipa/tensor.hpp"

namespace hipa {

/// Named trainable tensors in registration order.
template <class T>
class ParamStore {
public:
    using Entry = std::pair<std::string, Tensor<T>>;

    Tensor<T> add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw InvalidHyperparam("duplicate parameter name: " + name);
        t.set_requires_grad(true);
        index_.emplace(name, entries_.size());
        entries_.emplace_back(name, t);
        return t;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw InvalidHyperparam("unknown parameter: " + name);
        return entries_[it->second].second;
    }
    const Tensor<T>& at(const std::string& name) const { return const_cast<ParamStore*>(this)->at(name); }

    std::size_t size() const { return entries_.size(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [n, t] : entries_) out.push_back(n);
        return out;
    }

    Index num_elements() const {
        Index total = 0;
        for (const auto& [n, t] : entries_) total += t.numel();
        return total;
    }

    void zero_grad() {
        for (auto& [n, t] : entries_) t.zero_grad();
    }

    /// Copies values from a store with the same names and shapes (any scalar type).
    template <class U>
    void copy_values_from(const ParamStore<U>& other) {
        for (auto& [name, t] : entries_) {
            const auto& src = other.at(name);
            if (src.shape() != t.shape()) throw ShapeMismatch("parameter shape differs: " + name);
            std::copy(src.data().begin(), src.data().end(), t.data().begin());
        }
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Registers parameters under a dotted name prefix, drawing initial values
/// from a shared generator in registration order.
template <class T>
class ParamBuilder {
public:
    ParamBuilder(ParamStore<T>& store, Rng& rng, std::string prefix = {})
        : store_(&store), rng_(&rng), prefix_(std::move(prefix)) {}

    ParamBuilder child(const std::string& name) const {
        return ParamBuilder(*store_, *rng_, qualify(name));
    }

    std::string qualify(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }

    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    Tensor<T> fan_in_uniform(const std::string& name, Shape shape, Index fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        return uniform(name, std::move(shape), bound);
    }

    Tensor<T> uniform(const std::string& name, Shape shape, double bound) {
        Tensor<T> t(std::move(shape));
        for (T& v : t.data()) v = static_cast<T>(rng_->uniform(-bound, bound));
        return store_->add(qualify(name), t);
    }

    Tensor<T> constant(const std::string& name, Shape shape, T value) {
        return store_->add(qualify(name), Tensor<T>(std::move(shape), value));
    }

    ParamStore<T>& store() { return *store_; }

private:
    ParamStore<T>* store_;
    Rng* rng_;
    std::string prefix_;
};

} // namespace hipa
