#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hipa/params.hpp"

namespace hipa {

/// Adam moments, kept in ParamStore order.
template <class T>
struct AdamState {
    std::vector<std::string> names;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::uint64_t t = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(const ParamStore<T>& params, double learning_rate) : lr(learning_rate) {
        for (const auto& [name, p] : params) {
            names.push_back(name);
            m.emplace_back(p.shape());
            v.emplace_back(p.shape());
        }
    }
};

/// One bias-corrected Adam update applied in place; t advances by one.
template <class T>
void adam_step(ParamStore<T>& params, AdamState<T>& s) {
    if (s.names.size() != params.size()) throw ShapeMismatch("optimizer state does not cover the parameter store");
    std::size_t i = 0;
    for (auto& [name, p] : params) {
        if (s.names[i] != name || s.m[i].shape() != p.shape())
            throw ShapeMismatch("optimizer state out of sync at " + name);
        if (!p.has_grad()) throw MissingGrad("no gradient for parameter " + name);
        ++i;
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    i = 0;
    for (auto& [name, p] : params) {
        auto w = p.data();
        auto g = p.grad();
        auto m = s.m[i].data();
        auto v = s.v[i].data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = g[k];
            const double mk = s.beta1 * m[k] + (1.0 - s.beta1) * gk;
            const double vk = s.beta2 * v[k] + (1.0 - s.beta2) * gk * gk;
            m[k] = static_cast<T>(mk);
            v[k] = static_cast<T>(vk);
            const double mhat = mk / c1, vhat = vk / c2;
            w[k] = static_cast<T>(w[k] - s.lr * mhat / (std::sqrt(vhat) + s.eps));
        }
        ++i;
    }
}

} // namespace hipa
