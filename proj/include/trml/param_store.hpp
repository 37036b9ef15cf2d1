#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "trml/matrix.hpp"

namespace trml {

struct ParamEntry {
    Matrix value;
    Matrix grad;
    Matrix adam_m;
    Matrix adam_v;
};

/// Named trainable tensors plus their gradient and Adam moment buffers.
/// Iteration order is lexicographic by name (std::map), which fixes the
/// update and serialization order.
class ParamStore {
public:
    void add(const std::string& name, Matrix init) {
        if (entries_.count(name)) throw config_error("duplicate parameter: " + name);
        ParamEntry e;
        e.grad = Matrix(init.rows(), init.cols());
        e.adam_m = Matrix(init.rows(), init.cols());
        e.adam_v = Matrix(init.rows(), init.cols());
        e.value = std::move(init);
        entries_.emplace(name, std::move(e));
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    ParamEntry& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw config_error("unknown parameter: " + name);
        return it->second;
    }

    const ParamEntry& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw config_error("unknown parameter: " + name);
        return it->second;
    }

    std::map<std::string, ParamEntry>& entries() { return entries_; }
    const std::map<std::string, ParamEntry>& entries() const { return entries_; }

    std::int64_t step_count() const { return step_count_; }

    void zero_grads() {
        for (auto& [name, e] : entries_)
            for (double& g : e.grad.data()) g = 0.0;
    }

    /// Standard Adam with bias correction; gradients are zeroed afterwards.
    void adam_step(double lr) {
        constexpr double beta1 = 0.9;
        constexpr double beta2 = 0.999;
        constexpr double eps = 1e-8;
        if (!(lr > 0.0)) throw config_error("adam_step: lr must be > 0");
        ++step_count_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
        for (auto& [name, e] : entries_) {
            for (std::size_t k = 0; k < e.value.size(); ++k) {
                const double g = e.grad[k];
                e.adam_m[k] = beta1 * e.adam_m[k] + (1.0 - beta1) * g;
                e.adam_v[k] = beta2 * e.adam_v[k] + (1.0 - beta2) * g * g;
                const double mhat = e.adam_m[k] / bc1;
                const double vhat = e.adam_v[k] / bc2;
                e.value[k] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
            require_finite(e.value, "parameter " + name + " after adam_step");
        }
        zero_grads();
    }

private:
    std::map<std::string, ParamEntry> entries_;
    std::int64_t step_count_ = 0;
};

}  // namespace trml
