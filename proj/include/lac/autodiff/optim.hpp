#pragma once

#include "lac/autodiff/param_set.hpp"

#include <vector>

namespace lac {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled
};

// Adam with decoupled weight decay. Moments are kept per parameter entry and
// can be saved and restored for resumable runs.
class AdamW {
public:
    AdamW() = default;
    AdamW(const ParamSet& layout, AdamConfig cfg);

    void step(ParamSet& params, const ParamSet& grads);

    // Frozen entries are left untouched, including by weight decay.
    void freeze(std::size_t index) { frozen_.at(index) = true; }
    [[nodiscard]] bool frozen(std::size_t index) const { return frozen_.at(index); }

    [[nodiscard]] const AdamConfig& config() const { return cfg_; }
    AdamConfig& config() { return cfg_; }
    [[nodiscard]] long steps() const { return t_; }
    [[nodiscard]] const ParamSet& first_moment() const { return m_; }
    [[nodiscard]] const ParamSet& second_moment() const { return v_; }
    void restore(const ParamSet& m, const ParamSet& v, long steps);

private:
    AdamConfig cfg_;
    ParamSet m_;
    ParamSet v_;
    std::vector<bool> frozen_;
    long t_ = 0;
};

}  // namespace lac
