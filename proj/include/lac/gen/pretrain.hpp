#pragma once

#include "lac/gen/dataset.hpp"
#include "lac/gen/policy.hpp"
#include "lac/gen/schedule.hpp"

#include <functional>
#include <vector>

namespace lac {

// Draws n labelled data points.
using SampleSource = std::function<Batch(int n, Rng& rng)>;

SampleSource mixture_source(const TargetMixture& m);

struct PretrainConfig {
    int steps = 2000;
    int batch = 256;
    double lr = 2e-3;
    double cond_dropout = 0.1;
    // Exponential moving average of the weights; the average is returned.
    // 0 disables it.
    double ema = 0.99;
    std::uint64_t seed = 0;
};

struct PretrainResult {
    PolicyNet policy;
    std::vector<double> losses;
};

// Denoising regression: velocity x1 - x0 along the OT path for flow-ot,
// eps for ddpm. Labels are replaced by the null class with probability
// cond_dropout. Throws DivergenceError on a non-finite loss.
PretrainResult pretrain_base(const SampleSource& data, const NetConfig& net, const NoiseSchedule& sched,
                             const PretrainConfig& cfg);

// One minibatch loss and gradient; exposed for tests.
double denoising_loss(const PolicyNet& policy, const NoiseSchedule& sched, const Batch& batch, Rng& rng,
                      double cond_dropout, ParamSet* grad);

}  // namespace lac
