#pragma once

#include "lac/autodiff/tensor.hpp"
#include "lac/gen/policy.hpp"
#include "lac/gen/schedule.hpp"
#include "lac/rng.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace lac {

// The deterministic update from rollout step k is affine in (z, pred):
//   next = z_coef * z + pred_coef * pred.
// DDIM (eta = 0) for ddpm, explicit Euler for flow-ot.
struct StepCoefficients {
    double z_coef = 1.0;
    double pred_coef = 0.0;
};

StepCoefficients step_coefficients(const NoiseSchedule& sched, int k);

Matrix deterministic_step(const Matrix& z, const Matrix& pred, int k, const NoiseSchedule& sched);

// DDPM clean-sample estimate x0 = (z - sqrt(1 - ab) eps) / sqrt(ab) at rollout step k.
Matrix predict_x0(const Matrix& z, const Matrix& eps_hat, int k, const NoiseSchedule& sched);

// Per-step transition std. flow: noise_level sqrt(dt); ddpm: noise_level times
// the DDPM posterior std. The last transition is always deterministic.
double step_sigma(const NoiseSchedule& sched, int k, double noise_level);

double gaussian_logprob(const RowVector& x, const RowVector& mean, double sigma);

struct StepResult {
    Matrix z;
    Vector logprob;
};

// next ~ N(mu, sigma^2 I) with mu = deterministic_step; one noise stream per
// row. sigma == 0 returns mu and logprob 0.
StepResult stochastic_step(const Matrix& z, const Matrix& pred, int k, const NoiseSchedule& sched, double sigma,
                           std::span<Rng> rngs);

struct Trajectory {
    int y = 0;
    Matrix latents;   // (T + 1) x d, row k is the state at rollout step k
    Matrix means;     // T x d, policy mean of each transition
    Vector logprobs;  // T, log pi(latents[k + 1] | state k); 0 for deterministic steps
    Vector sigmas;    // T
    std::map<std::string, double> rewards;
    std::string reward_channel;

    [[nodiscard]] int steps() const { return static_cast<int>(logprobs.size()); }
    [[nodiscard]] Vector x0() const { return latents.row(latents.rows() - 1).transpose(); }
};

struct RolloutOptions {
    double noise_level = 0.7;
    double cfg_scale = 1.0;
    // Initial latents, one row per trajectory; drawn from the streams when null.
    const Matrix* z_init = nullptr;
};

// One trajectory per label; trajectory i draws its initial noise and step
// noise from rngs[i]. Rows are processed in fixed-size chunks so results do
// not depend on the worker count.
std::vector<Trajectory> sample_trajectories(const PolicyNet& policy, const std::vector<int>& ys,
                                            const NoiseSchedule& sched, const RolloutOptions& opt,
                                            std::span<Rng> rngs);

Trajectory sample_trajectory(const PolicyNet& policy, int y, const NoiseSchedule& sched, const RolloutOptions& opt,
                             Rng& rng);

// Deterministic ODE/DDIM samples from given initial noise.
Matrix sample_deterministic(const PolicyNet& policy, const Matrix& z_init, const std::vector<int>& ys,
                            const NoiseSchedule& sched, double cfg_scale = 1.0);

// Stream-per-row helper: rngs[i] seeded from (seed, keys..., i).
std::vector<Rng> make_streams(std::uint64_t seed, std::initializer_list<std::uint64_t> keys, std::size_t n);

}  // namespace lac
