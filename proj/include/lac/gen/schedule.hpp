#pragma once

#include "lac/autodiff/tensor.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace lac {

enum class ScheduleKind { Ddpm, FlowOt };

std::string_view to_string(ScheduleKind k);
ScheduleKind parse_schedule_kind(std::string_view s);

struct ScheduleParams {
    // ddpm: linear betas over a fine training grid, subsampled to T steps.
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int train_steps = 1000;
    // flow-ot: optional explicit grid in rollout order (1 -> 0); uniform when empty.
    std::vector<double> flow_timesteps;
};

// Discretised forward process.
//
// Two index conventions are used:
//  * rollout step k = 0..T, k = 0 is pure noise and k = T is data;
//  * noise level j = T - k, j = 0 is clean data.
// `alphas` and `alpha_bars` are indexed by level (alpha_bars[0] == 1);
// `timesteps` and `delta_t` by rollout step.
struct NoiseSchedule {
    ScheduleKind kind = ScheduleKind::FlowOt;
    int steps = 0;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
    std::vector<double> timesteps;
    std::vector<double> delta_t;
    ScheduleParams params;

    [[nodiscard]] int level(int k) const { return steps - k; }
    [[nodiscard]] double timestep(int k) const { return timesteps.at(static_cast<std::size_t>(k)); }
};

NoiseSchedule make_schedule(ScheduleKind kind, int steps, const ScheduleParams& params = {});

// Closed-form interpolant at noise level j (0 = clean):
// ddpm sqrt(ab) x0 + sqrt(1 - ab) eps; flow (1 - t) x0 + t eps.
Matrix forward_noise(const Matrix& x0, int level, const Matrix& eps, const NoiseSchedule& sched);

}  // namespace lac
