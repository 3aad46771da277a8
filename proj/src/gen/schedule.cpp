#include "lac/gen/schedule.hpp"

#include "lac/error.hpp"

#include <cmath>

namespace lac {

std::string_view to_string(ScheduleKind k) { return k == ScheduleKind::Ddpm ? "ddpm" : "flow-ot"; }

ScheduleKind parse_schedule_kind(std::string_view s) {
    if (s == "ddpm") {
        return ScheduleKind::Ddpm;
    }
    if (s == "flow-ot" || s == "flow") {
        return ScheduleKind::FlowOt;
    }
    throw ConfigError("unknown schedule kind '" + std::string(s) + "' (expected ddpm or flow-ot)");
}

namespace {

void fill_ddpm(NoiseSchedule& s) {
    const auto& p = s.params;
    if (p.train_steps < s.steps) {
        throw ConfigError("ddpm train_steps must be >= sampling steps");
    }
    if (!(p.beta_start >= 0.0) || !(p.beta_end < 1.0) || p.beta_end < p.beta_start) {
        throw ConfigError("ddpm betas must satisfy 0 <= beta_start <= beta_end < 1");
    }
    std::vector<double> fine(static_cast<std::size_t>(p.train_steps) + 1, 1.0);
    for (int i = 1; i <= p.train_steps; ++i) {
        const double frac = p.train_steps == 1 ? 0.0 : static_cast<double>(i - 1) / (p.train_steps - 1);
        const double beta = p.beta_start + frac * (p.beta_end - p.beta_start);
        fine[static_cast<std::size_t>(i)] = fine[static_cast<std::size_t>(i - 1)] * (1.0 - beta);
    }
    s.alpha_bars.assign(static_cast<std::size_t>(s.steps) + 1, 1.0);
    s.alphas.assign(static_cast<std::size_t>(s.steps) + 1, 1.0);
    for (int j = 1; j <= s.steps; ++j) {
        const auto idx = static_cast<std::size_t>(std::llround(static_cast<double>(j) * p.train_steps / s.steps));
        s.alpha_bars[static_cast<std::size_t>(j)] = fine[idx];
    }
    // Per-step alphas consistent with the product: ab_j = prod_{s<=j} alpha_s.
    for (int j = 1; j <= s.steps; ++j) {
        const auto u = static_cast<std::size_t>(j);
        s.alphas[u] = s.alpha_bars[u] / s.alpha_bars[u - 1];
        s.alpha_bars[u] = s.alpha_bars[u - 1] * s.alphas[u];
    }
    s.timesteps.resize(static_cast<std::size_t>(s.steps) + 1);
    for (int k = 0; k <= s.steps; ++k) {
        s.timesteps[static_cast<std::size_t>(k)] = static_cast<double>(s.steps - k) / s.steps;
    }
}

void fill_flow(NoiseSchedule& s) {
    const auto n = static_cast<std::size_t>(s.steps) + 1;
    if (!s.params.flow_timesteps.empty()) {
        const auto& g = s.params.flow_timesteps;
        if (g.size() != n) {
            throw ConfigError("flow timestep grid needs T + 1 entries");
        }
        if (g.front() != 1.0 || g.back() != 0.0) {
            throw ConfigError("flow timestep grid must run from 1 to 0");
        }
        for (std::size_t k = 1; k < n; ++k) {
            if (!(g[k] < g[k - 1])) {
                throw ConfigError("flow timestep grid must be strictly decreasing");
            }
        }
        s.timesteps = g;
    } else {
        s.timesteps.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            s.timesteps[k] = 1.0 - static_cast<double>(k) / s.steps;
        }
        s.timesteps.back() = 0.0;
    }
    // Flow has no alpha schedule; keep the vectors sized for uniform access.
    s.alphas.assign(n, 1.0);
    s.alpha_bars.assign(n, 1.0);
}

}  // namespace

NoiseSchedule make_schedule(ScheduleKind kind, int steps, const ScheduleParams& params) {
    if (steps < 2) {
        throw ConfigError("schedule needs T >= 2, got " + std::to_string(steps));
    }
    NoiseSchedule s;
    s.kind = kind;
    s.steps = steps;
    s.params = params;
    if (kind == ScheduleKind::Ddpm) {
        fill_ddpm(s);
    } else {
        fill_flow(s);
    }
    s.delta_t.resize(static_cast<std::size_t>(steps));
    for (int k = 0; k < steps; ++k) {
        const auto u = static_cast<std::size_t>(k);
        s.delta_t[u] = s.timesteps[u] - s.timesteps[u + 1];
    }
    return s;
}

Matrix forward_noise(const Matrix& x0, int level, const Matrix& eps, const NoiseSchedule& sched) {
    if (shape_of(x0) != shape_of(eps)) {
        throw ShapeError("forward_noise: x0 " + to_string(shape_of(x0)) + " vs eps " + to_string(shape_of(eps)));
    }
    if (level < 0 || level > sched.steps) {
        throw ShapeError("forward_noise: level out of range");
    }
    if (sched.kind == ScheduleKind::Ddpm) {
        const double ab = sched.alpha_bars[static_cast<std::size_t>(level)];
        return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
    }
    const double t = sched.timesteps[static_cast<std::size_t>(sched.steps - level)];
    return (1.0 - t) * x0 + t * eps;
}

}  // namespace lac
