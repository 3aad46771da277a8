#include "lac/gen/sampler.hpp"

#include "lac/error.hpp"
#include "lac/parallel.hpp"

#include <cmath>
#include <numbers>

namespace lac {

namespace {

void check_step(const NoiseSchedule& sched, int k) {
    if (k < 0 || k >= sched.steps) {
        throw ShapeError("rollout step " + std::to_string(k) + " outside [0, " + std::to_string(sched.steps) + ")");
    }
}

}  // namespace

StepCoefficients step_coefficients(const NoiseSchedule& sched, int k) {
    check_step(sched, k);
    if (sched.kind == ScheduleKind::FlowOt) {
        return {1.0, -sched.delta_t[static_cast<std::size_t>(k)]};
    }
    const int j = sched.level(k);
    const double ab = sched.alpha_bars[static_cast<std::size_t>(j)];
    const double ab_next = sched.alpha_bars[static_cast<std::size_t>(j - 1)];
    if (!(ab > 0.0)) {
        throw DivergenceError("DDIM step with alpha_bar = 0 at step " + std::to_string(k));
    }
    const double ratio = std::sqrt(ab_next) / std::sqrt(ab);
    return {ratio, std::sqrt(1.0 - ab_next) - ratio * std::sqrt(1.0 - ab)};
}

Matrix deterministic_step(const Matrix& z, const Matrix& pred, int k, const NoiseSchedule& sched) {
    if (shape_of(z) != shape_of(pred)) {
        throw ShapeError("deterministic_step: latent " + to_string(shape_of(z)) + " vs prediction " +
                         to_string(shape_of(pred)));
    }
    const StepCoefficients c = step_coefficients(sched, k);
    // Kept as two materialised products so the recorded PPO graph (scale,
    // scale, add) reproduces it bit for bit.
    Matrix zs = c.z_coef * z;
    Matrix ps = c.pred_coef * pred;
    return zs + ps;
}

Matrix predict_x0(const Matrix& z, const Matrix& eps_hat, int k, const NoiseSchedule& sched) {
    check_step(sched, k);
    const double ab = sched.alpha_bars[static_cast<std::size_t>(sched.level(k))];
    if (!(ab > 0.0)) {
        throw DivergenceError("x0 prediction with alpha_bar = 0");
    }
    return (z - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
}

double step_sigma(const NoiseSchedule& sched, int k, double noise_level) {
    check_step(sched, k);
    if (noise_level < 0.0) {
        throw ConfigError("noise level must be >= 0");
    }
    if (k == sched.steps - 1) {
        return 0.0;
    }
    if (sched.kind == ScheduleKind::FlowOt) {
        return noise_level * std::sqrt(sched.delta_t[static_cast<std::size_t>(k)]);
    }
    const int j = sched.level(k);
    const double ab = sched.alpha_bars[static_cast<std::size_t>(j)];
    const double ab_next = sched.alpha_bars[static_cast<std::size_t>(j - 1)];
    if (1.0 - ab <= 0.0) {
        return 0.0;
    }
    const double var = (1.0 - ab_next) / (1.0 - ab) * (1.0 - ab / ab_next);
    return noise_level * std::sqrt(std::max(0.0, var));
}

double gaussian_logprob(const RowVector& x, const RowVector& mean, double sigma) {
    const double d = static_cast<double>(x.size());
    return -0.5 * (x - mean).squaredNorm() / (sigma * sigma) - d * std::log(sigma) -
           0.5 * d * std::log(2.0 * std::numbers::pi);
}

StepResult stochastic_step(const Matrix& z, const Matrix& pred, int k, const NoiseSchedule& sched, double sigma,
                           std::span<Rng> rngs) {
    if (sigma < 0.0) {
        throw ConfigError("transition std must be >= 0");
    }
    if (static_cast<Eigen::Index>(rngs.size()) != z.rows()) {
        throw ShapeError("stochastic_step needs one noise stream per row");
    }
    StepResult r{deterministic_step(z, pred, k, sched), Vector::Zero(z.rows())};
    if (sigma == 0.0) {
        return r;
    }
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        RowVector mean = r.z.row(i);
        for (Eigen::Index c = 0; c < z.cols(); ++c) {
            r.z(i, c) = mean(c) + sigma * rngs[static_cast<std::size_t>(i)].normal();
        }
        r.logprob(i) = gaussian_logprob(r.z.row(i), mean, sigma);
    }
    return r;
}

std::vector<Rng> make_streams(std::uint64_t seed, std::initializer_list<std::uint64_t> keys, std::size_t n) {
    std::vector<Rng> out;
    out.reserve(n);
    std::vector<std::uint64_t> k(keys);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t h = derive_seed(seed, {});
        for (std::uint64_t key : k) {
            h = derive_seed(h, {key});
        }
        out.emplace_back(derive_seed(h, {static_cast<std::uint64_t>(i)}));
    }
    return out;
}

namespace {

void check_latents(const Matrix& z, int k) {
    if (!z.allFinite()) {
        throw DivergenceError("non-finite latent at rollout step " + std::to_string(k));
    }
}

void rollout_chunk(const PolicyNet& policy, const std::vector<int>& ys, std::size_t begin, std::size_t end,
                   const NoiseSchedule& sched, const RolloutOptions& opt, std::span<Rng> rngs,
                   std::vector<Trajectory>& out) {
    const auto rows = static_cast<Eigen::Index>(end - begin);
    const int d = policy.cfg.dim;
    const int T = sched.steps;
    std::vector<int> y(ys.begin() + static_cast<std::ptrdiff_t>(begin), ys.begin() + static_cast<std::ptrdiff_t>(end));
    std::span<Rng> local = rngs.subspan(begin, end - begin);

    Matrix z(rows, d);
    if (opt.z_init) {
        z = opt.z_init->middleRows(static_cast<Eigen::Index>(begin), rows);
    } else {
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (int c = 0; c < d; ++c) {
                z(i, c) = local[static_cast<std::size_t>(i)].normal();
            }
        }
    }
    for (std::size_t i = begin; i < end; ++i) {
        Trajectory& tr = out[i];
        tr.y = ys[i];
        tr.latents.resize(T + 1, d);
        tr.means.resize(T, d);
        tr.logprobs = Vector::Zero(T);
        tr.sigmas = Vector::Zero(T);
        tr.latents.row(0) = z.row(static_cast<Eigen::Index>(i - begin));
    }
    for (int k = 0; k < T; ++k) {
        const Conditioning c = uniform_conditioning(rows, sched.timestep(k), y);
        const Matrix pred = policy_predict(policy, z, c, opt.cfg_scale);
        const double sigma = step_sigma(sched, k, opt.noise_level);
        StepResult step = stochastic_step(z, pred, k, sched, sigma, local);
        const Matrix mean = deterministic_step(z, pred, k, sched);
        check_latents(step.z, k);
        for (Eigen::Index i = 0; i < rows; ++i) {
            Trajectory& tr = out[begin + static_cast<std::size_t>(i)];
            tr.means.row(k) = mean.row(i);
            tr.logprobs(k) = step.logprob(i);
            tr.sigmas(k) = sigma;
            tr.latents.row(k + 1) = step.z.row(i);
        }
        z = std::move(step.z);
    }
}

}  // namespace

std::vector<Trajectory> sample_trajectories(const PolicyNet& policy, const std::vector<int>& ys,
                                            const NoiseSchedule& sched, const RolloutOptions& opt,
                                            std::span<Rng> rngs) {
    if (rngs.size() != ys.size()) {
        throw ShapeError("sample_trajectories needs one stream per trajectory");
    }
    if (opt.z_init && (opt.z_init->rows() != static_cast<Eigen::Index>(ys.size()) || opt.z_init->cols() != policy.cfg.dim)) {
        throw ShapeError("sample_trajectories: initial latents need one row per label");
    }
    if (opt.cfg_scale < 0.0) {
        throw ConfigError("cfg scale must be >= 0");
    }
    std::vector<Trajectory> out(ys.size());
    const std::size_t chunks = (ys.size() + kChunkRows - 1) / kChunkRows;
    parallel_for(chunks, [&](std::size_t c) {
        const std::size_t begin = c * kChunkRows;
        const std::size_t end = std::min(ys.size(), begin + kChunkRows);
        rollout_chunk(policy, ys, begin, end, sched, opt, rngs, out);
    });
    return out;
}

Trajectory sample_trajectory(const PolicyNet& policy, int y, const NoiseSchedule& sched, const RolloutOptions& opt,
                             Rng& rng) {
    std::vector<int> ys{y};
    return std::move(sample_trajectories(policy, ys, sched, opt, std::span<Rng>(&rng, 1)).front());
}

Matrix sample_deterministic(const PolicyNet& policy, const Matrix& z_init, const std::vector<int>& ys,
                            const NoiseSchedule& sched, double cfg_scale) {
    Matrix z = z_init;
    for (int k = 0; k < sched.steps; ++k) {
        const Conditioning c = uniform_conditioning(z.rows(), sched.timestep(k), ys);
        z = deterministic_step(z, policy_predict(policy, z, c, cfg_scale), k, sched);
        check_latents(z, k);
    }
    return z;
}

}  // namespace lac
