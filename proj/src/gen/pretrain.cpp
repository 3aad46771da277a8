#include "lac/gen/pretrain.hpp"

#include "lac/autodiff/optim.hpp"
#include "lac/error.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace lac {

SampleSource mixture_source(const TargetMixture& m) {
    return [m](int n, Rng& rng) { return sample_mixture(m, n, rng); };
}

double denoising_loss(const PolicyNet& policy, const NoiseSchedule& sched, const Batch& batch, Rng& rng,
                      double cond_dropout, ParamSet* grad) {
    const Eigen::Index n = batch.x0.rows();
    const int d = policy.cfg.dim;
    if (batch.x0.cols() != d) {
        throw ShapeError("pretrain: data dimension " + std::to_string(batch.x0.cols()) + " vs policy " +
                         std::to_string(d));
    }
    Matrix eps = gaussian_matrix(static_cast<int>(n), d, 1.0, rng);
    Matrix z(n, d);
    Matrix target(n, d);
    Conditioning c{Matrix(n, 1), batch.y};
    for (Eigen::Index i = 0; i < n; ++i) {
        if (sched.kind == ScheduleKind::FlowOt) {
            // logit-normal times put more weight on the middle of the path
            const double t = 1.0 / (1.0 + std::exp(-rng.normal()));
            c.t(i, 0) = t;
            z.row(i) = (1.0 - t) * batch.x0.row(i) + t * eps.row(i);
            target.row(i) = eps.row(i) - batch.x0.row(i);
        } else {
            const int j = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.steps)));
            const double ab = sched.alpha_bars[static_cast<std::size_t>(j)];
            c.t(i, 0) = sched.timestep(sched.steps - j);
            z.row(i) = std::sqrt(ab) * batch.x0.row(i) + std::sqrt(1.0 - ab) * eps.row(i);
            target.row(i) = eps.row(i);
        }
        if (rng.uniform() < cond_dropout) {
            c.y[static_cast<std::size_t>(i)] = policy.cfg.null_class();
        }
    }
    Tape tape;
    Bound b(tape, policy.params, grad != nullptr);
    Var diff = tape.sub(policy_forward(b, policy.cfg, tape.constant(z), c), tape.constant(target));
    Var loss = tape.scale(tape.sum(tape.mul(diff, diff)), 1.0 / static_cast<double>(n));
    if (grad != nullptr) {
        tape.backward(loss);
        *grad = b.grads();
    }
    return loss.scalar();
}

PretrainResult pretrain_base(const SampleSource& data, const NetConfig& net, const NoiseSchedule& sched,
                             const PretrainConfig& cfg) {
    if (cfg.steps < 0 || cfg.batch < 1 || !(cfg.lr > 0.0)) {
        throw ConfigError("pretrain needs steps >= 0, batch >= 1 and lr > 0");
    }
    Rng init_rng(cfg.seed, {0x1});
    PretrainResult r{PolicyNet::init(net, sched.kind, cfg.cond_dropout, init_rng), {}};
    if (!(cfg.ema >= 0.0 && cfg.ema < 1.0)) {
        throw ConfigError("pretrain ema must lie in [0, 1)");
    }
    AdamW opt(r.policy.params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0});
    ParamSet live = r.policy.params;
    for (int s = 0; s < cfg.steps; ++s) {
        Rng rng(cfg.seed, {0x2, static_cast<std::uint64_t>(s)});
        // cosine decay to 10% of the base rate
        const double frac = static_cast<double>(s) / std::max(1, cfg.steps);
        opt.config().lr = cfg.lr * (0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * frac)));
        Batch batch = data(cfg.batch, rng);
        ParamSet g;
        PolicyNet view = r.policy;
        view.params = live;
        const double loss = denoising_loss(view, sched, batch, rng, cfg.cond_dropout, &g);
        if (!std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "pretrain loss became non-finite at step " << s;
            if (!r.losses.empty()) {
                msg << " (previous loss " << r.losses.back() << ")";
            }
            msg << "; max |param| " << [&] {
                double m = 0.0;
                for (const auto& e : live.entries()) {
                    m = std::max(m, e.value.cwiseAbs().maxCoeff());
                }
                return m;
            }();
            throw DivergenceError(msg.str());
        }
        r.losses.push_back(loss);
        opt.step(live, g);
        if (cfg.ema > 0.0) {
            r.policy.params.scale(cfg.ema);
            r.policy.params.axpy(1.0 - cfg.ema, live);
        } else {
            r.policy.params = live;
        }
    }
    return r;
}

}  // namespace lac
