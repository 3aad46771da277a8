#include "lac/steer/steer.hpp"

#include "lac/error.hpp"
#include "lac/gen/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lac {

Matrix guide_ddim(const Matrix& eps_hat, const Matrix& g, double eta, double alpha_bar) {
    if (shape_of(eps_hat) != shape_of(g)) {
        throw ShapeError("guide_ddim: shape mismatch");
    }
    if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) {
        throw ConfigError("guide_ddim: alpha_bar outside [0, 1]");
    }
    if (eta == 0.0) {
        return eps_hat;
    }
    return eps_hat - (eta * std::sqrt(1.0 - alpha_bar)) * g;
}

Matrix guide_flow(const Matrix& v_hat, const Matrix& g, double eta) {
    if (shape_of(v_hat) != shape_of(g)) {
        throw ShapeError("guide_flow: shape mismatch");
    }
    if (eta == 0.0) {
        return v_hat;
    }
    return v_hat + eta * g;
}

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::None: return "none";
        case Strategy::Guide: return "guide";
        case Strategy::Bon: return "bon";
        case Strategy::Smc: return "smc";
        case Strategy::GuideBon: return "guide+bon";
    }
    return "?";
}

Strategy parse_strategy(const std::string& s) {
    for (Strategy x : {Strategy::None, Strategy::Guide, Strategy::Bon, Strategy::Smc, Strategy::GuideBon}) {
        if (to_string(x) == s) {
            return x;
        }
    }
    throw ConfigError("unknown steering mode '" + s + "' (none, guide, bon, smc, guide+bon, all)");
}

std::string to_string(SmcScorerKind s) { return s == SmcScorerKind::Critic ? "critic" : "push-to-x0"; }

SmcScorerKind parse_smc_scorer(const std::string& s) {
    if (s == "critic") return SmcScorerKind::Critic;
    if (s == "push-to-x0") return SmcScorerKind::PushToX0;
    throw ConfigError("unknown smc scorer '" + s + "' (critic, push-to-x0)");
}

std::string to_string(Resampling r) { return r == Resampling::Multinomial ? "multinomial" : "systematic"; }

Resampling parse_resampling(const std::string& s) {
    if (s == "multinomial") return Resampling::Multinomial;
    if (s == "systematic") return Resampling::Systematic;
    throw ConfigError("unknown resampling scheme '" + s + "' (multinomial, systematic)");
}

void SteerConfig::validate() const {
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("steer.eta must be a finite value >= 0");
    if (!(tau > 0.0)) throw ConfigError("steer.tau must be > 0");
    if (n < 1) throw ConfigError("steer.n must be >= 1");
    if (K < 1) throw ConfigError("steer.K must be >= 1");
    if (!(noise_level >= 0.0)) throw ConfigError("steer.noise_level must be >= 0");
    if (!(cfg_scale >= 0.0)) throw ConfigError("steer.cfg_scale must be >= 0");
}

namespace {

void check_latents(const Matrix& z, int k) {
    if (!z.allFinite()) {
        throw DivergenceError("non-finite latent at steering step " + std::to_string(k));
    }
}

struct ValueGrad {
    Matrix value;
    Matrix grad;
};

ValueGrad value_and_grad(const CriticNet& critic, const Matrix& z, const Conditioning& c, int head, bool want_grad) {
    Tape tape;
    Bound b(tape, critic.params, false);
    Var zin = want_grad ? tape.variable(z) : tape.constant(z);
    Var v = critic_head_forward(b, critic, zin, c, head);
    ValueGrad out{v.value(), {}};
    if (want_grad) {
        tape.backward(tape.sum(v));
        out.grad = tape.grad(zin);
    }
    return out;
}

Matrix draw_noise(Rng& rng, int rows, int d) {
    Matrix z(rows, d);
    for (int i = 0; i < rows; ++i) {
        for (int c = 0; c < d; ++c) {
            z(i, c) = rng.normal();
        }
    }
    return z;
}

}  // namespace

GuidedBatch guided_sample_batch(const PolicyNet& policy, const CriticNet* critic, int head, const std::vector<int>& ys,
                                const Matrix& z_init, const NoiseSchedule& sched, double eta, double cfg_scale) {
    if (eta < 0.0) {
        throw ConfigError("guidance scale must be >= 0");
    }
    if (eta > 0.0 && critic == nullptr) {
        throw ConfigError("critic guidance needs a trained critic");
    }
    const int T = sched.steps;
    GuidedBatch out;
    if (critic) {
        out.values.resize(z_init.rows(), T);
    }
    Matrix z = z_init;
    for (int k = 0; k < T; ++k) {
        const Conditioning c = uniform_conditioning(z.rows(), sched.timestep(k), ys);
        Matrix pred = policy_predict(policy, z, c, cfg_scale);
        if (critic) {
            ValueGrad vg = value_and_grad(*critic, z, c, head, eta > 0.0);
            out.values.col(k) = vg.value.col(0);
            if (eta > 0.0) {
                if (sched.kind == ScheduleKind::Ddpm) {
                    pred = guide_ddim(pred, vg.grad, eta, sched.alpha_bars.at(static_cast<std::size_t>(sched.level(k))));
                } else {
                    // the Euler step is z - dt * v, so ascent on V is -grad in velocity terms
                    pred = guide_flow(pred, -vg.grad, eta);
                }
            }
        }
        z = deterministic_step(z, pred, k, sched);
        check_latents(z, k);
    }
    out.x0 = std::move(z);
    return out;
}

GuidedSample guided_sample(const PolicyNet& policy, const CriticNet* critic, int head, int y,
                           const NoiseSchedule& sched, double eta, Rng& rng, double cfg_scale) {
    Matrix z0 = draw_noise(rng, 1, policy.cfg.dim);
    GuidedBatch b = guided_sample_batch(policy, critic, head, {y}, z0, sched, eta, cfg_scale);
    GuidedSample s;
    s.x0 = b.x0.row(0).transpose();
    if (b.values.size() > 0) {
        s.values = b.values.row(0).transpose();
    }
    return s;
}

ScoreFn reward_scorer(const RewardSpec& spec, const RewardContext& ctx) {
    return [spec, ctx](const Vector& x0, int y) { return evaluate(x0, y, spec, ctx); };
}

int select_best(const std::vector<double>& scores) {
    int best = -1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::isfinite(scores[i]) && (best < 0 || scores[i] > scores[static_cast<std::size_t>(best)])) {
            best = static_cast<int>(i);
        }
    }
    if (best < 0) {
        throw DivergenceError("no candidate has a finite score");
    }
    return best;
}

namespace {

BonResult pick(const Matrix& x0, const ScoreFn& score, int y) {
    BonResult r;
    for (Eigen::Index i = 0; i < x0.rows(); ++i) {
        r.scores.push_back(score(x0.row(i).transpose(), y));
    }
    r.index = select_best(r.scores);
    r.score = r.scores[static_cast<std::size_t>(r.index)];
    r.x0 = x0.row(r.index).transpose();
    return r;
}

}  // namespace

BonResult best_of_n(const PolicyNet& policy, const ScoreFn& score, int y, int n, const NoiseSchedule& sched, Rng& rng,
                    double cfg_scale) {
    if (n < 1) {
        throw ConfigError("best-of-n needs n >= 1");
    }
    Matrix z0 = draw_noise(rng, n, policy.cfg.dim);
    return pick(sample_deterministic(policy, z0, std::vector<int>(static_cast<std::size_t>(n), y), sched, cfg_scale),
                score, y);
}

BonResult guided_bon(const PolicyNet& policy, const CriticNet* critic, int head, const ScoreFn& score, int y, int n,
                     double eta, const NoiseSchedule& sched, Rng& rng, double cfg_scale) {
    if (n < 1) {
        throw ConfigError("best-of-n needs n >= 1");
    }
    Matrix z0 = draw_noise(rng, n, policy.cfg.dim);
    GuidedBatch b = guided_sample_batch(policy, critic, head, std::vector<int>(static_cast<std::size_t>(n), y), z0,
                                        sched, eta, cfg_scale);
    return pick(b.x0, score, y);
}

SmcScorer critic_scorer(const CriticNet& critic, int head, int y, const NoiseSchedule& sched, ScoreFn terminal) {
    SmcScorer s;
    s.intermediate = [&critic, head, y, &sched](const Matrix& z, int k) -> Vector {
        const Conditioning c =
            uniform_conditioning(z.rows(), sched.timestep(k), std::vector<int>(static_cast<std::size_t>(z.rows()), y));
        return value(critic, z, c).col(head);
    };
    s.terminal = std::move(terminal);
    return s;
}

SmcScorer push_to_x0_scorer(const PolicyNet& policy, int y, const NoiseSchedule& sched, ScoreFn terminal,
                            double cfg_scale) {
    SmcScorer s;
    s.intermediate = [&policy, y, &sched, terminal, cfg_scale](const Matrix& z_in, int k) -> Vector {
        const std::vector<int> ys(static_cast<std::size_t>(z_in.rows()), y);
        Matrix z = z_in;
        for (int j = k; j < sched.steps; ++j) {
            z = deterministic_step(z, policy_predict(policy, z, uniform_conditioning(z.rows(), sched.timestep(j), ys),
                                                     cfg_scale),
                                   j, sched);
        }
        Vector f(z.rows());
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            f(i) = terminal(z.row(i).transpose(), y);
        }
        return f;
    };
    s.terminal = std::move(terminal);
    return s;
}

Vector smc_weights(const Vector& scores, double tau) {
    if (!(tau > 0.0)) {
        throw ConfigError("smc temperature must be > 0");
    }
    double top = -std::numeric_limits<double>::infinity();
    for (double f : scores) {
        if (std::isfinite(f)) {
            top = std::max(top, f);
        }
    }
    if (!std::isfinite(top)) {
        throw DivergenceError("smc: every particle score is non-finite");
    }
    Vector w(scores.size());
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
        w(i) = std::isfinite(scores(i)) ? std::exp((scores(i) - top) / tau) : 0.0;
    }
    return w / w.sum();
}

std::vector<int> resample(const Vector& weights, Rng& rng, Resampling scheme) {
    const auto K = static_cast<int>(weights.size());
    if (K < 1) {
        throw ConfigError("resampling needs at least one particle");
    }
    std::vector<double> cdf(static_cast<std::size_t>(K));
    double acc = 0.0;
    for (int i = 0; i < K; ++i) {
        acc += weights(i);
        cdf[static_cast<std::size_t>(i)] = acc;
    }
    auto find = [&](double u) {
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u * acc);
        return static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), K - 1));
    };
    std::vector<int> out(static_cast<std::size_t>(K));
    if (scheme == Resampling::Multinomial) {
        for (int i = 0; i < K; ++i) {
            out[static_cast<std::size_t>(i)] = find(rng.uniform());
        }
    } else {
        const double u0 = rng.uniform() / K;
        for (int i = 0; i < K; ++i) {
            out[static_cast<std::size_t>(i)] = find(u0 + static_cast<double>(i) / K);
        }
    }
    return out;
}

SmcResult smc_sample(const PolicyNet& policy, const SmcScorer& scorer, int y, const SteerConfig& cfg,
                     const NoiseSchedule& sched, std::uint64_t seed) {
    cfg.validate();
    const int K = cfg.K;
    const int T = sched.steps;
    const std::vector<int> ys(static_cast<std::size_t>(K), y);
    std::vector<Rng> rngs;
    for (int i = 0; i < K; ++i) {
        rngs.emplace_back(seed, std::initializer_list<std::uint64_t>{static_cast<std::uint64_t>(i)});
    }
    Rng resample_rng(seed, {0x7265736d});

    ParticleSet p{Matrix(K, policy.cfg.dim), 0, Vector::Constant(K, 1.0 / K)};
    for (int i = 0; i < K; ++i) {
        for (int c = 0; c < policy.cfg.dim; ++c) {
            p.z(i, c) = rngs[static_cast<std::size_t>(i)].normal();
        }
    }
    SmcResult out;
    Vector f;
    for (int k = 0; k < T; ++k) {
        const Conditioning c = uniform_conditioning(K, sched.timestep(k), ys);
        const Matrix pred = policy_predict(policy, p.z, c, cfg.cfg_scale);
        StepResult step = stochastic_step(p.z, pred, k, sched, step_sigma(sched, k, cfg.noise_level), rngs);
        check_latents(step.z, k);
        p.z = std::move(step.z);
        p.k = k + 1;
        if (p.k < T) {
            f = scorer.intermediate(p.z, p.k);
        } else {
            f.resize(K);
            for (int i = 0; i < K; ++i) {
                f(i) = scorer.terminal(p.z.row(i).transpose(), y);
            }
        }
        p.weights = smc_weights(f, cfg.tau);
        out.weights.push_back(p.weights);
        if (p.k < T && K > 1) {
            const std::vector<int> anc = resample(p.weights, resample_rng, cfg.resampling);
            Matrix z(K, p.z.cols());
            for (int i = 0; i < K; ++i) {
                z.row(i) = p.z.row(anc[static_cast<std::size_t>(i)]);
            }
            p.z = std::move(z);
        }
    }
    std::vector<double> scores(f.data(), f.data() + f.size());
    const int best = select_best(scores);
    out.x0 = p.z.row(best).transpose();
    out.score = scores[static_cast<std::size_t>(best)];
    return out;
}

StrategyReport run_strategy(Strategy s, const PolicyNet& policy, const CriticNet* critic, const std::string& head_id,
                            const RewardSpec& spec, const RewardContext& ctx, const std::vector<int>& ys,
                            const NoiseSchedule& sched, const SteerConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const bool needs_critic =
        s == Strategy::Guide || s == Strategy::GuideBon || (s == Strategy::Smc && cfg.scorer == SmcScorerKind::Critic);
    if (needs_critic && critic == nullptr) {
        throw ConfigError("steering mode " + to_string(s) + " needs a critic");
    }
    const int head = critic ? critic->head_for(head_id) : 0;
    const ScoreFn score = reward_scorer(spec, ctx);
    const int P = static_cast<int>(ys.size());
    const int d = policy.cfg.dim;

    StrategyReport r;
    r.strategy = s;
    r.prompts = P;
    r.samples_per_prompt = (s == Strategy::Bon || s == Strategy::GuideBon) ? cfg.n : (s == Strategy::Smc ? cfg.K : 1);
    r.scores.resize(static_cast<std::size_t>(P));

    if (s == Strategy::Smc) {
        for (int p = 0; p < P; ++p) {
            const int y = ys[static_cast<std::size_t>(p)];
            SmcScorer sc = cfg.scorer == SmcScorerKind::Critic
                               ? critic_scorer(*critic, head, y, sched, score)
                               : push_to_x0_scorer(policy, y, sched, score, cfg.cfg_scale);
            r.scores[static_cast<std::size_t>(p)] =
                smc_sample(policy, sc, y, cfg, sched, derive_seed(seed, {0x736d63, static_cast<std::uint64_t>(p)})).score;
        }
    } else {
        const int m = r.samples_per_prompt;
        Matrix z0(static_cast<Eigen::Index>(P) * m, d);
        std::vector<int> rows_y(static_cast<std::size_t>(P * m));
        for (int p = 0; p < P; ++p) {
            Rng rng(seed, {static_cast<std::uint64_t>(p)});
            z0.middleRows(static_cast<Eigen::Index>(p) * m, m) = draw_noise(rng, m, d);
            std::fill_n(rows_y.begin() + static_cast<std::ptrdiff_t>(p) * m, m, ys[static_cast<std::size_t>(p)]);
        }
        const double eta = (s == Strategy::Guide || s == Strategy::GuideBon) ? cfg.eta : 0.0;
        const Matrix x0 =
            eta > 0.0 ? guided_sample_batch(policy, critic, head, rows_y, z0, sched, eta, cfg.cfg_scale).x0
                      : sample_deterministic(policy, z0, rows_y, sched, cfg.cfg_scale);
        for (int p = 0; p < P; ++p) {
            const int y = ys[static_cast<std::size_t>(p)];
            r.scores[static_cast<std::size_t>(p)] =
                pick(x0.middleRows(static_cast<Eigen::Index>(p) * m, m), score, y).score;
        }
    }
    double sum = 0.0;
    for (double v : r.scores) sum += v;
    r.mean = P > 0 ? sum / P : 0.0;
    double ss = 0.0;
    for (double v : r.scores) ss += (v - r.mean) * (v - r.mean);
    r.std = P > 0 ? std::sqrt(ss / P) : 0.0;
    return r;
}

}  // namespace lac
