#include "lac/rl/trainer.hpp"

#include "lac/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace lac {

namespace {

constexpr std::uint64_t kTagPpo = 0x70706f;
constexpr std::uint64_t kTagVp = 0x7670;

}  // namespace

std::string to_string(Baseline b) {
    switch (b) {
        case Baseline::Ours:
            return "ours";
        case Baseline::Grpo:
            return "grpo";
        case Baseline::Ddpo:
            return "ddpo";
    }
    return "?";
}

Baseline parse_baseline(const std::string& s) {
    if (s == "ours") {
        return Baseline::Ours;
    }
    if (s == "grpo") {
        return Baseline::Grpo;
    }
    if (s == "ddpo") {
        return Baseline::Ddpo;
    }
    throw ConfigError("unknown baseline '" + s + "' (ours, grpo, ddpo)");
}

void TrainConfig::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw ConfigError(std::string("train.") + name + " must be > 0");
        }
    };
    positive(clip_eps, "clip_eps");
    positive(adv_clip, "adv_clip");
    positive(value_clip, "value_clip");
    positive(policy_lr, "policy_lr");
    positive(value_lr, "value_lr");
    if (!(gamma > 0.0 && gamma <= 1.0) || !(lam >= 0.0 && lam <= 1.0)) {
        throw ConfigError("train.gamma must lie in (0, 1] and train.lam in [0, 1]");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
    }
    if (weight_decay < 0.0 || kl_coef < 0.0 || noise_level < 0.0 || cfg_scale < 0.0) {
        throw ConfigError("weight_decay, kl_coef, noise_level and cfg_scale must be >= 0");
    }
    if (updates_per_iter < 1 || iterations < 0 || batch < 1 || vp_iters < 0) {
        throw ConfigError("train.updates_per_iter and train.batch must be >= 1, iterations and vp_iters >= 0");
    }
    if (batch < updates_per_iter) {
        throw ConfigError("train.batch must be at least train.updates_per_iter");
    }
    if (baseline == Baseline::Grpo) {
        if (group_size < 2) {
            throw ConfigError("grpo needs train.group_size >= 2");
        }
        if (batch % group_size != 0) {
            throw ConfigError("train.batch must be a multiple of train.group_size for grpo");
        }
    }
    for (double r : ratios) {
        positive(r, "ratios");
    }
    if (!(max_skip_frac >= 0.0 && max_skip_frac <= 1.0)) {
        throw ConfigError("train.max_skip_frac must lie in [0, 1]");
    }
}

TrainerState make_trainer_state(const PolicyNet& base, const RewardSetup& rewards, const TrainConfig& cfg,
                                const CriticFlags& flags, std::uint64_t seed) {
    cfg.validate();
    if (rewards.registry.size() == 0) {
        throw ConfigError("training needs at least one registered reward");
    }
    if (!cfg.ratios.empty() && cfg.ratios.size() != rewards.registry.size()) {
        throw ConfigError("train.ratios needs one entry per reward");
    }
    if (rewards.ctx.mixture.num_classes() != base.cfg.num_classes || rewards.ctx.mixture.dim != base.cfg.dim) {
        throw ConfigError("policy classes/dimension do not match the target distribution");
    }
    TrainerState s;
    s.policy = base;
    s.reference = base;
    s.policy_opt = AdamW(base.params, AdamConfig{cfg.policy_lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
    if (cfg.baseline == Baseline::Ours) {
        Rng rng(seed, {0x63726974});
        s.critic = critic_init_from_policy(base, rewards.registry.ids(), flags, rng);
        s.critic_opt =
            make_critic_optimizer(*s.critic, AdamConfig{cfg.value_lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
    }
    return s;
}

Rollouts collect_rollouts(const PolicyNet& policy, const RewardSetup& rewards, const NoiseSchedule& sched,
                          const TrainConfig& cfg, std::uint64_t seed, std::uint64_t tag, int iteration) {
    const auto iter = static_cast<std::uint64_t>(iteration);
    const int group = cfg.baseline == Baseline::Grpo ? cfg.group_size : 1;
    const int prompts = cfg.batch / group;
    std::vector<double> ratios = cfg.ratios;
    if (ratios.empty()) {
        ratios.assign(rewards.registry.size(), 1.0);
    }
    Rng prompt_rng(seed, {tag, iter, 1});
    const std::vector<PromptItem> items =
        mixed_batch(rewards.registry.specs(), ratios, prompts, policy.cfg.num_classes, prompt_rng);

    Rollouts ro;
    std::vector<int> ys;
    std::vector<const PromptItem*> src;
    for (std::size_t p = 0; p < items.size(); ++p) {
        for (int g = 0; g < group; ++g) {
            ys.push_back(items[p].y);
            src.push_back(&items[p]);
            ro.weights.push_back(items[p].weight);
            ro.group.push_back(static_cast<int>(p));
        }
    }
    std::vector<Rng> streams = make_streams(seed, {tag, iter, 2}, ys.size());
    RolloutOptions opt{cfg.noise_level, cfg.cfg_scale};
    Matrix z0;
    if (group > 1 && cfg.grpo_shared_noise) {
        z0.resize(static_cast<Eigen::Index>(ys.size()), policy.cfg.dim);
        for (std::size_t p = 0; p < items.size(); ++p) {
            Rng rng(seed, {tag, iter, 4, p});
            RowVector z(policy.cfg.dim);
            for (Eigen::Index c = 0; c < z.size(); ++c) {
                z(c) = rng.normal();
            }
            for (int g = 0; g < group; ++g) {
                z0.row(static_cast<Eigen::Index>(p) * group + g) = z;
            }
        }
        opt.z_init = &z0;
    }
    ro.trajs = sample_trajectories(policy, ys, sched, opt, streams);
    for (std::size_t i = 0; i < ro.trajs.size(); ++i) {
        Trajectory& tr = ro.trajs[i];
        tr.reward_channel = src[i]->reward_id;
        const Vector x0 = tr.x0();
        for (const auto& spec : rewards.registry.specs()) {
            if (cfg.joint_eval || spec.id == tr.reward_channel) {
                tr.rewards[spec.id] = evaluate(x0, tr.y, spec, rewards.ctx);
            }
        }
    }
    return ro;
}

double class_diversity(const std::vector<Trajectory>& trajs) {
    std::map<int, std::vector<Eigen::Index>> by_class;
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        by_class[trajs[i].y].push_back(static_cast<Eigen::Index>(i));
    }
    double acc = 0.0;
    int classes = 0;
    for (const auto& [y, idx] : by_class) {
        if (idx.size() < 2) {
            continue;
        }
        Matrix x(static_cast<Eigen::Index>(idx.size()), trajs.front().latents.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            x.row(static_cast<Eigen::Index>(k)) = trajs[static_cast<std::size_t>(idx[k])].x0().transpose();
        }
        acc += hacking_probe(x);
        ++classes;
    }
    return classes == 0 ? 0.0 : acc / classes;
}

namespace {

struct StepCoefs {
    Vector z_coef;
    Vector pred_coef;
};

StepCoefs coefficients_for(const std::vector<int>& steps, const NoiseSchedule& sched) {
    StepCoefs c{Vector(static_cast<Eigen::Index>(steps.size())), Vector(static_cast<Eigen::Index>(steps.size()))};
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const StepCoefficients s = step_coefficients(sched, steps[i]);
        c.z_coef(static_cast<Eigen::Index>(i)) = s.z_coef;
        c.pred_coef(static_cast<Eigen::Index>(i)) = s.pred_coef;
    }
    return c;
}

struct RowView {
    Matrix z;
    Matrix action;
    Conditioning c;
    std::vector<int> step;
    Vector sigma;
    Vector logp_old;
    Vector adv;
};

RowView gather(const AdvantageBatch& b, const std::vector<Eigen::Index>& rows) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    RowView v{Matrix(n, b.z.cols()), Matrix(n, b.z.cols()),
              Conditioning{Matrix(n, 1), std::vector<int>(rows.size())}, std::vector<int>(rows.size()),
              Vector(n), Vector(n), Vector(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index r = rows[static_cast<std::size_t>(i)];
        v.z.row(i) = b.z.row(r);
        v.action.row(i) = b.action.row(r);
        v.c.t(i, 0) = b.c.t(r, 0);
        v.c.y[static_cast<std::size_t>(i)] = b.c.y[static_cast<std::size_t>(r)];
        v.step[static_cast<std::size_t>(i)] = b.step[static_cast<std::size_t>(r)];
        v.sigma(i) = b.sigma(r);
        v.logp_old(i) = b.logp_old(r);
        v.adv(i) = b.advantages(r);
    }
    return v;
}

Matrix scaled_rows(const Vector& coef, const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out.row(i) = coef(i) * m.row(i);
    }
    return out;
}

Vector row_logprobs(const Matrix& action, const Matrix& mean, const Vector& sigma) {
    Vector lp(action.rows());
    for (Eigen::Index i = 0; i < action.rows(); ++i) {
        lp(i) = gaussian_logprob(action.row(i), mean.row(i), sigma(i));
    }
    return lp;
}

}  // namespace

PpoStats ppo_losses(const PolicyNet& policy, const PolicyNet* reference, const AdvantageBatch& batch,
                    const std::vector<Eigen::Index>& rows, const NoiseSchedule& sched, const TrainConfig& cfg,
                    ParamSet* grad) {
    PpoStats st;
    if (rows.empty()) {
        if (grad != nullptr) {
            *grad = policy.params.zeros_like();
        }
        return st;
    }
    const RowView v = gather(batch, rows);
    const auto n = static_cast<Eigen::Index>(rows.size());
    const StepCoefs sc = coefficients_for(v.step, sched);

    Tape tape;
    Bound b(tape, policy.params, grad != nullptr);
    Var pred = guided_forward(b, policy.cfg, tape.constant(v.z), v.c, cfg.cfg_scale);
    Var mean = tape.add(tape.constant(scaled_rows(sc.z_coef, v.z)), tape.mul(tape.constant(Matrix(sc.pred_coef)), pred));
    const Vector logp = row_logprobs(v.action, mean.value(), v.sigma);
    const Vector log_ratio = logp - v.logp_old;
    const Eigen::ArrayXd ratio = log_ratio.array().exp();

    std::vector<Eigen::Index> valid;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::isfinite(ratio(i)) && std::isfinite(logp(i))) {
            valid.push_back(rows[static_cast<std::size_t>(i)]);
        }
    }
    const auto skipped = static_cast<int>(n - static_cast<Eigen::Index>(valid.size()));
    if (skipped > 0) {
        if (static_cast<double>(skipped) > cfg.max_skip_frac * static_cast<double>(n)) {
            st.skipped = skipped;
            st.aborted = true;
            return st;
        }
        PpoStats sub = ppo_losses(policy, reference, batch, valid, sched, cfg, grad);
        sub.skipped += skipped;
        return sub;
    }

    Vector kl_term = Vector::Zero(n);
    Vector kl_coef_row = Vector::Zero(n);
    if (cfg.kl_coef > 0.0 && reference != nullptr) {
        const Matrix ref_pred = policy_predict(*reference, v.z, v.c, cfg.cfg_scale);
        const Matrix ref_mean = scaled_rows(sc.z_coef, v.z) + scaled_rows(sc.pred_coef, ref_pred);
        const Vector logp_ref = row_logprobs(v.action, ref_mean, v.sigma);
        const Eigen::ArrayXd d = (logp_ref - logp).array();
        kl_term = (d.exp() - 1.0 - d).matrix();
        kl_coef_row = (cfg.kl_coef * (1.0 - d.exp())).matrix();
        st.kl = kl_term.mean();
    }

    Vector coef(n);
    double surrogate = 0.0;
    int clipped = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double r = ratio(i);
        const double a = v.adv(i);
        const double rc = std::clamp(r, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        const double unclipped = r * a;
        const double clip_val = rc * a;
        surrogate += std::min(unclipped, clip_val);
        const bool active = unclipped <= clip_val;
        coef(i) = (active ? -unclipped : 0.0) + kl_coef_row(i);
        if (std::abs(r - 1.0) > cfg.clip_eps) {
            ++clipped;
        }
        st.max_ratio_dev = std::max(st.max_ratio_dev, std::abs(r - 1.0));
    }
    const auto nd = static_cast<double>(n);
    st.policy_loss = -surrogate / nd + cfg.kl_coef * st.kl;
    st.clip_frac = clipped / nd;
    st.mean_ratio = ratio.mean();
    st.approx_kl = ((ratio - 1.0) - log_ratio.array()).mean();
    st.used = static_cast<int>(n);

    if (grad != nullptr) {
        // d loss / d logp_new, with logp_new carried on the tape up to constants
        Var diff = tape.sub(tape.constant(v.action), mean);
        Vector inv = (-0.5 / v.sigma.array().square()).matrix();
        Var lp = tape.mul(tape.constant(Matrix(inv)), tape.row_sum(tape.mul(diff, diff)));
        Var obj = tape.scale(tape.sum(tape.mul(tape.constant(Matrix(coef)), lp)), 1.0 / nd);
        tape.backward(obj);
        *grad = b.grads();
    }
    return st;
}

AdvantageBatch make_advantage_batch(const std::vector<Trajectory>& trajs, const std::vector<std::vector<double>>& adv,
                           const NoiseSchedule& sched) {
    const int T = sched.steps;
    std::vector<std::pair<int, int>> keep;
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        for (int k = 0; k < T; ++k) {
            if (trajs[i].sigmas(k) > 0.0) {
                keep.emplace_back(static_cast<int>(i), k);
            }
        }
    }
    const auto n = static_cast<Eigen::Index>(keep.size());
    const Eigen::Index d = trajs.empty() ? 0 : trajs.front().latents.cols();
    AdvantageBatch b{Matrix(n, d), Matrix(n, d), Conditioning{Matrix(n, 1), std::vector<int>(keep.size())},
                     std::vector<int>(keep.size()), Vector(n), Vector(n), Vector(n), std::vector<int>(keep.size())};
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto [i, k] = keep[static_cast<std::size_t>(r)];
        const Trajectory& tr = trajs[static_cast<std::size_t>(i)];
        b.z.row(r) = tr.latents.row(k);
        b.action.row(r) = tr.latents.row(k + 1);
        b.c.t(r, 0) = sched.timestep(k);
        b.c.y[static_cast<std::size_t>(r)] = tr.y;
        b.step[static_cast<std::size_t>(r)] = k;
        b.sigma(r) = tr.sigmas(k);
        b.logp_old(r) = tr.logprobs(k);
        b.advantages(r) = adv[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        b.traj[static_cast<std::size_t>(r)] = i;
    }
    return b;
}

namespace {

// Critic values of every state of every trajectory: (N * T) x heads.
Matrix all_state_values(const CriticNet& critic, const std::vector<Trajectory>& trajs, const NoiseSchedule& sched) {
    const int T = sched.steps;
    const auto n = static_cast<Eigen::Index>(trajs.size()) * T;
    Matrix z(n, critic.cfg.dim);
    Conditioning c{Matrix(n, 1), std::vector<int>(static_cast<std::size_t>(n))};
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        for (int k = 0; k < T; ++k) {
            const auto r = static_cast<Eigen::Index>(i) * T + k;
            z.row(r) = trajs[i].latents.row(k);
            c.t(r, 0) = sched.timestep(k);
            c.y[static_cast<std::size_t>(r)] = trajs[i].y;
        }
    }
    return value(critic, z, c);
}

struct ValueRows {
    std::vector<int> traj;
    ValueSample sample;
};

}  // namespace

IterationMetrics train_iteration(TrainerState& state, const RewardSetup& rewards, const NoiseSchedule& sched,
                                 const TrainConfig& cfg, std::uint64_t seed) {
    if (cfg.baseline == Baseline::Ours && !state.critic) {
        throw ConfigError("baseline 'ours' needs a critic");
    }
    if (state.critic && state.critic->rewards != rewards.registry.ids()) {
        throw ConfigError("critic heads do not match the registered rewards");
    }
    const int it = state.iteration;
    Rollouts ro = collect_rollouts(state.policy, rewards, sched, cfg, seed, kTagPpo, it);
    const std::vector<Trajectory>& trajs = ro.trajs;
    const int T = sched.steps;
    const std::size_t N = trajs.size();
    const auto& specs = rewards.registry.specs();

    IterationMetrics m;
    m.iteration = it + 1;
    for (const auto& spec : specs) {
        double acc = 0.0;
        int cnt = 0;
        for (const auto& tr : trajs) {
            auto f = tr.rewards.find(spec.id);
            if (f != tr.rewards.end()) {
                acc += f->second;
                ++cnt;
            }
        }
        m.reward_mean.emplace_back(spec.id, cnt == 0 ? 0.0 : acc / cnt);
    }
    m.diversity = class_diversity(trajs);

    // advantages per (trajectory, step) and value-regression rows
    std::vector<std::vector<double>> adv(N, std::vector<double>(static_cast<std::size_t>(T), 0.0));
    ValueSample vs;
    std::vector<int> vs_traj;
    if (cfg.baseline == Baseline::Ours) {
        const CriticNet& critic = *state.critic;
        const Matrix values = all_state_values(critic, trajs, sched);
        std::vector<Eigen::Index> heads_rows;
        struct Row {
            int traj;
            int k;
            int head;
            double target;
        };
        std::vector<Row> vrows;
        for (std::size_t i = 0; i < N; ++i) {
            const Trajectory& tr = trajs[i];
            for (const auto& [id, reward] : tr.rewards) {
                if (!cfg.joint_eval && id != tr.reward_channel) {
                    continue;
                }
                const double w = rewards.registry.get(id).weight;
                const int head = critic.head_for(id);
                Vector r = Vector::Zero(T);
                r(T - 1) = reward;
                Vector v(T + 1);
                for (int k = 0; k < T; ++k) {
                    v(k) = values(static_cast<Eigen::Index>(i) * T + k, head);
                }
                v(T) = 0.0;
                const GaeResult g = compute_gae(r, v, cfg.gamma, cfg.lam);
                for (int k = 0; k < T; ++k) {
                    adv[i][static_cast<std::size_t>(k)] += w * g.advantages(k);
                    vrows.push_back({static_cast<int>(i), k, head,
                                     std::clamp(g.returns(k), -cfg.value_clip, cfg.value_clip)});
                }
            }
        }
        const auto nv = static_cast<Eigen::Index>(vrows.size());
        vs = ValueSample{Matrix(nv, critic.cfg.dim), Conditioning{Matrix(nv, 1), std::vector<int>(vrows.size())},
                         std::vector<int>(vrows.size()), Vector(nv)};
        for (Eigen::Index r = 0; r < nv; ++r) {
            const Row& row = vrows[static_cast<std::size_t>(r)];
            vs.z.row(r) = trajs[static_cast<std::size_t>(row.traj)].latents.row(row.k);
            vs.c.t(r, 0) = sched.timestep(row.k);
            vs.c.y[static_cast<std::size_t>(r)] = trajs[static_cast<std::size_t>(row.traj)].y;
            vs.head[static_cast<std::size_t>(r)] = row.head;
            vs.target(r) = row.target;
            vs_traj.push_back(row.traj);
        }
    } else if (cfg.baseline == Baseline::Ddpo) {
        for (std::size_t i = 0; i < N; ++i) {
            const Trajectory& tr = trajs[i];
            double a = 0.0;
            for (const auto& [id, reward] : tr.rewards) {
                if (cfg.joint_eval || id == tr.reward_channel) {
                    a += rewards.registry.get(id).weight * reward;
                }
            }
            std::fill(adv[i].begin(), adv[i].end(), a);
        }
    } else {
        const int G = cfg.group_size;
        for (std::size_t g0 = 0; g0 < N; g0 += static_cast<std::size_t>(G)) {
            const Trajectory& lead = trajs[g0];
            for (const auto& [id, unused] : lead.rewards) {
                (void)unused;
                if (!cfg.joint_eval && id != lead.reward_channel) {
                    continue;
                }
                Vector r(G);
                for (int j = 0; j < G; ++j) {
                    r(j) = trajs[g0 + static_cast<std::size_t>(j)].rewards.at(id);
                }
                const Vector a = grpo_advantages(r);
                const double w = rewards.registry.get(id).weight;
                for (int j = 0; j < G; ++j) {
                    for (auto& x : adv[g0 + static_cast<std::size_t>(j)]) {
                        x += w * a(j);
                    }
                }
            }
        }
    }

    AdvantageBatch batch = make_advantage_batch(trajs, adv, sched);
    if (cfg.baseline == Baseline::Grpo) {
        batch.advantages = batch.advantages.cwiseMax(-cfg.adv_clip).cwiseMin(cfg.adv_clip);
    } else {
        normalize_advantages(batch.advantages, cfg.adv_clip);
    }

    // equal shards of shuffled trajectories, one PPO epoch each
    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    Rng shard_rng(seed, {kTagPpo, static_cast<std::uint64_t>(it), 3});
    std::shuffle(order.begin(), order.end(), shard_rng.engine());
    std::vector<int> shard_of(N);
    const int S = cfg.updates_per_iter;
    for (std::size_t p = 0; p < N; ++p) {
        shard_of[static_cast<std::size_t>(order[p])] = static_cast<int>(p * static_cast<std::size_t>(S) / N);
    }
    std::vector<std::vector<Eigen::Index>> policy_rows(static_cast<std::size_t>(S));
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        policy_rows[static_cast<std::size_t>(shard_of[static_cast<std::size_t>(batch.traj[static_cast<std::size_t>(r)])])]
            .push_back(r);
    }
    std::vector<std::vector<Eigen::Index>> value_rows(static_cast<std::size_t>(S));
    for (std::size_t r = 0; r < vs_traj.size(); ++r) {
        value_rows[static_cast<std::size_t>(shard_of[static_cast<std::size_t>(vs_traj[r])])].push_back(
            static_cast<Eigen::Index>(r));
    }

    const PolicyNet* ref = cfg.kl_coef > 0.0 ? &state.reference : nullptr;
    double ratio_acc = 0.0;
    int used_shards = 0;
    for (int s = 0; s < S; ++s) {
        const auto& rows = policy_rows[static_cast<std::size_t>(s)];
        if (!rows.empty()) {
            ParamSet g;
            const PpoStats st = ppo_losses(state.policy, ref, batch, rows, sched, cfg, &g);
            m.skipped += st.skipped;
            if (st.aborted) {
                ++m.aborted_updates;
            } else {
                state.policy_opt.step(state.policy.params, g);
                m.policy_loss += st.policy_loss;
                m.clip_frac += st.clip_frac;
                m.approx_kl += st.approx_kl;
                m.kl += st.kl;
                ratio_acc += st.mean_ratio;
                ++used_shards;
            }
        }
        if (cfg.baseline == Baseline::Ours) {
            const auto& vr = value_rows[static_cast<std::size_t>(s)];
            if (!vr.empty()) {
                ValueSample part{Matrix(static_cast<Eigen::Index>(vr.size()), vs.z.cols()),
                                 Conditioning{Matrix(static_cast<Eigen::Index>(vr.size()), 1),
                                              std::vector<int>(vr.size())},
                                 std::vector<int>(vr.size()), Vector(static_cast<Eigen::Index>(vr.size()))};
                for (std::size_t q = 0; q < vr.size(); ++q) {
                    const auto i = static_cast<Eigen::Index>(q);
                    part.z.row(i) = vs.z.row(vr[q]);
                    part.c.t(i, 0) = vs.c.t(vr[q], 0);
                    part.c.y[q] = vs.c.y[static_cast<std::size_t>(vr[q])];
                    part.head[q] = vs.head[static_cast<std::size_t>(vr[q])];
                    part.target(i) = vs.target(vr[q]);
                }
                ParamSet g;
                const double loss = value_loss(*state.critic, part, &g);
                if (!std::isfinite(loss)) {
                    throw DivergenceError("value loss became non-finite at iteration " + std::to_string(it + 1));
                }
                m.value_loss += loss / S;
                state.critic_opt.step(state.critic->params, g);
            }
        }
    }
    if (used_shards > 0) {
        m.policy_loss /= used_shards;
        m.clip_frac /= used_shards;
        m.approx_kl /= used_shards;
        m.kl /= used_shards;
        m.mean_ratio = ratio_acc / used_shards;
    }
    if (!std::isfinite(m.policy_loss)) {
        throw DivergenceError("policy loss became non-finite at iteration " + std::to_string(it + 1));
    }
    state.iteration = it + 1;
    return m;
}

std::vector<double> value_pretrain_phase(TrainerState& state, const RewardSetup& rewards,
                                         const NoiseSchedule& sched, const TrainConfig& cfg, std::uint64_t seed,
                                         int iters) {
    if (!state.critic) {
        throw ConfigError("value pretraining needs a critic");
    }
    std::vector<double> hist;
    for (int i = 0; i < iters; ++i) {
        const int it = state.vp_done;
        Rollouts ro = collect_rollouts(state.policy, rewards, sched, cfg, seed, kTagVp, it);
        ValueFitConfig vf{cfg.updates_per_iter, cfg.value_clip, derive_seed(seed, {kTagVp, static_cast<std::uint64_t>(it)})};
        auto h = value_pretrain(*state.critic, state.critic_opt, ro.trajs, sched, 1, vf);
        hist.push_back(h.front());
        state.vp_done = it + 1;
    }
    return hist;
}

}  // namespace lac
