#include "lac/error.hpp"
#include "lac/rl/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace lac;

namespace {

// A_k = sum_{l >= 0} (gamma lam)^l delta_{k+l}, summed term by term
Vector brute_gae(const Vector& r, const Vector& v, double gamma, double lam) {
    const auto n = r.size();
    Vector a = Vector::Zero(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        for (Eigen::Index l = 0; k + l < n; ++l) {
            const double delta = r(k + l) + gamma * v(k + l + 1) - v(k + l);
            a(k) += std::pow(gamma * lam, static_cast<double>(l)) * delta;
        }
    }
    return a;
}

PolicyNet tiny_policy(std::uint64_t seed = 2) {
    Rng rng(seed);
    NetConfig cfg;
    cfg.hidden = 8;
    cfg.depth = 2;
    return PolicyNet::init(cfg, ScheduleKind::FlowOt, 0.1, rng);
}

RewardSetup single_reward() {
    return RewardSetup{RewardRegistry({make_reward("pref", RewardFn::ModeAffinity)}),
                       RewardContext{make_ring_mixture(MixtureParams{})}};
}

TrainConfig quick_config() {
    TrainConfig c;
    c.batch = 16;
    c.iterations = 2;
    c.vp_iters = 1;
    c.clip_eps = 0.2;
    return c;
}

AdvantageBatch batch_from(const PolicyNet& pol, const NoiseSchedule& s, int n, std::uint64_t seed, double adv_value,
                          bool random_adv) {
    std::vector<int> ys(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ys[static_cast<std::size_t>(i)] = i % 4;
    auto streams = make_streams(seed, {1}, ys.size());
    auto trajs = sample_trajectories(pol, ys, s, RolloutOptions{}, streams);
    Rng rng(seed, {2});
    std::vector<std::vector<double>> adv(trajs.size(), std::vector<double>(static_cast<std::size_t>(s.steps)));
    for (auto& row : adv) {
        for (auto& a : row) a = random_adv ? rng.normal() : adv_value;
    }
    return make_advantage_batch(trajs, adv, s);
}

std::vector<Eigen::Index> all_rows(const AdvantageBatch& b) {
    std::vector<Eigen::Index> r(static_cast<std::size_t>(b.rows()));
    std::iota(r.begin(), r.end(), 0);
    return r;
}

}  // namespace

TEST_CASE("gae examples") {
    Vector r(3), v(4);
    r << 0, 0, 2;
    v.setZero();
    GaeResult g = compute_gae(r, v, 1.0, 1.0);
    CHECK(g.advantages == Vector::Constant(3, 2.0));
    CHECK(g.returns == Vector::Constant(3, 2.0));

    Vector r1(1), v1(2);
    r1 << 0.0;
    v1 << 0.3, 0.5;
    CHECK(compute_gae(r1, v1, 1.0, 1.0).advantages(0) == doctest::Approx(0.2).epsilon(1e-14));

    Vector r3(3), v3(4);
    r3 << 0, 0, 1;
    v3 << 0.1, 0.2, 0.4, 0.0;
    GaeResult g3 = compute_gae(r3, v3, 0.9, 0.5);
    const Vector oracle = brute_gae(r3, v3, 0.9, 0.5);
    CHECK((g3.advantages - oracle).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((g3.returns - (oracle + v3.head(3))).cwiseAbs().maxCoeff() < 1e-14);

    CHECK_THROWS_AS(compute_gae(r3, v3.head(3), 1.0, 1.0), ShapeError);
}

TEST_CASE("gae reduces to Monte Carlo advantages at gamma = lambda = 1") {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
        const int T = 1 + static_cast<int>(rng.below(40));
        Vector r = Vector::Zero(T);
        r(T - 1) = rng.normal();
        Vector v(T + 1);
        for (int k = 0; k < T; ++k) v(k) = rng.normal();
        v(T) = 0.0;
        GaeResult g = compute_gae(r, v, 1.0, 1.0);
        for (int k = 0; k < T; ++k) {
            CHECK(std::abs(g.advantages(k) - (r(T - 1) - v(k))) < 1e-12);
        }
    }
}

TEST_CASE("advantage normalisation") {
    Vector a(3);
    a << 1, 2, 3;
    normalize_advantages(a);
    CHECK(a(0) == doctest::Approx(-1.224744871391589).epsilon(1e-13));
    CHECK(a(1) == 0.0);
    CHECK(a(2) == doctest::Approx(1.224744871391589).epsilon(1e-13));

    Vector eq = Vector::Constant(5, 3.3);
    normalize_advantages(eq);
    CHECK(eq == Vector::Zero(5));

    Vector b(2);
    b << 0, 100;
    normalize_advantages(b);
    CHECK(b(0) == doctest::Approx(-1.0));
    CHECK(b(1) == doctest::Approx(1.0));

    Vector outlier = Vector::Zero(1000);
    outlier(0) = 1.0;
    normalize_advantages(outlier);
    CHECK(outlier(0) == 10.0);

    // shifting every reward leaves the normalised advantages in place
    Rng rng(3);
    Vector x = gaussian_matrix(64, 1, 2.0, rng).col(0);
    Vector y = (x.array() + 17.5).matrix();
    normalize_advantages(x);
    normalize_advantages(y);
    CHECK((x - y).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(x.mean()) < 1e-10);
    CHECK(std::abs(std::sqrt(x.squaredNorm() / 64.0) - 1.0) < 1e-10);
}

TEST_CASE("grpo advantages") {
    Vector r(2);
    r << 1, 0;
    Vector a = grpo_advantages(r);
    CHECK(a(0) == doctest::Approx(1.0));
    CHECK(a(1) == doctest::Approx(-1.0));
    Vector r3(3);
    r3 << 3, 1, 2;
    Vector a3 = grpo_advantages(r3);
    CHECK(a3(0) == doctest::Approx(1.2247448714));
    CHECK(a3(1) == doctest::Approx(-1.2247448714));
    CHECK(a3(2) == doctest::Approx(0.0));
    CHECK(grpo_advantages(Vector::Constant(4, 2.0)) == Vector::Zero(4));
    CHECK_THROWS_AS(grpo_advantages(Vector::Constant(1, 2.0)), ConfigError);
}

TEST_CASE("kl penalty") {
    Vector lp(3);
    lp << -1.0, -2.0, 0.5;
    CHECK(kl_penalty(lp, lp) == 0.0);
    Vector ref = (lp.array() + 0.1).matrix();
    CHECK(kl_penalty(lp, ref) == doctest::Approx(std::exp(0.1) - 1.1).epsilon(1e-12));
    CHECK(kl_penalty(lp, ref) >= 0.0);
}

TEST_CASE("ppo at theta_old: unit ratios, no clipping, loss -mean(A)") {
    PolicyNet pol = tiny_policy();
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 8);
    AdvantageBatch b = batch_from(pol, s, 12, 3, 0.0, true);
    normalize_advantages(b.advantages);
    TrainConfig cfg;
    PpoStats st = ppo_losses(pol, nullptr, b, all_rows(b), s, cfg, nullptr);
    CHECK(st.max_ratio_dev < 1e-12);
    CHECK(st.clip_frac == 0.0);
    CHECK(st.used == b.rows());
    CHECK(st.policy_loss == doctest::Approx(-b.advantages.mean()).epsilon(1e-12));
    CHECK(b.rows() == 12 * (s.steps - 1));  // the last transition is deterministic
}

TEST_CASE("clipped surrogate arithmetic") {
    PolicyNet pol = tiny_policy();
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 8);
    AdvantageBatch b = batch_from(pol, s, 1, 5, 1.0, false);
    // make the recorded behaviour logprob lower by ln 1.5 on one row
    std::vector<Eigen::Index> row{2};
    b.logp_old(2) -= std::log(1.5);
    TrainConfig cfg;
    cfg.clip_eps = 0.2;
    PpoStats st = ppo_losses(pol, nullptr, b, row, s, cfg, nullptr);
    CHECK(st.mean_ratio == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(st.policy_loss == doctest::Approx(-1.2).epsilon(1e-12));
    CHECK(st.clip_frac == 1.0);
    ParamSet g;
    (void)ppo_losses(pol, nullptr, b, row, s, cfg, &g);
    CHECK(g.max_abs_diff(pol.params.zeros_like()) == 0.0);
}

TEST_CASE("ppo gradient matches finite differences of the surrogate") {
    PolicyNet pol = tiny_policy();
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 6);
    AdvantageBatch b = batch_from(pol, s, 4, 8, 0.0, true);
    // move away from theta_old so ratios differ from 1, wide clip keeps every row active
    Rng rng(1);
    PolicyNet moved = pol;
    for (std::size_t i = 0; i < moved.params.size(); ++i) {
        auto v = moved.params.values(i);
        for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] += 0.01 * rng.normal();
    }
    TrainConfig cfg;
    cfg.clip_eps = 10.0;
    for (double kl : {0.0, 0.3}) {
        cfg.kl_coef = kl;
        ParamSet g;
        (void)ppo_losses(moved, &pol, b, all_rows(b), s, cfg, &g);
        double worst = 0.0;
        for (std::size_t i = 0; i < moved.params.size(); ++i) {
            for (Eigen::Index k = 0; k < std::min<Eigen::Index>(moved.params.value(i).size(), 6); ++k) {
                const double h = 1e-6;
                PolicyNet p = moved, q = moved;
                p.params.values(i).data()[k] += h;
                q.params.values(i).data()[k] -= h;
                const double fd = (ppo_losses(p, &pol, b, all_rows(b), s, cfg, nullptr).policy_loss -
                                   ppo_losses(q, &pol, b, all_rows(b), s, cfg, nullptr).policy_loss) /
                                  (2 * h);
                const double an = g.value(i).data()[k];
                worst = std::max(worst, std::abs(fd - an) / (std::abs(an) + 1e-6));
            }
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("zero advantages leave the policy unchanged") {
    PolicyNet pol = tiny_policy();
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 8);
    AdvantageBatch b = batch_from(pol, s, 8, 4, 0.0, false);
    TrainConfig cfg;
    ParamSet g;
    (void)ppo_losses(pol, nullptr, b, all_rows(b), s, cfg, &g);
    CHECK(g.max_abs_diff(pol.params.zeros_like()) == 0.0);
    AdamW opt(pol.params, AdamConfig{1e-2, 0.9, 0.95, 1e-8, 0.0});
    PolicyNet after = pol;
    opt.step(after.params, g);
    CHECK(after.params.max_abs_diff(pol.params) <= 1e-12);
}

TEST_CASE("kl_coef 0 is bit-identical to no reference") {
    PolicyNet pol = tiny_policy();
    PolicyNet ref = tiny_policy(9);
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 8);
    AdvantageBatch b = batch_from(pol, s, 6, 4, 0.0, true);
    TrainConfig cfg;
    ParamSet g1, g2;
    PpoStats a = ppo_losses(pol, nullptr, b, all_rows(b), s, cfg, &g1);
    PpoStats c = ppo_losses(pol, &ref, b, all_rows(b), s, cfg, &g2);
    CHECK(a.policy_loss == c.policy_loss);
    CHECK(g1 == g2);
}

TEST_CASE("non-finite ratios are skipped, too many abort") {
    PolicyNet pol = tiny_policy();
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 8);
    AdvantageBatch b = batch_from(pol, s, 4, 4, 1.0, false);
    TrainConfig cfg;
    // 28 rows; poisoning 2 stays under the 10% limit, 5 crosses it
    b.logp_old(0) = -INFINITY;
    b.logp_old(1) = -INFINITY;
    PpoStats st = ppo_losses(pol, nullptr, b, all_rows(b), s, cfg, nullptr);
    CHECK(st.skipped == 2);
    CHECK_FALSE(st.aborted);
    CHECK(st.used == b.rows() - 2);
    for (int i = 2; i < 5; ++i) b.logp_old(i) = -INFINITY;
    ParamSet g;
    PpoStats bad = ppo_losses(pol, nullptr, b, all_rows(b), s, cfg, &g);
    CHECK(bad.aborted);
    CHECK(bad.skipped == 5);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    c.baseline = Baseline::Grpo;
    c.group_size = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.group_size = 4;
    CHECK_NOTHROW(c.validate());
    c.batch = 10;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    TrainConfig d;
    d.clip_eps = 0.0;
    CHECK_THROWS_AS(d.validate(), ConfigError);
    CHECK_THROWS_AS(parse_baseline("ppo2"), ConfigError);
}

TEST_CASE("equal sample budgets across baselines") {
    PolicyNet pol = tiny_policy();
    RewardSetup rs = single_reward();
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 4);
    TrainConfig ours = quick_config();
    TrainConfig grpo = ours;
    grpo.baseline = Baseline::Grpo;
    grpo.group_size = 4;
    Rollouts a = collect_rollouts(pol, rs, s, ours, 1, 7, 0);
    Rollouts g = collect_rollouts(pol, rs, s, grpo, 1, 7, 0);
    CHECK(a.trajs.size() == g.trajs.size());
    for (std::size_t i = 0; i < g.trajs.size(); ++i) {
        CHECK(g.trajs[i].y == g.trajs[i - i % 4].y);
        CHECK(g.group[i] == static_cast<int>(i / 4));
    }
}

TEST_CASE("grpo groups can share their initial noise") {
    PolicyNet pol = tiny_policy();
    RewardSetup rs = single_reward();
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 4);
    TrainConfig grpo = quick_config();
    grpo.baseline = Baseline::Grpo;
    grpo.group_size = 4;
    for (bool shared : {true, false}) {
        grpo.grpo_shared_noise = shared;
        Rollouts g = collect_rollouts(pol, rs, s, grpo, 1, 7, 0);
        for (std::size_t i = 0; i < g.trajs.size(); i += 4) {
            for (std::size_t j = i + 1; j < i + 4; ++j) {
                CHECK((g.trajs[j].latents.row(0) == g.trajs[i].latents.row(0)) == shared);
                CHECK(g.trajs[j].x0() != g.trajs[i].x0());
            }
        }
        CHECK(g.trajs[0].latents.row(0) != g.trajs[4].latents.row(0));
    }
}

TEST_CASE("deterministic policy gets no update") {
    PolicyNet pol = tiny_policy();
    RewardSetup rs = single_reward();
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 6);
    for (Baseline base : {Baseline::Ours, Baseline::Ddpo, Baseline::Grpo}) {
        TrainConfig cfg = quick_config();
        cfg.noise_level = 0.0;
        cfg.baseline = base;
        TrainerState st = make_trainer_state(pol, rs, cfg, CriticFlags{}, 1);
        IterationMetrics m = train_iteration(st, rs, s, cfg, 1);
        CHECK(st.policy.params == pol.params);
        CHECK(m.mean_ratio == 1.0);
        CHECK(m.clip_frac == 0.0);
    }
}

TEST_CASE("training reruns are identical and the loop makes progress") {
    PolicyNet pol = tiny_policy();
    RewardSetup rs = single_reward();
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 6);
    for (Baseline base : {Baseline::Ours, Baseline::Ddpo, Baseline::Grpo}) {
        TrainConfig cfg = quick_config();
        cfg.baseline = base;
        auto run = [&] {
            TrainerState st = make_trainer_state(pol, rs, cfg, CriticFlags{}, 4);
            if (base == Baseline::Ours) {
                auto h = value_pretrain_phase(st, rs, s, cfg, 4, 2);
                CHECK(h.size() == 2);
                CHECK(st.vp_done == 2);
                CHECK(st.policy.params == pol.params);
            }
            std::vector<IterationMetrics> ms;
            for (int i = 0; i < 3; ++i) ms.push_back(train_iteration(st, rs, s, cfg, 4));
            return std::make_pair(ms, st.policy.params);
        };
        auto [m1, p1] = run();
        auto [m2, p2] = run();
        CHECK(p1 == p2);
        CHECK_FALSE(p1 == pol.params);
        for (std::size_t i = 0; i < m1.size(); ++i) {
            CHECK(m1[i].iteration == static_cast<int>(i) + 1);
            CHECK(m1[i].reward_mean == m2[i].reward_mean);
            CHECK(m1[i].policy_loss == m2[i].policy_loss);
            CHECK(m1[i].value_loss == m2[i].value_loss);
            CHECK(m1[i].diversity == m2[i].diversity);
        }
    }
}

TEST_CASE("critic heads must match the rewards") {
    PolicyNet pol = tiny_policy();
    RewardSetup rs = single_reward();
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 4);
    TrainConfig cfg = quick_config();
    TrainerState st = make_trainer_state(pol, rs, cfg, CriticFlags{}, 1);
    RewardSetup other{RewardRegistry({make_reward("other", RewardFn::ModeAffinity)}), rs.ctx};
    CHECK_THROWS_AS(train_iteration(st, other, s, cfg, 1), ConfigError);
}
