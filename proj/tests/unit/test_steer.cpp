#include "lac/error.hpp"
#include "lac/gen/sampler.hpp"
#include "lac/steer/steer.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace lac;

namespace {

PolicyNet small_policy(ScheduleKind kind, std::uint64_t seed = 5) {
    Rng rng(seed);
    NetConfig cfg;
    cfg.hidden = 16;
    cfg.depth = 2;
    return PolicyNet::init(cfg, kind, 0.1, rng);
}

// Critic with non-zero read-out so its state gradient is not identically 0.
CriticNet live_critic(const PolicyNet& pol, std::uint64_t seed = 9) {
    Rng rng(seed);
    CriticFlags f;
    f.head_hidden = 8;
    f.adaln_hidden = 8;
    CriticNet c = critic_init_from_policy(pol, {"pref"}, f, rng);
    for (std::size_t i = 0; i < c.params.size(); ++i) {
        if (!is_trunk_param(c.params.name(i))) {
            auto v = c.params.values(i);
            for (Eigen::Index k = 0; k < v.size(); ++k) {
                v.data()[k] += 0.3 * rng.normal();
            }
        }
    }
    return c;
}

RewardContext ring_ctx() { return RewardContext{make_ring_mixture(MixtureParams{})}; }

}  // namespace

TEST_CASE("guide_ddim arithmetic and identities") {
    Matrix eps = Matrix::Zero(1, 2);
    Matrix g(1, 2);
    g << 1, 0;
    Matrix out = guide_ddim(eps, g, 2.0, 0.75);
    CHECK(out(0, 0) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(out(0, 1) == 0.0);

    Rng rng(1);
    Matrix e = gaussian_matrix(3, 2, 1.0, rng);
    Matrix gg = gaussian_matrix(3, 2, 1.0, rng);
    CHECK(guide_ddim(e, gg, 0.0, 0.3) == e);
    CHECK(guide_ddim(e, Matrix::Zero(3, 2), 1.5, 0.3) == e);
    CHECK_THROWS_AS(guide_ddim(e, Matrix::Zero(2, 2), 1.0, 0.3), ShapeError);
}

TEST_CASE("guide_flow arithmetic and linearity in eta") {
    Matrix v(1, 2), g(1, 2);
    v << 1, 1;
    g << 0, 2;
    Matrix out = guide_flow(v, g, 0.5);
    CHECK(out(0, 0) == 1.0);
    CHECK(out(0, 1) == 2.0);
    CHECK(guide_flow(v, g, 0.0) == v);

    Rng rng(2);
    Matrix a = gaussian_matrix(4, 3, 1.0, rng), d = gaussian_matrix(4, 3, 1.0, rng);
    CHECK((guide_flow(a, d, 0.7) - guide_flow(guide_flow(a, d, 0.3), d, 0.4)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("eta = 0 guided sampling equals unguided sampling bit for bit") {
    for (ScheduleKind kind : {ScheduleKind::FlowOt, ScheduleKind::Ddpm}) {
        PolicyNet pol = small_policy(kind);
        CriticNet critic = live_critic(pol);
        NoiseSchedule s = make_schedule(kind, kind == ScheduleKind::Ddpm ? 20 : 16);
        Rng rng(3);
        Matrix z0 = gaussian_matrix(10, 2, 1.0, rng);
        std::vector<int> ys{0, 1, 2, 3, 0, 1, 2, 3, 4, 4};
        GuidedBatch b = guided_sample_batch(pol, &critic, 0, ys, z0, s, 0.0);
        CHECK(b.x0 == sample_deterministic(pol, z0, ys, s));
        CHECK(b.values.rows() == 10);
        CHECK(b.values.cols() == s.steps);
        CHECK(b.values.allFinite());

        GuidedBatch g = guided_sample_batch(pol, &critic, 0, ys, z0, s, 0.5);
        CHECK((g.x0 - b.x0).cwiseAbs().maxCoeff() > 0.0);
        // extreme guidance is allowed to hurt but must not crash on a finite path
        CHECK_NOTHROW((void)guided_sample_batch(pol, &critic, 0, ys, z0, s, 100.0));
    }
}

TEST_CASE("guidance without a critic is a configuration error") {
    PolicyNet pol = small_policy(ScheduleKind::FlowOt);
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 8);
    Matrix z0 = Matrix::Zero(1, 2);
    CHECK_THROWS_AS((void)guided_sample_batch(pol, nullptr, 0, {0}, z0, s, 1.0), ConfigError);
    CHECK_NOTHROW((void)guided_sample_batch(pol, nullptr, 0, {0}, z0, s, 0.0));
}

TEST_CASE("guided flow step moves along the value gradient") {
    PolicyNet pol = small_policy(ScheduleKind::FlowOt);
    CriticNet critic = live_critic(pol);
    Rng rng(4);
    Matrix z0 = gaussian_matrix(50, 2, 1.0, rng);
    std::vector<int> ys(50, 1);
    NoiseSchedule one = make_schedule(ScheduleKind::FlowOt, 4);
    const Conditioning c = uniform_conditioning(50, one.timestep(0), ys);
    Matrix g = critic_grad_state(critic, z0, c, 0);
    Matrix pred = policy_predict(pol, z0, c);
    Matrix plain = deterministic_step(z0, pred, 0, one);
    Matrix guided = deterministic_step(z0, guide_flow(pred, -g, 0.3), 0, one);
    Vector along = (guided - plain).cwiseProduct(g).rowwise().sum();
    CHECK((along.array() > 0.0).all());

    // ddpm: lowering eps along g raises x0_hat along g
    PolicyNet dp = small_policy(ScheduleKind::Ddpm);
    CriticNet dc = live_critic(dp);
    NoiseSchedule ds = make_schedule(ScheduleKind::Ddpm, 10);
    const Conditioning c2 = uniform_conditioning(50, ds.timestep(0), ys);
    Matrix g2 = critic_grad_state(dc, z0, c2, 0);
    Matrix e2 = policy_predict(dp, z0, c2);
    const double ab = ds.alpha_bars[static_cast<std::size_t>(ds.level(0))];
    Matrix d2 = deterministic_step(z0, guide_ddim(e2, g2, 0.3, ab), 0, ds) - deterministic_step(z0, e2, 0, ds);
    CHECK((d2.cwiseProduct(g2).rowwise().sum().array() > 0.0).all());
}

TEST_CASE("select_best and best-of-n") {
    CHECK(select_best({0.2, 0.9, 0.4}) == 1);
    CHECK(select_best({0.5, 0.5}) == 0);
    CHECK(select_best({NAN, 0.1}) == 1);
    CHECK_THROWS_AS(select_best({NAN}), DivergenceError);

    PolicyNet pol = small_policy(ScheduleKind::FlowOt);
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 10);
    RewardContext ctx = ring_ctx();
    ScoreFn score = reward_scorer(make_reward("pref", RewardFn::ModeAffinity), ctx);

    Rng a(11), b(11);
    BonResult one = best_of_n(pol, score, 2, 1, s, a);
    Matrix z0 = gaussian_matrix(1, 2, 1.0, b);
    Matrix plain = sample_deterministic(pol, z0, {2}, s);
    CHECK(one.x0 == Vector(plain.row(0).transpose()));
    CHECK(one.score == score(one.x0, 2));

    Rng c(12), d(12);
    BonResult four = best_of_n(pol, score, 1, 4, s, c);
    BonResult two = best_of_n(pol, score, 1, 2, s, d);
    CHECK(four.scores.size() == 4);
    CHECK(four.scores[0] == doctest::Approx(two.scores[0]).epsilon(1e-12));
    CHECK(four.scores[1] == doctest::Approx(two.scores[1]).epsilon(1e-12));
    CHECK(four.score >= two.score - 1e-12);
    CHECK(four.score == *std::max_element(four.scores.begin(), four.scores.end()));
}

TEST_CASE("guided best-of-n reduces to its parts") {
    PolicyNet pol = small_policy(ScheduleKind::FlowOt);
    CriticNet critic = live_critic(pol);
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 10);
    RewardContext ctx = ring_ctx();
    ScoreFn score = reward_scorer(make_reward("pref", RewardFn::ModeAffinity), ctx);

    Rng a(21), b(21);
    BonResult g1 = guided_bon(pol, &critic, 0, score, 0, 1, 0.5, s, a);
    GuidedSample gs = guided_sample(pol, &critic, 0, 0, s, 0.5, b);
    CHECK(g1.x0 == gs.x0);

    Rng c(22), d(22);
    BonResult g0 = guided_bon(pol, &critic, 0, score, 0, 3, 0.0, s, c);
    BonResult bon = best_of_n(pol, score, 0, 3, s, d);
    CHECK(g0.x0 == bon.x0);
    CHECK(g0.score == bon.score);

    Rng e(23);
    BonResult g5 = guided_bon(pol, &critic, 0, score, 0, 5, 0.5, s, e);
    for (double v : g5.scores) {
        CHECK(g5.score >= v);
    }
}

TEST_CASE("smc weights") {
    Vector f(2);
    f << std::log(2.0), 0.0;
    Vector w = smc_weights(f, 1.0);
    CHECK(w(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(w(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

    Vector eq = Vector::Constant(5, 0.3);
    CHECK((smc_weights(eq, 1.0).array() - 0.2).abs().maxCoeff() < 1e-15);

    Rng rng(3);
    Vector r = gaussian_matrix(6, 1, 3.0, rng).col(0);
    CHECK((smc_weights(r, 1e6).array() - 1.0 / 6.0).abs().maxCoeff() < 1e-4);
    CHECK(std::abs(smc_weights(r, 0.1).sum() - 1.0) < 1e-12);

    Vector partial(3);
    partial << -INFINITY, 1.0, NAN;
    Vector wp = smc_weights(partial, 1.0);
    CHECK(wp(0) == 0.0);
    CHECK(wp(1) == 1.0);
    CHECK(wp(2) == 0.0);

    Vector dead = Vector::Constant(3, -INFINITY);
    CHECK_THROWS_AS((void)smc_weights(dead, 1.0), DivergenceError);
    CHECK_THROWS_AS((void)smc_weights(eq, 0.0), ConfigError);
}

TEST_CASE("resampling frequencies match the weights") {
    Vector w(4);
    w << 0.1, 0.2, 0.3, 0.4;
    for (Resampling scheme : {Resampling::Multinomial, Resampling::Systematic}) {
        Rng rng(77);
        std::vector<double> counts(4, 0.0);
        const int reps = 25000;
        for (int r = 0; r < reps; ++r) {
            for (int a : resample(w, rng, scheme)) {
                counts[static_cast<std::size_t>(a)] += 1.0;
            }
        }
        double chi2 = 0.0;
        for (int i = 0; i < 4; ++i) {
            const double e = w(i) * 4.0 * reps;
            chi2 += (counts[static_cast<std::size_t>(i)] - e) * (counts[static_cast<std::size_t>(i)] - e) / e;
        }
        // 3 degrees of freedom, p = 0.01
        CHECK(chi2 < 11.345);
    }
}

TEST_CASE("smc with one particle is plain stochastic sampling") {
    PolicyNet pol = small_policy(ScheduleKind::FlowOt);
    CriticNet critic = live_critic(pol);
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 12);
    RewardContext ctx = ring_ctx();
    ScoreFn score = reward_scorer(make_reward("pref", RewardFn::ModeAffinity), ctx);
    SteerConfig cfg;
    cfg.K = 1;
    SmcResult r = smc_sample(pol, critic_scorer(critic, 0, 3, s, score), 3, cfg, s, 1234);
    Rng rng(1234, {0});
    Trajectory tr = sample_trajectory(pol, 3, s, RolloutOptions{cfg.noise_level, 1.0}, rng);
    CHECK(r.x0 == tr.x0());
    for (const Vector& w : r.weights) {
        CHECK(w(0) == 1.0);
    }
}

TEST_CASE("smc weights stay on the simplex for both scorers") {
    PolicyNet pol = small_policy(ScheduleKind::FlowOt);
    CriticNet critic = live_critic(pol);
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 10);
    RewardContext ctx = ring_ctx();
    ScoreFn score = reward_scorer(make_reward("pref", RewardFn::ModeAffinity), ctx);
    for (SmcScorerKind kind : {SmcScorerKind::Critic, SmcScorerKind::PushToX0}) {
        SteerConfig cfg;
        cfg.K = 6;
        cfg.tau = 0.05;
        cfg.scorer = kind;
        SmcScorer sc = kind == SmcScorerKind::Critic ? critic_scorer(critic, 0, 1, s, score)
                                                     : push_to_x0_scorer(pol, 1, s, score);
        SmcResult r = smc_sample(pol, sc, 1, cfg, s, 99);
        REQUIRE(r.weights.size() == static_cast<std::size_t>(s.steps));
        for (const Vector& w : r.weights) {
            CHECK((w.array() >= 0.0).all());
            CHECK(std::abs(w.sum() - 1.0) < 1e-12);
        }
        CHECK(r.score == doctest::Approx(score(r.x0, 1)).epsilon(1e-12));
        SmcResult again = smc_sample(pol, sc, 1, cfg, s, 99);
        CHECK(again.x0 == r.x0);
    }
}

TEST_CASE("strategy runner shares noise across strategies") {
    PolicyNet pol = small_policy(ScheduleKind::FlowOt);
    CriticNet critic = live_critic(pol);
    NoiseSchedule s = make_schedule(ScheduleKind::FlowOt, 8);
    RewardContext ctx = ring_ctx();
    RewardSpec spec = make_reward("pref", RewardFn::ModeAffinity);
    std::vector<int> ys{0, 1, 2, 3, 0, 1};
    SteerConfig cfg;
    cfg.n = 3;
    cfg.eta = 0.0;
    StrategyReport none = run_strategy(Strategy::None, pol, &critic, "pref", spec, ctx, ys, s, cfg, 5);
    StrategyReport guide0 = run_strategy(Strategy::Guide, pol, &critic, "pref", spec, ctx, ys, s, cfg, 5);
    CHECK(none.scores == guide0.scores);
    StrategyReport bon = run_strategy(Strategy::Bon, pol, &critic, "pref", spec, ctx, ys, s, cfg, 5);
    CHECK(bon.samples_per_prompt == 3);
    for (std::size_t p = 0; p < ys.size(); ++p) {
        CHECK(bon.scores[p] >= none.scores[p]);
    }
    CHECK_THROWS_AS((void)run_strategy(Strategy::Guide, pol, nullptr, "pref", spec, ctx, ys, s, cfg, 5), ConfigError);
    CHECK_THROWS_AS(parse_strategy("beam"), ConfigError);
    CHECK(parse_strategy("guide+bon") == Strategy::GuideBon);
}
