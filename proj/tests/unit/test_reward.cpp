#include "lac/error.hpp"
#include "lac/autodiff/layers.hpp"
#include "lac/reward/reward.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>

using namespace lac;

namespace {

RewardContext ring() { return RewardContext{make_ring_mixture(MixtureParams{})}; }

// log-density of the class-conditional mixture, summed directly
double mixture_log_density(const TargetMixture& m, const Vector& x, int y) {
    double p = 0.0;
    for (int c = 0; c < m.num_components(); ++c) {
        p += m.class_weights[static_cast<std::size_t>(y)][static_cast<std::size_t>(c)] *
             std::exp(m.component_log_density(x, c));
    }
    return std::log(p);
}

}  // namespace

TEST_CASE("mode-affinity closed forms") {
    RewardContext ctx = ring();
    RewardSpec spec = make_reward("pref", RewardFn::ModeAffinity);
    for (int y = 0; y < 4; ++y) {
        const Vector mu = ctx.mixture.target_mean(y);
        CHECK(evaluate(mu, y, spec, ctx) == 1.0);
        Vector x = mu;
        x(0) += 0.5 * std::sqrt(2.0);
        CHECK(evaluate(x, y, spec, ctx) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    }
    RewardSpec wide = make_reward("pref", RewardFn::ModeAffinity, 1.0, {{"s", "2"}});
    Vector x = ctx.mixture.target_mean(1);
    x(1) += 2.0 * std::sqrt(2.0);
    CHECK(evaluate(x, 1, wide, ctx) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK_THROWS_AS(make_reward("bad", RewardFn::ModeAffinity, 1.0, {{"s", "-1"}}), ConfigError);
}

TEST_CASE("region indicator is binary and respects explicit boxes") {
    RewardContext ctx = ring();
    RewardSpec spec = make_reward("ver", RewardFn::RegionIndicator, 1.0, {{"box", "0,0,1,1"}});
    CHECK(spec.kind == RewardKind::Binary);
    Vector in(2), out(2);
    in << 0.5, 0.5;
    out << 1.5, 0.5;
    CHECK(evaluate(in, 0, spec, ctx) == 1.0);
    CHECK(evaluate(out, 0, spec, ctx) == 0.0);

    RewardSpec per = make_reward("ver", RewardFn::RegionIndicator, 1.0, {{"box.1", "-1,-1,0,0"}, {"box", "0,0,1,1"}});
    CHECK(evaluate(in, 1, per, ctx) == 0.0);
    CHECK(evaluate(in, 0, per, ctx) == 1.0);

    // default box: a sliver just outside each target mode
    RewardSpec def = make_reward("ver", RewardFn::RegionIndicator);
    Rng rng(1);
    for (int y = 0; y < 4; ++y) {
        const AxisBox b = region_box(def, ctx.mixture, y);
        const Vector mu = ctx.mixture.target_mean(y);
        CHECK_FALSE(b.contains(mu));
        const Vector centre = 0.5 * (b.lo + b.hi);
        CHECK(centre.norm() > mu.norm());
        CHECK(evaluate(centre, y, def, ctx) == 1.0);
        for (int i = 0; i < 200; ++i) {
            Vector x = gaussian_matrix(2, 1, 2.0, rng).col(0);
            const double r = evaluate(x, y, def, ctx);
            CHECK((r == 0.0 || r == 1.0));
        }
    }
    CHECK_THROWS_AS(make_reward("ver", RewardFn::RegionIndicator, 1.0, {{"box", "0,0,1"}}), ConfigError);
}

TEST_CASE("alignment is tanh of the class mixture log-density") {
    RewardContext ctx = ring();
    RewardSpec spec = make_reward("align", RewardFn::Alignment);
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const int y = static_cast<int>(rng.below(4));
        Vector x = gaussian_matrix(2, 1, 1.5, rng).col(0);
        const double r = evaluate(x, y, spec, ctx);
        CHECK(r >= -1.0);
        CHECK(r <= 1.0);
        CHECK(r == doctest::Approx(std::tanh(mixture_log_density(ctx.mixture, x, y))).epsilon(1e-10));
    }
    // far away the log-density underflows in a naive sum; logsumexp stays finite
    Vector far(2);
    far << 40.0, -40.0;
    CHECK(evaluate(far, 0, spec, ctx) == -1.0);
}

TEST_CASE("registry lookups") {
    RewardRegistry reg({make_reward("a", RewardFn::ModeAffinity), make_reward("b", RewardFn::Alignment, 0.5)});
    CHECK(reg.index("b") == 1);
    CHECK(reg.get("b").weight == 0.5);
    CHECK_THROWS_AS(reg.add(make_reward("a", RewardFn::Alignment)), ConfigError);
    CHECK_THROWS_AS((void)reg.get("zzz"), ConfigError);
    RewardContext ctx = ring();
    CHECK_THROWS_AS((void)evaluate(Vector::Zero(2), 0, reg, "zzz", ctx), ConfigError);
    CHECK_THROWS_AS(make_reward("w", RewardFn::ModeAffinity, 0.0), ConfigError);
    CHECK(evaluate(ctx.mixture.target_mean(0), 0, reg, "a", ctx) == 1.0);
}

TEST_CASE("mixed batch allocation") {
    CHECK(allocate_counts({1, 1, 1}, 6) == std::vector<int>{2, 2, 2});
    CHECK(allocate_counts({1}, 5) == std::vector<int>{5});
    CHECK(allocate_counts({2, 1}, 9) == std::vector<int>{6, 3});
    for (int n = 0; n < 40; ++n) {
        const std::vector<double> r{0.7, 1.9, 0.4};
        const auto c = allocate_counts(r, n);
        int total = 0;
        for (std::size_t i = 0; i < r.size(); ++i) {
            CHECK(std::abs(c[i] - n * r[i] / 3.0) <= 1.0);
            total += c[i];
        }
        CHECK(total == n);
    }
    std::vector<RewardSpec> specs{make_reward("a", RewardFn::ModeAffinity), make_reward("b", RewardFn::Alignment),
                                  make_reward("c", RewardFn::RegionIndicator, 2.0)};
    Rng rng(5), rng2(5);
    auto items = mixed_batch(specs, {1, 1, 1}, 9, 4, rng);
    std::map<std::string, int> cnt;
    for (const auto& it : items) {
        ++cnt[it.reward_id];
        CHECK(it.y >= 0);
        CHECK(it.y < 4);
        if (it.reward_id == "c") {
            CHECK(it.weight == 2.0);
        }
    }
    CHECK(cnt["a"] == 3);
    CHECK(cnt["b"] == 3);
    CHECK(cnt["c"] == 3);
    auto again = mixed_batch(specs, {1, 1, 1}, 9, 4, rng2);
    for (std::size_t i = 0; i < items.size(); ++i) {
        CHECK(items[i].reward_id == again[i].reward_id);
        CHECK(items[i].y == again[i].y);
    }
    CHECK_THROWS_AS(mixed_batch(specs, {1, 1}, 9, 4, rng), ConfigError);
}

TEST_CASE("hacking probe") {
    Matrix two(2, 2);
    two << 0, 0, 0, 2;
    CHECK(hacking_probe(two) == 2.0);
    Matrix same = Matrix::Constant(3, 2, 0.7);
    CHECK(hacking_probe(same) == 0.0);
    CHECK_THROWS(hacking_probe(Matrix::Zero(1, 2)));

    // spread mixture samples are more diverse than a collapsed cloud
    Rng rng(7);
    TargetMixture m = make_ring_mixture(MixtureParams{});
    Matrix spread = sample_class(m, 0, 1000, rng);
    Matrix collapsed = m.target_mean(0).transpose().replicate(1000, 1) + gaussian_matrix(1000, 2, 0.05, rng);
    CHECK(hacking_probe(spread) > hacking_probe(collapsed));
}
