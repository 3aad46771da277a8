#include "lac/rl/advantage.hpp"

#include "lac/error.hpp"

#include <cmath>
#include <limits>

namespace lac {

GaeResult compute_gae(const Vector& rewards, const Vector& values, double gamma, double lam) {
    const Eigen::Index n = rewards.size();
    if (values.size() != n + 1) {
        throw ShapeError("compute_gae: " + std::to_string(n) + " rewards need " + std::to_string(n + 1) +
                         " values, got " + std::to_string(values.size()));
    }
    GaeResult r{Vector(n), Vector(n)};
    double acc = 0.0;
    for (Eigen::Index k = n - 1; k >= 0; --k) {
        const double delta = rewards(k) + gamma * values(k + 1) - values(k);
        acc = delta + gamma * lam * acc;
        r.advantages(k) = acc;
        r.returns(k) = acc + values(k);
    }
    return r;
}

void normalize_advantages(Vector& adv, double clip) {
    if (adv.size() == 0) {
        return;
    }
    const double mean = adv.mean();
    const double var = (adv.array() - mean).square().mean();
    const double sd = std::sqrt(var);
    if (!(sd >= 1e-8)) {
        adv.setZero();
        return;
    }
    adv = ((adv.array() - mean) / sd).cwiseMax(-clip).cwiseMin(clip).matrix();
}

Vector grpo_advantages(const Vector& rewards) {
    if (rewards.size() < 2) {
        throw ConfigError("GRPO needs a group of at least 2 samples");
    }
    Vector a = rewards;
    normalize_advantages(a, std::numeric_limits<double>::infinity());
    return a;
}

double kl_penalty(const Vector& logp_new, const Vector& logp_ref) {
    if (logp_new.size() != logp_ref.size()) {
        throw ShapeError("kl_penalty: length mismatch");
    }
    if (logp_new.size() == 0) {
        return 0.0;
    }
    const Eigen::ArrayXd d = (logp_ref - logp_new).array();
    return (d.exp() - 1.0 - d).mean();
}

}  // namespace lac
