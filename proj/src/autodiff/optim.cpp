#include "lac/autodiff/optim.hpp"

#include "lac/error.hpp"

#include <cmath>

namespace lac {

AdamW::AdamW(const ParamSet& layout, AdamConfig cfg) : cfg_(cfg), m_(layout.zeros_like()), v_(layout.zeros_like()), frozen_(layout.size(), false) {}

void AdamW::step(ParamSet& params, const ParamSet& grads) {
    if (!params.same_layout(m_) || !grads.same_layout(m_)) {
        throw ShapeError("optimizer: parameter layout changed");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (frozen_[i]) {
            continue;
        }
        auto p = params.values(i);
        auto m = m_.values(i);
        auto v = v_.values(i);
        const Matrix& g = grads.value(i);
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        if (cfg_.weight_decay != 0.0) {
            p *= 1.0 - cfg_.lr * cfg_.weight_decay;
        }
        p.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
    }
}

void AdamW::restore(const ParamSet& m, const ParamSet& v, long steps) {
    if (!m.same_layout(m_) || !v.same_layout(v_)) {
        throw ShapeError("optimizer: restored moments do not match the parameters");
    }
    m_ = m;
    v_ = v;
    t_ = steps;
}

}  // namespace lac
