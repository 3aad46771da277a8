#include "lac/gen/dataset.hpp"

#include "lac/error.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace lac {

const Vector& TargetMixture::target_mean(int y) const {
    if (y < 0 || y >= num_classes()) {
        throw ConfigError("class " + std::to_string(y) + " outside the mixture's classes");
    }
    return means.at(static_cast<std::size_t>(target_component.at(static_cast<std::size_t>(y))));
}

double TargetMixture::component_log_density(const Vector& x, int c) const {
    const Vector& mu = means.at(static_cast<std::size_t>(c));
    const double var = component_std * component_std;
    const double d = static_cast<double>(dim);
    return -0.5 * (x - mu).squaredNorm() / var - 0.5 * d * std::log(2.0 * std::numbers::pi * var);
}

void TargetMixture::validate() const {
    if (dim < 1 || means.empty() || class_weights.empty()) {
        throw ConfigError("mixture needs a dimension, components and classes");
    }
    if (!(component_std > 0.0)) {
        throw ConfigError("mixture component std must be positive");
    }
    for (const auto& m : means) {
        if (m.size() != dim) {
            throw ConfigError("mixture mean dimension mismatch");
        }
    }
    if (target_component.size() != class_weights.size()) {
        throw ConfigError("mixture needs one target component per class");
    }
    for (std::size_t y = 0; y < class_weights.size(); ++y) {
        const auto& w = class_weights[y];
        if (w.size() != means.size()) {
            throw ConfigError("class weight vector length must equal the component count");
        }
        const double s = std::accumulate(w.begin(), w.end(), 0.0);
        if (std::abs(s - 1.0) > 1e-9) {
            throw ConfigError("class weights must sum to 1");
        }
        if (target_component[y] < 0 || target_component[y] >= num_components()) {
            throw ConfigError("target component out of range");
        }
    }
}

TargetMixture make_ring_mixture(const MixtureParams& p) {
    const int classes = static_cast<int>(p.target_weights.size());
    if (p.dim < 2 || classes < 1 || 2 * classes > p.modes) {
        throw ConfigError("ring mixture needs dim >= 2 and at most modes / 2 classes");
    }
    TargetMixture m;
    m.dim = p.dim;
    m.component_std = p.component_std;
    for (int c = 0; c < p.modes; ++c) {
        const double a = 2.0 * std::numbers::pi * c / p.modes;
        Vector mu = Vector::Zero(p.dim);
        mu(0) = p.radius * std::cos(a);
        mu(1) = p.radius * std::sin(a);
        m.means.push_back(mu);
    }
    std::vector<int> shared;
    for (int c = 0; c < p.modes; ++c) {
        if (c % 2 == 1 || c >= 2 * classes) {
            shared.push_back(c);
        }
    }
    for (int y = 0; y < classes; ++y) {
        const double tw = p.target_weights[static_cast<std::size_t>(y)];
        if (!(tw > 0.0 && tw <= 1.0)) {
            throw ConfigError("target weights must lie in (0, 1]");
        }
        std::vector<double> w(static_cast<std::size_t>(p.modes), 0.0);
        w[static_cast<std::size_t>(2 * y)] = tw;
        for (int c : shared) {
            w[static_cast<std::size_t>(c)] = (1.0 - tw) / static_cast<double>(shared.size());
        }
        m.class_weights.push_back(std::move(w));
        m.target_component.push_back(2 * y);
    }
    m.validate();
    return m;
}

TargetMixture make_eight_gaussians(int dim, double radius, double std) {
    TargetMixture m;
    m.dim = dim;
    m.component_std = std;
    for (int c = 0; c < 8; ++c) {
        const double a = 2.0 * std::numbers::pi * c / 8;
        Vector mu = Vector::Zero(dim);
        mu(0) = radius * std::cos(a);
        mu(1) = radius * std::sin(a);
        m.means.push_back(mu);
    }
    m.class_weights.push_back(std::vector<double>(8, 1.0 / 8.0));
    m.target_component.push_back(0);
    m.validate();
    return m;
}

namespace {

int draw_component(const std::vector<double>& w, Rng& rng) {
    double u = rng.uniform();
    for (std::size_t c = 0; c < w.size(); ++c) {
        u -= w[c];
        if (u < 0.0) {
            return static_cast<int>(c);
        }
    }
    for (std::size_t c = w.size(); c-- > 0;) {
        if (w[c] > 0.0) {
            return static_cast<int>(c);
        }
    }
    return 0;
}

void draw_point(const TargetMixture& m, int y, Rng& rng, Eigen::Ref<RowVector> out) {
    const int c = draw_component(m.class_weights[static_cast<std::size_t>(y)], rng);
    const Vector& mu = m.means[static_cast<std::size_t>(c)];
    for (int i = 0; i < m.dim; ++i) {
        out(i) = mu(i) + m.component_std * rng.normal();
    }
}

}  // namespace

Batch sample_mixture(const TargetMixture& m, int n, Rng& rng) {
    Batch b;
    b.x0.resize(n, m.dim);
    b.y.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(m.num_classes())));
        b.y[static_cast<std::size_t>(i)] = y;
        draw_point(m, y, rng, b.x0.row(i));
    }
    return b;
}

Matrix sample_class(const TargetMixture& m, int y, int n, Rng& rng) {
    Matrix x(n, m.dim);
    for (int i = 0; i < n; ++i) {
        draw_point(m, y, rng, x.row(i));
    }
    return x;
}

}  // namespace lac
