#include "lac/autodiff/layers.hpp"

#include "lac/error.hpp"

#include <cmath>

namespace lac {

Bound::Bound(Tape& tape, const ParamSet& params, bool requires_grad)
    : tape_(&tape), params_(&params), vars_(tape.bind(params, requires_grad)) {}

Bound::Bound(Tape& tape, const ParamSet& layout, std::vector<Var> vars)
    : tape_(&tape), params_(&layout), vars_(std::move(vars)) {
    if (vars_.size() != layout.size()) {
        throw ShapeError("bound variables do not match the parameter layout");
    }
}

ParamSet Bound::grads() const {
    ParamSet g = params_->zeros_like();
    for (std::size_t i = 0; i < vars_.size(); ++i) {
        if (tape_->has_grad(vars_[i])) {
            g.values(i) = tape_->grad(vars_[i]);
        }
    }
    return g;
}

Matrix gaussian_matrix(int rows, int cols, double std, Rng& rng) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = std * rng.normal();
    }
    return m;
}

void add_linear(ParamSet& p, const std::string& prefix, int in, int out, Rng& rng, double gain) {
    const double std = gain / std::sqrt(static_cast<double>(in));
    p.add(prefix + ".w", gaussian_matrix(in, out, std, rng));
    p.add(prefix + ".b", Matrix::Zero(1, out));
}

void add_zero_linear(ParamSet& p, const std::string& prefix, int in, int out) {
    p.add(prefix + ".w", Matrix::Zero(in, out));
    p.add(prefix + ".b", Matrix::Zero(1, out));
}

Var linear(const Bound& b, std::string_view prefix, Var x) {
    const std::string pre(prefix);
    Tape& t = b.tape();
    return t.add(t.matmul(x, b[pre + ".w"]), b[pre + ".b"]);
}

Matrix sinusoidal_embedding(const Matrix& t, int dim) {
    if (t.cols() != 1 || dim < 2 || dim % 2 != 0) {
        throw ShapeError("sinusoidal_embedding expects a column of times and an even dimension");
    }
    const int half = dim / 2;
    Matrix e(t.rows(), dim);
    for (int i = 0; i < half; ++i) {
        // Frequencies from 1 to 100 rad per unit time, geometric.
        const double w = half == 1 ? 1.0 : std::exp(std::log(100.0) * i / (half - 1));
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            e(r, i) = std::sin(w * t(r, 0));
            e(r, half + i) = std::cos(w * t(r, 0));
        }
    }
    return e;
}

Matrix one_hot(const std::vector<int>& labels, int classes) {
    Matrix m = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes) {
            throw ShapeError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(classes) + ")");
        }
        m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return m;
}

}  // namespace lac
