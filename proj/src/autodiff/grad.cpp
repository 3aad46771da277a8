#include "lac/autodiff/grad.hpp"

#include "lac/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lac {

namespace {

constexpr double kRelFloor = 1e-8;

Var check_scalar(Var out) {
    if (out.shape() != Shape{1, 1}) {
        throw ShapeError("function must return a 1x1 value, got " + to_string(out.shape()));
    }
    return out;
}

double finite_or_throw(double v, const char* what) {
    if (!std::isfinite(v)) {
        throw DivergenceError(std::string("non-finite function value at ") + what);
    }
    return v;
}

}  // namespace

ValueAndGrad value_and_grad(const ParamFn& f, const ParamSet& p) {
    Tape tape;
    const std::vector<Var> vars = tape.bind(p, true);
    Var out = check_scalar(f(tape, vars));
    tape.backward(out);
    ValueAndGrad r{out.scalar(), p.zeros_like()};
    for (std::size_t i = 0; i < vars.size(); ++i) {
        r.grad.values(i) = tape.grad(vars[i]);
    }
    return r;
}

double evaluate(const ParamFn& f, const ParamSet& p) {
    Tape tape;
    const std::vector<Var> vars = tape.bind(p, false);
    return check_scalar(f(tape, vars)).scalar();
}

Vector grad_wrt_input(const InputFn& f, const Vector& z) {
    Tape tape;
    Var in = tape.variable(z.transpose());
    Var out = check_scalar(f(tape, in));
    tape.backward(out);
    const Matrix& g = tape.grad(in);
    if (g.size() != z.size()) {
        throw ShapeError("input gradient has " + std::to_string(g.size()) + " entries for a " +
                         std::to_string(z.size()) + "-vector");
    }
    return Eigen::Map<const Vector>(g.data(), g.size());
}

double evaluate(const InputFn& f, const Vector& z) {
    Tape tape;
    Var in = tape.constant(z.transpose());
    return check_scalar(f(tape, in)).scalar();
}

double finite_diff_check(const InputFn& f, const Vector& x, double h) {
    if (!(h > 0.0)) {
        throw ConfigError("finite_diff_check needs h > 0");
    }
    finite_or_throw(evaluate(f, x), "x");
    const Vector g = grad_wrt_input(f, x);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vector xp = x;
        Vector xm = x;
        xp(i) += h;
        xm(i) -= h;
        const double fp = finite_or_throw(evaluate(f, xp), "x + h e_i");
        const double fm = finite_or_throw(evaluate(f, xm), "x - h e_i");
        const double fd = (fp - fm) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - g(i)) / (std::abs(g(i)) + kRelFloor));
    }
    return worst;
}

double finite_diff_check(const ParamFn& f, const ParamSet& p, double h) {
    if (!(h > 0.0)) {
        throw ConfigError("finite_diff_check needs h > 0");
    }
    const ValueAndGrad vg = value_and_grad(f, p);
    finite_or_throw(vg.value, "p");
    ParamSet probe = p;
    double worst = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        auto view = probe.values(k);
        const Matrix& g = vg.grad.value(k);
        for (Eigen::Index i = 0; i < view.size(); ++i) {
            const double orig = view.data()[i];
            view.data()[i] = orig + h;
            const double fp = finite_or_throw(evaluate(f, probe), "p + h e_i");
            view.data()[i] = orig - h;
            const double fm = finite_or_throw(evaluate(f, probe), "p - h e_i");
            view.data()[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double gi = g.data()[i];
            worst = std::max(worst, std::abs(fd - gi) / (std::abs(gi) + kRelFloor));
        }
    }
    return worst;
}

}  // namespace lac
