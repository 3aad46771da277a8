#include "lac/autodiff/grad.hpp"
#include "lac/autodiff/layers.hpp"
#include "lac/autodiff/tape.hpp"
#include "lac/error.hpp"
#include "lac/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace lac;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

ParamSet mlp_params(Rng& rng) {
    ParamSet p;
    add_linear(p, "l0", 2, 8, rng);
    add_linear(p, "l1", 8, 1, rng);
    return p;
}

}  // namespace

TEST_CASE("value_and_grad of w^2 and a constant") {
    ParamSet p;
    p.add("w", scalar(3.0));
    auto sq = value_and_grad([](Tape& t, const std::vector<Var>& v) { return t.mul(v[0], v[0]); }, p);
    CHECK(sq.value == doctest::Approx(9.0));
    CHECK(sq.grad.value(0)(0, 0) == doctest::Approx(6.0));

    auto c = value_and_grad([](Tape& t, const std::vector<Var>&) { return t.scalar_constant(4.5); }, p);
    CHECK(c.value == 4.5);
    CHECK(c.grad.value(0)(0, 0) == 0.0);
}

TEST_CASE("MLP squared output matches finite differences") {
    Rng rng(7);
    ParamSet p = mlp_params(rng);
    Matrix x = gaussian_matrix(1, 2, 1.0, rng);
    ParamFn f = [&](Tape& t, const std::vector<Var>& v) {
        Var h = t.tanh(t.add(t.matmul(t.constant(x), v[0]), v[1]));
        Var o = t.add(t.matmul(h, v[2]), v[3]);
        return t.sum(t.mul(o, o));
    };
    CHECK(finite_diff_check(f, p, 1e-4) < 1e-4);
}

TEST_CASE("every primitive has a correct adjoint") {
    Rng rng(11);
    Matrix a = gaussian_matrix(3, 4, 1.0, rng);
    Matrix w = gaussian_matrix(4, 4, 0.5, rng);
    ParamSet p;
    p.add("a", a);
    p.add("w", w);
    p.add("row", gaussian_matrix(1, 4, 1.0, rng));
    p.add("col", gaussian_matrix(3, 1, 1.0, rng));
    p.add("pos", (gaussian_matrix(3, 4, 0.3, rng).array().abs() + 0.5).matrix());
    ParamFn f = [](Tape& t, const std::vector<Var>& v) {
        Var x = t.matmul(v[0], v[1]);
        x = t.add(x, v[2]);
        x = t.mul(x, v[3]);
        x = t.sub(t.silu(x), t.scale(t.tanh(x), 0.3));
        Var s = t.softmax(x);
        Var n = t.rms_norm(x);
        Var l = t.log(v[4]);
        Var e = t.exp(t.scale(x, 0.1));
        Var cat = t.concat({s, n, l, e});
        Var sl = t.slice(cat, 2, 9);
        Var r = t.reshape(sl, 9, 3);
        Var rs = t.row_sum(t.mul(r, r));
        return t.add(t.mean(rs), t.sum(t.mul(cat, cat)));
    };
    CHECK(finite_diff_check(f, p, 1e-5) < 1e-6);
}

TEST_CASE("grad_wrt_input basic cases") {
    Vector z(3);
    z << 0.5, -1.0, 2.0;
    Vector g0 = grad_wrt_input([](Tape& t, Var) { return t.scalar_constant(2.0); }, z);
    CHECK(g0.isZero(0.0));
    Vector g1 = grad_wrt_input([](Tape& t, Var x) { return t.scale(t.sum(t.mul(x, x)), 0.5); }, z);
    CHECK((g1 - z).norm() == 0.0);

    Matrix a(2, 1);
    a << 1.0, 2.0;
    InputFn dim2 = [&](Tape& t, Var x) { return t.sum(t.matmul(x, t.constant(a))); };
    CHECK_THROWS_AS(grad_wrt_input(dim2, z), ShapeError);
}

TEST_CASE("finite_diff_check examples") {
    Vector a(3);
    a << 1.0, -2.0, 0.5;
    InputFn lin = [&](Tape& t, Var x) { return t.sum(t.mul(x, t.constant(a.transpose()))); };
    Vector x(3);
    x << 0.3, 0.1, -0.7;
    CHECK(finite_diff_check(lin, x, 0.5) < 1e-8);
    CHECK(finite_diff_check(lin, x, 1e-3) < 1e-8);

    InputFn cube = [](Tape& t, Var z) { return t.sum(t.mul(z, t.mul(z, z))); };
    Vector z(2);
    z << 1.0, 2.0;
    CHECK(finite_diff_check(cube, z, 1e-4) < 1e-6);

    CHECK_THROWS_AS(finite_diff_check(cube, z, 0.0), ConfigError);

    // log(|z|) has a pole at 0: the finite differences straddle it.
    InputFn pole = [](Tape& t, Var v) { return t.sum(t.log(t.mul(v, v))); };
    Vector at_pole = Vector::Zero(1);
    CHECK_THROWS_AS(finite_diff_check(pole, at_pole, 1e-3), DivergenceError);
    // A kink reports a large error without throwing.
    InputFn kink = [](Tape& t, Var v) { return t.sum(t.mul(v, t.tanh(t.scale(v, 1e6)))); };
    Vector small = Vector::Constant(1, 1e-9);
    double err = 0.0;
    CHECK_NOTHROW(err = finite_diff_check(kink, small, 1e-3));
    CHECK(err > 1e-2);
}

TEST_CASE("unsupported primitive names itself") {
    Tape t;
    Var a = t.variable(scalar(1.0));
    std::vector<Var> args{a};
    try {
        t.apply("erf", args);
        FAIL("expected throw");
    } catch (const UnsupportedPrimitive& e) {
        CHECK(e.primitive() == "erf");
    }
    CHECK(t.apply("tanh", args).scalar() == doctest::Approx(std::tanh(1.0)));
}

TEST_CASE("replay is bit exact and backward fills every adjoint") {
    Rng rng(3);
    Tape t;
    Var x = t.variable(gaussian_matrix(4, 3, 1.0, rng));
    Var w = t.variable(gaussian_matrix(3, 5, 1.0, rng));
    Var unused = t.variable(gaussian_matrix(2, 2, 1.0, rng));
    Var y = t.softmax(t.silu(t.matmul(x, w)));
    Var out = t.mean(t.mul(y, y));
    const Matrix before = out.value();
    t.backward(out);
    t.replay();
    CHECK(out.value() == before);
    CHECK(t.has_grad(unused));
    CHECK(t.grad(unused).isZero(0.0));
    CHECK(t.has_grad(y));
}

TEST_CASE("gradients are linear in the function") {
    Rng rng(5);
    ParamSet p = mlp_params(rng);
    Matrix x = gaussian_matrix(3, 2, 1.0, rng);
    auto net = [&](Tape& t, const std::vector<Var>& v) {
        return t.add(t.matmul(t.tanh(t.add(t.matmul(t.constant(x), v[0]), v[1])), v[2]), v[3]);
    };
    ParamFn f = [&](Tape& t, const std::vector<Var>& v) { return t.sum(t.exp(net(t, v))); };
    ParamFn g = [&](Tape& t, const std::vector<Var>& v) {
        Var o = net(t, v);
        return t.mean(t.mul(o, o));
    };
    const double a = 0.7;
    const double b = -1.3;
    ParamFn h = [&](Tape& t, const std::vector<Var>& v) { return t.add(t.scale(f(t, v), a), t.scale(g(t, v), b)); };
    ParamSet combo = value_and_grad(f, p).grad;
    combo.scale(a);
    combo.axpy(b, value_and_grad(g, p).grad);
    CHECK(combo.max_abs_diff(value_and_grad(h, p).grad) < 1e-10);
}

TEST_CASE("identical inputs give identical gradients") {
    Rng r1(9);
    Rng r2(9);
    ParamSet p1 = mlp_params(r1);
    ParamSet p2 = mlp_params(r2);
    CHECK(p1 == p2);
    ParamFn f = [](Tape& t, const std::vector<Var>& v) {
        Matrix x = Matrix::Constant(2, 2, 0.25);
        return t.sum(t.silu(t.add(t.matmul(t.constant(x), v[0]), v[1])));
    };
    auto a = value_and_grad(f, p1);
    auto b = value_and_grad(f, p2);
    CHECK(a.value == b.value);
    CHECK(a.grad == b.grad);
}

TEST_CASE("ParamSet shapes are fixed") {
    ParamSet p;
    p.add("w", Matrix::Zero(2, 3));
    CHECK_THROWS_AS(p.add("w", Matrix::Zero(1, 1)), Error);
    CHECK_THROWS_AS(p.assign("w", Matrix::Zero(3, 2)), ShapeError);
    CHECK_THROWS((void)p.index("missing"));
    p.values("w")(1, 2) = 4.0;
    CHECK(p.value("w")(1, 2) == 4.0);
    CHECK(p.zeros_like().shape(0) == Shape{2, 3});
}
