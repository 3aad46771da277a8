#pragma once

#include "lac/autodiff/param_set.hpp"
#include "lac/autodiff/tape.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace lac {

// f records a scalar on the tape given the bound parameters (indexed like the
// ParamSet).
using ParamFn = std::function<Var(Tape&, const std::vector<Var>&)>;
// f records a scalar on the tape given an input row vector (1xd).
using InputFn = std::function<Var(Tape&, Var)>;

struct ValueAndGrad {
    double value = 0.0;
    ParamSet grad;
};

ValueAndGrad value_and_grad(const ParamFn& f, const ParamSet& p);

// Gradient with respect to the input vector z; throws ShapeError if f's
// recorded graph rejects the input dimension.
Vector grad_wrt_input(const InputFn& f, const Vector& z);

// Evaluate f without recording gradients.
double evaluate(const InputFn& f, const Vector& z);
double evaluate(const ParamFn& f, const ParamSet& p);

// max_i |(f(x+h e_i) - f(x-h e_i)) / 2h - g_i| / (|g_i| + 1e-8) with g the
// reverse-mode gradient. Throws DivergenceError on non-finite f values.
double finite_diff_check(const InputFn& f, const Vector& x, double h);
double finite_diff_check(const ParamFn& f, const ParamSet& p, double h);

}  // namespace lac
