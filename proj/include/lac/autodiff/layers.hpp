#pragma once

#include "lac/autodiff/param_set.hpp"
#include "lac/autodiff/tape.hpp"
#include "lac/rng.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace lac {

// Parameters of one ParamSet recorded on a tape, looked up by name.
class Bound {
public:
    Bound(Tape& tape, const ParamSet& params, bool requires_grad);
    // Wrap variables already recorded for a set with the same layout.
    Bound(Tape& tape, const ParamSet& layout, std::vector<Var> vars);

    Var operator[](std::string_view name) const { return vars_[params_->index(name)]; }
    [[nodiscard]] const std::vector<Var>& vars() const { return vars_; }
    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] const ParamSet& params() const { return *params_; }
    // Adjoints after tape.backward(), laid out like params().
    [[nodiscard]] ParamSet grads() const;

private:
    Tape* tape_;
    const ParamSet* params_;
    std::vector<Var> vars_;
};

// Adds "<prefix>.w" (in x out) and "<prefix>.b" (1 x out).
void add_linear(ParamSet& p, const std::string& prefix, int in, int out, Rng& rng, double gain = 1.0);
void add_zero_linear(ParamSet& p, const std::string& prefix, int in, int out);

Var linear(const Bound& b, std::string_view prefix, Var x);

// Sinusoidal features of a column of scalars t in [0, 1]: [sin(w_i t), cos(w_i t)].
Matrix sinusoidal_embedding(const Matrix& t, int dim);

Matrix one_hot(const std::vector<int>& labels, int classes);

Matrix gaussian_matrix(int rows, int cols, double std, Rng& rng);

}  // namespace lac
