#pragma once

#include "lac/autodiff/param_set.hpp"
#include "lac/autodiff/tensor.hpp"
#include "lac/error.hpp"

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lac {

class UnsupportedPrimitive : public Error {
public:
    explicit UnsupportedPrimitive(std::string primitive)
        : Error("unsupported primitive '" + primitive + "'"), primitive_(std::move(primitive)) {}
    [[nodiscard]] const std::string& primitive() const { return primitive_; }

private:
    std::string primitive_;
};

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    [[nodiscard]] const Matrix& value() const;
    [[nodiscard]] const Matrix& grad() const;
    [[nodiscard]] Shape shape() const;
    [[nodiscard]] double scalar() const;
};

enum class Op : std::uint8_t {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Tanh,
    Silu,
    Exp,
    Log,
    Sum,
    Mean,
    RowSum,
    Softmax,
    RmsNorm,
    Concat,
    Slice,
    Reshape,
};

std::string_view op_name(Op op);

// Single-use recording of primitive operations over dense matrices.
//
// Add/Sub/Mul broadcast an operand with one row or one column (or 1x1)
// against the other. Softmax and RmsNorm act row-wise.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value);
    Var variable(Matrix value);  // input that receives an adjoint
    Var scalar_constant(double v);

    // Records every entry of `params` as a variable; result is indexed like
    // the parameter set.
    std::vector<Var> bind(const ParamSet& params, bool requires_grad = true);

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var tanh(Var a);
    Var silu(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var sum(Var a);
    Var mean(Var a);
    Var row_sum(Var a);
    Var softmax(Var a);
    Var rms_norm(Var a, double eps = 1e-6);
    Var concat(std::initializer_list<Var> parts);
    Var concat(std::span<const Var> parts);
    Var slice(Var a, Eigen::Index col_begin, Eigen::Index col_count);
    Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);

    // Name-keyed dispatch over the supported primitive set. Unknown names
    // throw UnsupportedPrimitive.
    Var apply(std::string_view primitive, std::span<const Var> args);

    // Reverse pass from a 1x1 output; every node reachable from a variable
    // gets its adjoint populated.
    void backward(Var out);

    // Recompute all non-leaf values from the recorded leaves.
    void replay();

    void set_leaf(Var leaf, const Matrix& value);

    [[nodiscard]] const Matrix& value(Var v) const { return nodes_.at(check(v)).value; }
    [[nodiscard]] const Matrix& grad(Var v) const;
    [[nodiscard]] bool has_grad(Var v) const;
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] Op op(Var v) const { return nodes_.at(check(v)).op; }

private:
    struct Node {
        Op op = Op::Leaf;
        int a = -1;
        int b = -1;
        double s = 0.0;
        Eigen::Index i0 = 0;
        Eigen::Index i1 = 0;
        std::vector<int> parts;
        bool needs_grad = false;
        bool has_grad = false;
        Matrix value;
        Matrix grad;
    };

    int check(Var v) const;
    Var push(Node n);
    void evaluate(Node& n) const;
    void accumulate(int id, const Matrix& g);
    void accumulate(int id, Matrix&& g);

    std::vector<Node> nodes_;
};

// Operator sugar for network code.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator*(double s, Var a) { return a.tape->scale(a, s); }
inline Var matmul(Var a, Var b) { return a.tape->matmul(a, b); }

}  // namespace lac
