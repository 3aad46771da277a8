#include "lac/autodiff/tape.hpp"

#include <algorithm>
#include <cmath>

namespace lac {

namespace {

Shape broadcast_shape(Op op, Shape a, Shape b) {
    auto dim = [&](Eigen::Index x, Eigen::Index y) {
        if (x == y || y == 1) {
            return x;
        }
        if (x == 1) {
            return y;
        }
        throw ShapeError(std::string(op_name(op)) + ": cannot broadcast " + to_string(a) + " with " +
                         to_string(b));
    };
    return {dim(a.rows, b.rows), dim(a.cols, b.cols)};
}

Matrix expand(const Matrix& m, Shape s) {
    if (shape_of(m) == s) {
        return m;
    }
    return m.replicate(s.rows / m.rows(), s.cols / m.cols());
}

Matrix reduce_to(const Matrix& g, Shape s) {
    if (shape_of(g) == s) {
        return g;
    }
    Matrix r = g;
    if (s.rows == 1 && r.rows() != 1) {
        r = r.colwise().sum().eval();
    }
    if (s.cols == 1 && r.cols() != 1) {
        r = r.rowwise().sum().eval();
    }
    return r;
}

// a op b with one operand broadcast along rows or columns, without
// materialising the expanded copy in the common bias/gate cases.
Matrix broadcast_binary(Op op, const Matrix& a, const Matrix& b, Shape s) {
    const Shape sa = shape_of(a);
    const Shape sb = shape_of(b);
    const bool sub = op == Op::Sub;
    if (sa == s && sb.rows == 1 && sb.cols == s.cols) {
        auto r = b.row(0).array();
        if (op == Op::Add) return (a.array().rowwise() + r).matrix();
        if (sub) return (a.array().rowwise() - r).matrix();
        return (a.array().rowwise() * r).matrix();
    }
    if (sb == s && sa.rows == 1 && sa.cols == s.cols) {
        auto r = a.row(0).array();
        if (op == Op::Add) return (b.array().rowwise() + r).matrix();
        if (sub) return (-(b.array().rowwise() - r)).matrix();
        return (b.array().rowwise() * r).matrix();
    }
    if (sa == s && sb.cols == 1 && sb.rows == s.rows) {
        auto c = b.col(0).array();
        if (op == Op::Add) return (a.array().colwise() + c).matrix();
        if (sub) return (a.array().colwise() - c).matrix();
        return (a.array().colwise() * c).matrix();
    }
    if (sb == s && sa.cols == 1 && sa.rows == s.rows) {
        auto c = a.col(0).array();
        if (op == Op::Add) return (b.array().colwise() + c).matrix();
        if (sub) return (-(b.array().colwise() - c)).matrix();
        return (b.array().colwise() * c).matrix();
    }
    const Matrix ea = expand(a, s);
    const Matrix eb = expand(b, s);
    if (op == Op::Add) return ea + eb;
    if (sub) return ea - eb;
    return ea.cwiseProduct(eb);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::string_view op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::Tanh: return "tanh";
        case Op::Silu: return "silu";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::RowSum: return "row_sum";
        case Op::Softmax: return "softmax";
        case Op::RmsNorm: return "rms_norm";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::Reshape: return "reshape";
    }
    return "?";
}

const Matrix& Var::value() const { return tape->value(*this); }
const Matrix& Var::grad() const { return tape->grad(*this); }
Shape Var::shape() const { return shape_of(value()); }
double Var::scalar() const {
    const Matrix& v = value();
    if (v.size() != 1) {
        throw ShapeError("scalar() on a " + to_string(shape_of(v)) + " value");
    }
    return v(0, 0);
}

int Tape::check(Var v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        throw ShapeError("variable does not belong to this tape");
    }
    return v.id;
}

Var Tape::push(Node n) {
    n.needs_grad = n.op == Op::Leaf ? n.needs_grad : false;
    if (n.op != Op::Leaf) {
        for (int in : {n.a, n.b}) {
            if (in >= 0 && nodes_[static_cast<std::size_t>(in)].needs_grad) {
                n.needs_grad = true;
            }
        }
        for (int in : n.parts) {
            if (nodes_[static_cast<std::size_t>(in)].needs_grad) {
                n.needs_grad = true;
            }
        }
        evaluate(n);
    }
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::variable(Matrix value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = true;
    return push(std::move(n));
}

Var Tape::scalar_constant(double v) { return constant(Matrix::Constant(1, 1, v)); }

std::vector<Var> Tape::bind(const ParamSet& params, bool requires_grad) {
    std::vector<Var> out;
    out.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        out.push_back(requires_grad ? variable(params.value(i)) : constant(params.value(i)));
    }
    return out;
}

void Tape::set_leaf(Var leaf, const Matrix& value) {
    Node& n = nodes_.at(check(leaf));
    if (n.op != Op::Leaf) {
        throw ShapeError("set_leaf on a non-leaf node");
    }
    if (shape_of(n.value) != shape_of(value)) {
        throw ShapeError("set_leaf shape change " + to_string(shape_of(n.value)) + " -> " +
                         to_string(shape_of(value)));
    }
    n.value = value;
}

void Tape::evaluate(Node& n) const {
    auto in = [&](int id) -> const Matrix& { return nodes_[static_cast<std::size_t>(id)].value; };
    switch (n.op) {
        case Op::Leaf:
            return;
        case Op::MatMul: {
            const Matrix& a = in(n.a);
            const Matrix& b = in(n.b);
            if (a.cols() != b.rows()) {
                throw ShapeError("matmul: " + to_string(shape_of(a)) + " x " + to_string(shape_of(b)));
            }
            n.value.noalias() = a * b;
            return;
        }
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            const Matrix& a = in(n.a);
            const Matrix& b = in(n.b);
            const Shape s = broadcast_shape(n.op, shape_of(a), shape_of(b));
            if (shape_of(a) == s && shape_of(b) == s) {
                if (n.op == Op::Add) {
                    n.value = a + b;
                } else if (n.op == Op::Sub) {
                    n.value = a - b;
                } else {
                    n.value = a.cwiseProduct(b);
                }
                return;
            }
            n.value = broadcast_binary(n.op, a, b, s);
            return;
        }
        case Op::Scale:
            n.value = n.s * in(n.a);
            return;
        case Op::Tanh:
            n.value = in(n.a).array().tanh().matrix();
            return;
        case Op::Silu:
            n.value = in(n.a).unaryExpr([](double x) { return x * sigmoid(x); });
            return;
        case Op::Exp:
            n.value = in(n.a).array().exp().matrix();
            return;
        case Op::Log:
            n.value = in(n.a).array().log().matrix();
            return;
        case Op::Sum:
            n.value = Matrix::Constant(1, 1, in(n.a).sum());
            return;
        case Op::Mean: {
            const Matrix& a = in(n.a);
            n.value = Matrix::Constant(1, 1, a.sum() / static_cast<double>(a.size()));
            return;
        }
        case Op::RowSum:
            n.value = in(n.a).rowwise().sum();
            return;
        case Op::Softmax: {
            const Matrix& a = in(n.a);
            n.value.resize(a.rows(), a.cols());
            for (Eigen::Index r = 0; r < a.rows(); ++r) {
                const double m = a.row(r).maxCoeff();
                n.value.row(r) = (a.row(r).array() - m).exp().matrix();
                n.value.row(r) /= n.value.row(r).sum();
            }
            return;
        }
        case Op::RmsNorm: {
            const Matrix& a = in(n.a);
            n.value.resize(a.rows(), a.cols());
            const double inv_n = 1.0 / static_cast<double>(a.cols());
            for (Eigen::Index r = 0; r < a.rows(); ++r) {
                const double rms = std::sqrt(a.row(r).squaredNorm() * inv_n + n.s);
                n.value.row(r) = a.row(r) / rms;
            }
            return;
        }
        case Op::Concat: {
            Eigen::Index rows = in(n.parts.front()).rows();
            Eigen::Index cols = 0;
            for (int p : n.parts) {
                if (in(p).rows() != rows) {
                    throw ShapeError("concat: row mismatch " + std::to_string(in(p).rows()) + " vs " +
                                     std::to_string(rows));
                }
                cols += in(p).cols();
            }
            n.value.resize(rows, cols);
            Eigen::Index c = 0;
            for (int p : n.parts) {
                n.value.middleCols(c, in(p).cols()) = in(p);
                c += in(p).cols();
            }
            return;
        }
        case Op::Slice: {
            const Matrix& a = in(n.a);
            if (n.i0 < 0 || n.i1 < 0 || n.i0 + n.i1 > a.cols()) {
                throw ShapeError("slice out of range");
            }
            n.value = a.middleCols(n.i0, n.i1);
            return;
        }
        case Op::Reshape: {
            const Matrix& a = in(n.a);
            if (n.i0 * n.i1 != a.size()) {
                throw ShapeError("reshape " + to_string(shape_of(a)) + " -> " + std::to_string(n.i0) + "x" +
                                 std::to_string(n.i1));
            }
            n.value = Eigen::Map<const Matrix>(a.data(), n.i0, n.i1);
            return;
        }
    }
}

Var Tape::matmul(Var a, Var b) {
    Node n;
    n.op = Op::MatMul;
    n.a = check(a);
    n.b = check(b);
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    Node n;
    n.op = Op::Add;
    n.a = check(a);
    n.b = check(b);
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    Node n;
    n.op = Op::Sub;
    n.a = check(a);
    n.b = check(b);
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    Node n;
    n.op = Op::Mul;
    n.a = check(a);
    n.b = check(b);
    return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
    Node n;
    n.op = Op::Scale;
    n.a = check(a);
    n.s = s;
    return push(std::move(n));
}

#define LAC_UNARY(fn, OPCODE)    \
    Var Tape::fn(Var a) {        \
        Node n;                  \
        n.op = Op::OPCODE;       \
        n.a = check(a);          \
        return push(std::move(n)); \
    }

LAC_UNARY(tanh, Tanh)
LAC_UNARY(silu, Silu)
LAC_UNARY(exp, Exp)
LAC_UNARY(log, Log)
LAC_UNARY(sum, Sum)
LAC_UNARY(mean, Mean)
LAC_UNARY(row_sum, RowSum)
LAC_UNARY(softmax, Softmax)
#undef LAC_UNARY

Var Tape::rms_norm(Var a, double eps) {
    Node n;
    n.op = Op::RmsNorm;
    n.a = check(a);
    n.s = eps;
    return push(std::move(n));
}

Var Tape::concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var Tape::concat(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("concat of nothing");
    }
    Node n;
    n.op = Op::Concat;
    for (Var p : parts) {
        n.parts.push_back(check(p));
    }
    return push(std::move(n));
}

Var Tape::slice(Var a, Eigen::Index col_begin, Eigen::Index col_count) {
    Node n;
    n.op = Op::Slice;
    n.a = check(a);
    n.i0 = col_begin;
    n.i1 = col_count;
    return push(std::move(n));
}

Var Tape::reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
    Node n;
    n.op = Op::Reshape;
    n.a = check(a);
    n.i0 = rows;
    n.i1 = cols;
    return push(std::move(n));
}

Var Tape::apply(std::string_view primitive, std::span<const Var> args) {
    auto need = [&](std::size_t k) {
        if (args.size() != k) {
            throw ShapeError(std::string(primitive) + " expects " + std::to_string(k) + " argument(s), got " +
                             std::to_string(args.size()));
        }
    };
    if (primitive == "matmul") { need(2); return matmul(args[0], args[1]); }
    if (primitive == "add") { need(2); return add(args[0], args[1]); }
    if (primitive == "sub") { need(2); return sub(args[0], args[1]); }
    if (primitive == "mul") { need(2); return mul(args[0], args[1]); }
    if (primitive == "tanh") { need(1); return tanh(args[0]); }
    if (primitive == "silu") { need(1); return silu(args[0]); }
    if (primitive == "exp") { need(1); return exp(args[0]); }
    if (primitive == "log") { need(1); return log(args[0]); }
    if (primitive == "sum") { need(1); return sum(args[0]); }
    if (primitive == "mean") { need(1); return mean(args[0]); }
    if (primitive == "row_sum") { need(1); return row_sum(args[0]); }
    if (primitive == "softmax") { need(1); return softmax(args[0]); }
    if (primitive == "rms_norm") { need(1); return rms_norm(args[0]); }
    if (primitive == "concat") { return concat(args); }
    throw UnsupportedPrimitive(std::string(primitive));
}

const Matrix& Tape::grad(Var v) const {
    const Node& n = nodes_.at(check(v));
    if (!n.has_grad) {
        throw ShapeError("no adjoint recorded for node " + std::to_string(v.id) + " (" +
                         std::string(op_name(n.op)) + ")");
    }
    return n.grad;
}

bool Tape::has_grad(Var v) const { return nodes_.at(check(v)).has_grad; }

void Tape::accumulate(int id, Matrix&& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) {
        return;
    }
    if (!n.has_grad) {
        n.grad = std::move(g);
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Tape::accumulate(int id, const Matrix& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) {
        return;
    }
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Tape::backward(Var out) {
    const int root = check(out);
    if (nodes_[static_cast<std::size_t>(root)].value.size() != 1) {
        throw ShapeError("backward from a non-scalar output");
    }
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad.resize(0, 0);
    }
    {
        Node& r = nodes_[static_cast<std::size_t>(root)];
        r.grad = Matrix::Ones(1, 1);
        r.has_grad = true;
    }
    // Every node that influences the root (and depends on a variable) gets an
    // adjoint, zero if the path contributes nothing numerically.
    for (int id = root; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || !n.has_grad || n.op == Op::Leaf) {
            continue;
        }
        const Matrix& g = n.grad;
        auto val = [&](int i) -> const Matrix& { return nodes_[static_cast<std::size_t>(i)].value; };
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::MatMul:
                if (nodes_[static_cast<std::size_t>(n.a)].needs_grad) {
                    accumulate(n.a, g * val(n.b).transpose());
                }
                if (nodes_[static_cast<std::size_t>(n.b)].needs_grad) {
                    accumulate(n.b, val(n.a).transpose() * g);
                }
                break;
            case Op::Add:
                accumulate(n.a, reduce_to(g, shape_of(val(n.a))));
                accumulate(n.b, reduce_to(g, shape_of(val(n.b))));
                break;
            case Op::Sub:
                accumulate(n.a, reduce_to(g, shape_of(val(n.a))));
                accumulate(n.b, reduce_to(-g, shape_of(val(n.b))));
                break;
            case Op::Mul: {
                const Shape s = shape_of(n.value);
                if (nodes_[static_cast<std::size_t>(n.a)].needs_grad) {
                    accumulate(n.a, reduce_to(broadcast_binary(Op::Mul, g, val(n.b), s), shape_of(val(n.a))));
                }
                if (nodes_[static_cast<std::size_t>(n.b)].needs_grad) {
                    accumulate(n.b, reduce_to(broadcast_binary(Op::Mul, g, val(n.a), s), shape_of(val(n.b))));
                }
                break;
            }
            case Op::Scale:
                accumulate(n.a, n.s * g);
                break;
            case Op::Tanh:
                accumulate(n.a, g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
                break;
            case Op::Silu: {
                const Matrix& x = val(n.a);
                Matrix d = x.unaryExpr([](double v) {
                    const double s = sigmoid(v);
                    return s * (1.0 + v * (1.0 - s));
                });
                accumulate(n.a, g.cwiseProduct(d));
                break;
            }
            case Op::Exp:
                accumulate(n.a, g.cwiseProduct(n.value));
                break;
            case Op::Log:
                accumulate(n.a, g.cwiseQuotient(val(n.a)));
                break;
            case Op::Sum: {
                const Matrix& a = val(n.a);
                accumulate(n.a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
                break;
            }
            case Op::Mean: {
                const Matrix& a = val(n.a);
                accumulate(n.a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<double>(a.size())));
                break;
            }
            case Op::RowSum: {
                const Matrix& a = val(n.a);
                accumulate(n.a, g.replicate(1, a.cols()));
                break;
            }
            case Op::Softmax: {
                const Matrix& y = n.value;
                Matrix dot = g.cwiseProduct(y).rowwise().sum();
                Matrix ga = y.cwiseProduct(g - dot.replicate(1, y.cols()));
                accumulate(n.a, ga);
                break;
            }
            case Op::RmsNorm: {
                const Matrix& x = val(n.a);
                const Matrix& y = n.value;
                const double inv_n = 1.0 / static_cast<double>(x.cols());
                Matrix ga(x.rows(), x.cols());
                for (Eigen::Index r = 0; r < x.rows(); ++r) {
                    const double rms = std::sqrt(x.row(r).squaredNorm() * inv_n + n.s);
                    const double proj = g.row(r).dot(y.row(r)) * inv_n;
                    ga.row(r) = (g.row(r) - proj * y.row(r)) / rms;
                }
                accumulate(n.a, ga);
                break;
            }
            case Op::Concat: {
                Eigen::Index c = 0;
                for (int p : n.parts) {
                    const Eigen::Index w = val(p).cols();
                    accumulate(p, g.middleCols(c, w));
                    c += w;
                }
                break;
            }
            case Op::Slice: {
                const Matrix& a = val(n.a);
                Matrix ga = Matrix::Zero(a.rows(), a.cols());
                ga.middleCols(n.i0, n.i1) = g;
                accumulate(n.a, ga);
                break;
            }
            case Op::Reshape: {
                const Matrix& a = val(n.a);
                accumulate(n.a, Eigen::Map<const Matrix>(g.data(), a.rows(), a.cols()));
                break;
            }
        }
    }
    // Populate zero adjoints for variable nodes the root does not depend on
    // through any recorded path, so every recorded node carries an adjoint.
    for (auto& n : nodes_) {
        if (n.needs_grad && !n.has_grad) {
            n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
            n.has_grad = true;
        }
    }
}

void Tape::replay() {
    for (auto& n : nodes_) {
        evaluate(n);
    }
}

}  // namespace lac
