#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>

namespace lac {

// Dense row-major matrix. Row-major so a reshape is a reinterpretation of
// the same buffer; batches are laid out one sample per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Shape {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;

    friend bool operator==(const Shape&, const Shape&) = default;
};

inline Shape shape_of(const Matrix& m) { return {m.rows(), m.cols()}; }

inline std::string to_string(Shape s) {
    return std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

}  // namespace lac
