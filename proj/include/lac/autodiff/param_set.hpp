#pragma once

#include "lac/autodiff/tensor.hpp"

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lac {

// Ordered collection of named dense tensors. Shapes are fixed when an entry
// is added; values are mutable through fixed-size maps only.
class ParamSet {
public:
    struct Entry {
        std::string name;
        Matrix value;
    };

    void add(std::string name, Matrix init);

    [[nodiscard]] bool contains(std::string_view name) const;
    [[nodiscard]] std::size_t index(std::string_view name) const;
    [[nodiscard]] std::size_t size() const { return entries_.size(); }
    [[nodiscard]] bool empty() const { return entries_.empty(); }

    [[nodiscard]] const std::string& name(std::size_t i) const { return entries_.at(i).name; }
    [[nodiscard]] const Matrix& value(std::size_t i) const { return entries_.at(i).value; }
    [[nodiscard]] const Matrix& value(std::string_view name) const { return value(index(name)); }
    [[nodiscard]] Shape shape(std::size_t i) const { return shape_of(value(i)); }

    // Writable view; cannot change the shape.
    Eigen::Map<Matrix> values(std::size_t i);
    Eigen::Map<Matrix> values(std::string_view name) { return values(index(name)); }

    // Overwrite an entry; throws ShapeError on a shape change.
    void assign(std::string_view name, const Matrix& m);

    // Same names and shapes, all values zero.
    [[nodiscard]] ParamSet zeros_like() const;

    [[nodiscard]] std::size_t scalar_count() const;
    [[nodiscard]] bool same_layout(const ParamSet& other) const;

    [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }

    // Element-wise helpers used by optimisers and gradient algebra.
    void axpy(double a, const ParamSet& x);  // this += a * x
    void scale(double a);
    [[nodiscard]] double max_abs_diff(const ParamSet& other) const;

    friend bool operator==(const ParamSet& a, const ParamSet& b);

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> lookup_;
};

}  // namespace lac
