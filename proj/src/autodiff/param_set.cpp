#include "lac/autodiff/param_set.hpp"

#include "lac/error.hpp"

#include <algorithm>
#include <cmath>

namespace lac {

void ParamSet::add(std::string name, Matrix init) {
    if (lookup_.contains(name)) {
        throw ShapeError("duplicate parameter '" + name + "'");
    }
    lookup_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(init)});
}

bool ParamSet::contains(std::string_view name) const {
    return lookup_.contains(std::string(name));
}

std::size_t ParamSet::index(std::string_view name) const {
    auto it = lookup_.find(std::string(name));
    if (it == lookup_.end()) {
        throw ShapeError("unknown parameter '" + std::string(name) + "'");
    }
    return it->second;
}

Eigen::Map<Matrix> ParamSet::values(std::size_t i) {
    Matrix& m = entries_.at(i).value;
    return {m.data(), m.rows(), m.cols()};
}

void ParamSet::assign(std::string_view name, const Matrix& m) {
    Matrix& dst = entries_.at(index(name)).value;
    if (shape_of(dst) != shape_of(m)) {
        throw ShapeError("parameter '" + std::string(name) + "' has shape " +
                         to_string(shape_of(dst)) + ", got " + to_string(shape_of(m)));
    }
    dst = m;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (const auto& e : entries_) {
        out.add(e.name, Matrix::Zero(e.value.rows(), e.value.cols()));
    }
    return out;
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        n += static_cast<std::size_t>(e.value.size());
    }
    return n;
}

bool ParamSet::same_layout(const ParamSet& other) const {
    if (entries_.size() != other.entries_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name != other.entries_[i].name ||
            shape_of(entries_[i].value) != shape_of(other.entries_[i].value)) {
            return false;
        }
    }
    return true;
}

void ParamSet::axpy(double a, const ParamSet& x) {
    if (!same_layout(x)) {
        throw ShapeError("axpy on parameter sets with different layouts");
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        entries_[i].value += a * x.entries_[i].value;
    }
}

void ParamSet::scale(double a) {
    for (auto& e : entries_) {
        e.value *= a;
    }
}

double ParamSet::max_abs_diff(const ParamSet& other) const {
    if (!same_layout(other)) {
        throw ShapeError("comparing parameter sets with different layouts");
    }
    double m = 0.0;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        m = std::max(m, (entries_[i].value - other.entries_[i].value).cwiseAbs().maxCoeff());
    }
    return m;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
    if (!a.same_layout(b)) {
        return false;
    }
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
        if (a.entries_[i].value != b.entries_[i].value) {
            return false;
        }
    }
    return true;
}

}  // namespace lac
