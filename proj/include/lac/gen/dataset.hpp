#pragma once

#include "lac/autodiff/tensor.hpp"
#include "lac/rng.hpp"

#include <vector>

namespace lac {

// Isotropic Gaussian mixture with class-conditional component weights.
// Class y draws component c with probability class_weights[y][c]; each class
// also names one designated target component used by the reward proxies.
struct TargetMixture {
    int dim = 2;
    std::vector<Vector> means;
    double component_std = 0.1;
    std::vector<std::vector<double>> class_weights;
    std::vector<int> target_component;

    [[nodiscard]] int num_classes() const { return static_cast<int>(class_weights.size()); }
    [[nodiscard]] int num_components() const { return static_cast<int>(means.size()); }
    [[nodiscard]] const Vector& target_mean(int y) const;

    // Log-density of x under component c.
    [[nodiscard]] double component_log_density(const Vector& x, int c) const;

    void validate() const;
};

struct MixtureParams {
    int dim = 2;
    int modes = 8;
    double radius = 2.0;
    double component_std = 0.1;
    // Per-class weight on the class's own target mode (even modes 0, 2, ...).
    // The rest of the class's mass spreads evenly over the odd modes.
    std::vector<double> target_weights{0.35, 0.45, 0.55, 0.65};
};

// Modes on a circle in the first two coordinates; class y targets mode 2y.
TargetMixture make_ring_mixture(const MixtureParams& p);

// Plain unconditional 8-Gaussians ring, every class uses all modes equally.
TargetMixture make_eight_gaussians(int dim = 2, double radius = 2.0, double std = 0.1);

struct Batch {
    Matrix x0;
    std::vector<int> y;
};

Batch sample_mixture(const TargetMixture& m, int n, Rng& rng);
Matrix sample_class(const TargetMixture& m, int y, int n, Rng& rng);

}  // namespace lac
