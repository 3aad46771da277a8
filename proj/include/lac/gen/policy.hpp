#pragma once

#include "lac/autodiff/layers.hpp"
#include "lac/autodiff/param_set.hpp"
#include "lac/autodiff/tape.hpp"
#include "lac/gen/schedule.hpp"
#include "lac/rng.hpp"

#include <vector>

namespace lac {

struct NetConfig {
    int dim = 2;
    int num_classes = 4;
    int hidden = 64;
    int depth = 3;
    int time_embed = 16;
    int class_embed = 8;

    [[nodiscard]] int null_class() const { return num_classes; }
    [[nodiscard]] int trunk_input() const { return dim + time_embed + class_embed; }
    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// Per-sample conditioning for a batch: timestep column and class labels.
struct Conditioning {
    Matrix t;
    std::vector<int> y;

    [[nodiscard]] Eigen::Index rows() const { return t.rows(); }
};

Conditioning uniform_conditioning(Eigen::Index rows, double t, const std::vector<int>& y);

// Shared trunk: MLP over [z, sinusoidal(t), embed(y)] with SiLU activations.
// Parameter names live under "trunk.". With `time_input` false the time
// features are zeroed. `layers`, when given, receives every hidden output.
Var trunk_forward(const Bound& b, const NetConfig& cfg, Var z, const Conditioning& c, bool time_input = true,
                  std::vector<Var>* layers = nullptr);

void add_trunk_params(ParamSet& p, const NetConfig& cfg, Rng& rng);

// Denoiser: trunk followed by a linear read-out to the latent dimension.
// Predicts eps for ddpm and the velocity x1 - x0 for flow-ot.
struct PolicyNet {
    NetConfig cfg;
    ScheduleKind kind = ScheduleKind::FlowOt;
    double cond_dropout = 0.1;
    ParamSet params;

    static PolicyNet init(const NetConfig& cfg, ScheduleKind kind, double cond_dropout, Rng& rng);
};

Var policy_forward(const Bound& b, const NetConfig& cfg, Var z, const Conditioning& c);

// pred = uncond + scale (cond - uncond); scale 1 returns cond unchanged and
// skips the unconditional pass.
Var guided_forward(const Bound& b, const NetConfig& cfg, Var z, const Conditioning& c, double cfg_scale);

// Gradient-free evaluation.
Matrix policy_predict(const PolicyNet& policy, const Matrix& z, const Conditioning& c, double cfg_scale = 1.0);

Matrix cfg_combine(const Matrix& cond, const Matrix& uncond, double scale);

}  // namespace lac
