#include "lac/gen/policy.hpp"

#include "lac/error.hpp"

namespace lac {

Conditioning uniform_conditioning(Eigen::Index rows, double t, const std::vector<int>& y) {
    if (static_cast<Eigen::Index>(y.size()) != rows) {
        throw ShapeError("conditioning: label count does not match rows");
    }
    return {Matrix::Constant(rows, 1, t), y};
}

void add_trunk_params(ParamSet& p, const NetConfig& cfg, Rng& rng) {
    p.add("trunk.y_embed", gaussian_matrix(cfg.num_classes + 1, cfg.class_embed, 1.0, rng));
    int in = cfg.trunk_input();
    for (int l = 0; l < cfg.depth; ++l) {
        add_linear(p, "trunk.l" + std::to_string(l), in, cfg.hidden, rng);
        in = cfg.hidden;
    }
}

Var trunk_forward(const Bound& b, const NetConfig& cfg, Var z, const Conditioning& c, bool time_input,
                  std::vector<Var>* layers) {
    Tape& tape = b.tape();
    if (z.shape().cols != cfg.dim || z.shape().rows != c.rows() || static_cast<Eigen::Index>(c.y.size()) != c.rows()) {
        throw ShapeError("trunk: latent " + to_string(z.shape()) + " with " + std::to_string(c.rows()) +
                         " conditioning rows, expected dim " + std::to_string(cfg.dim));
    }
    Matrix temb = sinusoidal_embedding(c.t, cfg.time_embed);
    if (!time_input) {
        temb.setZero();
    }
    Var t_feat = tape.constant(std::move(temb));
    Var y_feat = tape.matmul(tape.constant(one_hot(c.y, cfg.num_classes + 1)), b["trunk.y_embed"]);
    Var h = tape.concat({z, t_feat, y_feat});
    for (int l = 0; l < cfg.depth; ++l) {
        h = tape.silu(linear(b, "trunk.l" + std::to_string(l), h));
        if (layers) {
            layers->push_back(h);
        }
    }
    return h;
}

PolicyNet PolicyNet::init(const NetConfig& cfg, ScheduleKind kind, double cond_dropout, Rng& rng) {
    if (cfg.dim < 1 || cfg.hidden < 1 || cfg.depth < 1 || cfg.num_classes < 1) {
        throw ConfigError("policy network sizes must be positive");
    }
    if (!(cond_dropout >= 0.0 && cond_dropout < 1.0)) {
        throw ConfigError("condition dropout must lie in [0, 1)");
    }
    PolicyNet p;
    p.cfg = cfg;
    p.kind = kind;
    p.cond_dropout = cond_dropout;
    add_trunk_params(p.params, cfg, rng);
    add_linear(p.params, "out", cfg.hidden, cfg.dim, rng);
    return p;
}

Var policy_forward(const Bound& b, const NetConfig& cfg, Var z, const Conditioning& c) {
    return linear(b, "out", trunk_forward(b, cfg, z, c));
}

Var guided_forward(const Bound& b, const NetConfig& cfg, Var z, const Conditioning& c, double cfg_scale) {
    if (cfg_scale < 0.0) {
        throw ConfigError("cfg scale must be >= 0");
    }
    Var cond = policy_forward(b, cfg, z, c);
    if (cfg_scale == 1.0) {
        return cond;
    }
    Conditioning null_c{c.t, std::vector<int>(c.y.size(), cfg.null_class())};
    Var uncond = policy_forward(b, cfg, z, null_c);
    Tape& t = b.tape();
    return t.add(uncond, t.scale(t.sub(cond, uncond), cfg_scale));
}

Matrix policy_predict(const PolicyNet& policy, const Matrix& z, const Conditioning& c, double cfg_scale) {
    Tape tape;
    Bound b(tape, policy.params, false);
    return guided_forward(b, policy.cfg, tape.constant(z), c, cfg_scale).value();
}

Matrix cfg_combine(const Matrix& cond, const Matrix& uncond, double scale) {
    if (shape_of(cond) != shape_of(uncond)) {
        throw ShapeError("cfg_combine: shape mismatch");
    }
    if (scale == 1.0) {
        return cond;
    }
    Matrix diff = cond - uncond;
    Matrix scaled = scale * diff;
    return uncond + scaled;
}

}  // namespace lac
