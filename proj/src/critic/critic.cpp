#include "lac/critic/critic.hpp"

#include "lac/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lac {

std::string to_string(Pooling p) { return p == Pooling::Mlp ? "mlp" : "query-attention"; }

Pooling parse_pooling(const std::string& s) {
    if (s == "mlp") {
        return Pooling::Mlp;
    }
    if (s == "query-attention" || s == "attention") {
        return Pooling::QueryAttention;
    }
    throw ConfigError("unknown pooling '" + s + "' (mlp, query-attention)");
}

std::string head_prefix(int head) { return "head" + std::to_string(head); }

bool is_trunk_param(const std::string& name) { return name.rfind("trunk.", 0) == 0; }

int CriticNet::head_for(const std::string& id) const {
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        if (rewards[i] == id) {
            return flags.shared_head ? 0 : static_cast<int>(i);
        }
    }
    throw ConfigError("critic has no head for reward '" + id + "'");
}

int CriticNet::feature_dim() const {
    if (flags.pooling == Pooling::QueryAttention) {
        return static_cast<int>(flags.attn_layers.size()) * flags.token_dim;
    }
    return cfg.hidden;
}

int CriticNet::cond_dim() const {
    return (flags.time_cond_head ? cfg.time_embed : 0) + (flags.text_cond_head ? cfg.num_classes + 1 : 0);
}

namespace {

// Parameters of an AdaLN coefficient generator producing `groups` blocks of
// width `width`, initialised to scale = 1, shift = 0, gate = 0 per triple.
void add_adaln(ParamSet& p, const std::string& prefix, int cond, int hidden, int width, int triples, Rng& rng) {
    Matrix bias = Matrix::Zero(1, 3 * triples * width);
    for (int g = 0; g < triples; ++g) {
        bias.block(0, 3 * g * width, 1, width).setOnes();
    }
    if (cond == 0) {
        p.add(prefix + ".const", bias);
        return;
    }
    add_linear(p, prefix + ".l0", cond, hidden, rng);
    p.add(prefix + ".l1.w", Matrix::Zero(hidden, 3 * triples * width));
    p.add(prefix + ".l1.b", bias);
}

Var adaln_coefficients(const Bound& b, const std::string& prefix, const Var* cond) {
    if (cond == nullptr) {
        return b[prefix + ".const"];
    }
    Tape& t = b.tape();
    return linear(b, prefix + ".l1", t.silu(linear(b, prefix + ".l0", *cond)));
}

void check_finite(Var v, const std::string& stage) {
    if (!v.value().allFinite()) {
        throw DivergenceError("critic: non-finite activation in " + stage);
    }
}

struct Features {
    Var feat;
    Var cond;
    bool has_cond = false;
};

Features critic_features(const Bound& b, const CriticNet& critic, Var z, const Conditioning& c) {
    Tape& tape = b.tape();
    const CriticFlags& f = critic.flags;
    std::vector<Var> layers;
    Var h = trunk_forward(b, critic.cfg, z, c, f.trunk_time_input, &layers);
    check_finite(h, "trunk");

    Features out{h, h, false};
    std::vector<Var> cond_parts;
    if (f.time_cond_head) {
        cond_parts.push_back(tape.constant(sinusoidal_embedding(c.t, critic.cfg.time_embed)));
    }
    if (f.text_cond_head) {
        cond_parts.push_back(tape.constant(one_hot(c.y, critic.cfg.num_classes + 1)));
    }
    if (!cond_parts.empty()) {
        out.cond = cond_parts.size() == 1 ? cond_parts.front() : tape.concat(std::span<const Var>(cond_parts));
        out.has_cond = true;
    }
    if (f.pooling == Pooling::Mlp) {
        return out;
    }

    const Eigen::Index rows = c.rows();
    const int dt = f.token_dim;
    const int n = critic.cfg.hidden / dt;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dt));
    std::vector<Var> tokens;
    for (int layer : f.attn_layers) {
        const std::string pre = "attn" + std::to_string(layer);
        Var x = tape.rms_norm(tape.reshape(layers.at(static_cast<std::size_t>(layer)), rows * n, dt));
        Var k = tape.reshape(tape.rms_norm(tape.matmul(x, b[pre + ".wk"])), rows, n * dt);
        Var v = tape.reshape(tape.matmul(x, b[pre + ".wv"]), rows, n * dt);

        Var ada = adaln_coefficients(b, pre + ".ada", out.has_cond ? &out.cond : nullptr);
        auto part = [&](int i) { return tape.slice(ada, static_cast<Eigen::Index>(i) * dt, dt); };
        Var q0 = b[pre + ".q0"];
        Var q_in = tape.rms_norm(tape.add(tape.mul(part(0), q0), part(1)));
        Var q = tape.rms_norm(tape.matmul(q_in, b[pre + ".wq"]));

        std::vector<Var> scores;
        for (int i = 0; i < n; ++i) {
            scores.push_back(tape.row_sum(tape.mul(tape.slice(k, static_cast<Eigen::Index>(i) * dt, dt), q)));
        }
        Var w = tape.softmax(tape.scale(tape.concat(std::span<const Var>(scores)), inv_sqrt));
        Var pooled = tape.mul(tape.slice(w, 0, 1), tape.slice(v, 0, dt));
        for (int i = 1; i < n; ++i) {
            pooled = tape.add(pooled, tape.mul(tape.slice(w, i, 1), tape.slice(v, static_cast<Eigen::Index>(i) * dt, dt)));
        }
        Var tok = tape.add(q0, tape.mul(part(2), tape.matmul(pooled, b[pre + ".wo"])));
        Var ffn_in = tape.add(tape.mul(part(3), tape.rms_norm(tok)), part(4));
        Var ffn = linear(b, pre + ".ffn2", tape.silu(linear(b, pre + ".ffn1", ffn_in)));
        tok = tape.add(tok, tape.mul(part(5), ffn));
        if (tok.shape().rows != rows) {
            // all-constant modulation with an input-independent query
            tok = tape.add(tok, tape.constant(Matrix::Zero(rows, dt)));
        }
        check_finite(tok, "attention branch at layer " + std::to_string(layer));
        tokens.push_back(tok);
    }
    out.feat = tokens.size() == 1 ? tokens.front() : tape.concat(std::span<const Var>(tokens));
    return out;
}

Var head_value(const Bound& b, const CriticNet& critic, const Features& f, int head) {
    Tape& tape = b.tape();
    const std::string pre = head_prefix(head);
    const int width = critic.feature_dim();
    Var ada = adaln_coefficients(b, pre + ".ada", f.has_cond ? &f.cond : nullptr);
    Var scale = tape.slice(ada, 0, width);
    Var shift = tape.slice(ada, width, width);
    Var gate = tape.slice(ada, 2 * width, width);
    auto block = [&](Var x) { return linear(b, pre + ".f.l1", tape.silu(linear(b, pre + ".f.l0", x))); };
    auto norm = [&](Var x) { return tape.rms_norm(x); };
    Var u = adaln_modulate(tape, f.feat, scale, shift, gate, block, norm);
    Var v = tape.add(tape.mul(tape.matmul(u, b[pre + ".w"]), b[pre + ".out_scale"]), b[pre + ".out_bias"]);
    check_finite(v, "head " + std::to_string(head));
    return v;
}

}  // namespace

Var adaln_modulate(Tape& tape, Var h, Var scale, Var shift, Var gate, const std::function<Var(Var)>& block,
                   const std::function<Var(Var)>& norm) {
    Var x = tape.add(tape.mul(scale, norm(h)), shift);
    return tape.add(h, tape.mul(gate, block(x)));
}

CriticNet critic_init_from_policy(const PolicyNet& policy, const std::vector<std::string>& rewards,
                                  const CriticFlags& flags, Rng& rng) {
    if (rewards.empty()) {
        throw ConfigError("critic needs at least one reward head");
    }
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        if (std::find(rewards.begin(), rewards.begin() + static_cast<std::ptrdiff_t>(i), rewards[i]) !=
            rewards.begin() + static_cast<std::ptrdiff_t>(i)) {
            throw ConfigError("duplicate reward '" + rewards[i] + "' for the critic");
        }
    }
    CriticNet c;
    c.cfg = policy.cfg;
    c.flags = flags;
    c.rewards = rewards;
    if (flags.pooling == Pooling::QueryAttention) {
        if (flags.attn_layers.empty()) {
            c.flags.attn_layers = {policy.cfg.depth - 1};
        }
        if (flags.token_dim < 1 || policy.cfg.hidden % flags.token_dim != 0) {
            throw ConfigError("critic token_dim must divide the hidden width");
        }
        for (int l : c.flags.attn_layers) {
            if (l < 0 || l >= policy.cfg.depth) {
                throw ConfigError("attention insertion layer " + std::to_string(l) + " outside the trunk");
            }
        }
    }
    for (const auto& e : policy.params.entries()) {
        if (is_trunk_param(e.name)) {
            c.params.add(e.name, e.value);
        }
    }
    const int dt = c.flags.token_dim;
    if (c.flags.pooling == Pooling::QueryAttention) {
        for (int l : c.flags.attn_layers) {
            const std::string pre = "attn" + std::to_string(l);
            c.params.add(pre + ".q0", gaussian_matrix(1, dt, 1.0, rng));
            c.params.add(pre + ".wq", gaussian_matrix(dt, dt, 1.0 / std::sqrt(dt), rng));
            c.params.add(pre + ".wk", gaussian_matrix(dt, dt, 1.0 / std::sqrt(dt), rng));
            c.params.add(pre + ".wv", gaussian_matrix(dt, dt, 1.0 / std::sqrt(dt), rng));
            c.params.add(pre + ".wo", gaussian_matrix(dt, dt, 1.0 / std::sqrt(dt), rng));
            add_linear(c.params, pre + ".ffn1", dt, 2 * dt, rng);
            add_linear(c.params, pre + ".ffn2", 2 * dt, dt, rng);
            add_adaln(c.params, pre + ".ada", c.cond_dim(), flags.adaln_hidden, dt, 2, rng);
        }
    }
    const int width = c.feature_dim();
    for (int m = 0; m < c.num_heads(); ++m) {
        const std::string pre = head_prefix(m);
        add_adaln(c.params, pre + ".ada", c.cond_dim(), flags.adaln_hidden, width, 1, rng);
        add_linear(c.params, pre + ".f.l0", width, flags.head_hidden, rng);
        add_linear(c.params, pre + ".f.l1", flags.head_hidden, width, rng);
        c.params.add(pre + ".w", Matrix::Zero(width, 1));
        c.params.add(pre + ".out_scale", Matrix::Ones(1, 1));
        c.params.add(pre + ".out_bias", Matrix::Zero(1, 1));
    }
    return c;
}

Var critic_head_forward(const Bound& b, const CriticNet& critic, Var z, const Conditioning& c, int head) {
    if (head < 0 || head >= critic.num_heads()) {
        throw ConfigError("critic head " + std::to_string(head) + " out of range");
    }
    return head_value(b, critic, critic_features(b, critic, z, c), head);
}

Var critic_forward(const Bound& b, const CriticNet& critic, Var z, const Conditioning& c) {
    Features f = critic_features(b, critic, z, c);
    std::vector<Var> heads;
    for (int m = 0; m < critic.num_heads(); ++m) {
        heads.push_back(head_value(b, critic, f, m));
    }
    return heads.size() == 1 ? heads.front() : b.tape().concat(std::span<const Var>(heads));
}

Matrix value(const CriticNet& critic, const Matrix& z, const Conditioning& c) {
    Tape tape;
    Bound b(tape, critic.params, false);
    return critic_forward(b, critic, tape.constant(z), c).value();
}

Vector value(const CriticNet& critic, const Vector& z, double t, int y) {
    Matrix v = value(critic, Matrix(z.transpose()), uniform_conditioning(1, t, {y}));
    return v.row(0).transpose();
}

Matrix critic_grad_state(const CriticNet& critic, const Matrix& z, const Conditioning& c, int head) {
    Tape tape;
    Bound b(tape, critic.params, false);
    Var zin = tape.variable(z);
    Var v = critic_head_forward(b, critic, zin, c, head);
    tape.backward(tape.sum(v));
    return tape.grad(zin);
}

Vector critic_grad_state(const CriticNet& critic, const Vector& z, double t, int y, int head) {
    Matrix g = critic_grad_state(critic, Matrix(z.transpose()), uniform_conditioning(1, t, {y}), head);
    return g.row(0).transpose();
}

ValueSample value_targets(const std::vector<Trajectory>& trajs, const CriticNet& critic, const NoiseSchedule& sched,
                          double target_clip) {
    if (trajs.empty()) {
        throw Error("value regression needs at least one trajectory");
    }
    const int T = sched.steps;
    const auto n = static_cast<Eigen::Index>(trajs.size()) * T;
    const int d = critic.cfg.dim;
    ValueSample s{Matrix(n, d), Conditioning{Matrix(n, 1), std::vector<int>(static_cast<std::size_t>(n))},
                  std::vector<int>(static_cast<std::size_t>(n)), Vector(n)};
    Eigen::Index r = 0;
    for (const auto& tr : trajs) {
        if (tr.steps() != T) {
            throw ShapeError("trajectory length does not match the schedule");
        }
        auto it = tr.rewards.find(tr.reward_channel);
        if (it == tr.rewards.end()) {
            throw Error("trajectory has no reward for its channel '" + tr.reward_channel + "'");
        }
        const int head = critic.head_for(tr.reward_channel);
        const double target = std::clamp(it->second, -target_clip, target_clip);
        for (int k = 0; k < T; ++k, ++r) {
            s.z.row(r) = tr.latents.row(k);
            s.c.t(r, 0) = sched.timestep(k);
            s.c.y[static_cast<std::size_t>(r)] = tr.y;
            s.head[static_cast<std::size_t>(r)] = head;
            s.target(r) = target;
        }
    }
    return s;
}

namespace {

ValueSample subset(const ValueSample& s, const std::vector<Eigen::Index>& rows) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    ValueSample o{Matrix(n, s.z.cols()), Conditioning{Matrix(n, 1), std::vector<int>(rows.size())},
                  std::vector<int>(rows.size()), Vector(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index r = rows[static_cast<std::size_t>(i)];
        o.z.row(i) = s.z.row(r);
        o.c.t(i, 0) = s.c.t(r, 0);
        o.c.y[static_cast<std::size_t>(i)] = s.c.y[static_cast<std::size_t>(r)];
        o.head[static_cast<std::size_t>(i)] = s.head[static_cast<std::size_t>(r)];
        o.target(i) = s.target(r);
    }
    return o;
}

}  // namespace

double value_loss(const CriticNet& critic, const ValueSample& s, ParamSet* grad) {
    const Eigen::Index n = s.z.rows();
    if (n == 0) {
        throw Error("value loss over an empty batch");
    }
    Tape tape;
    Bound b(tape, critic.params, grad != nullptr);
    Var total = tape.scalar_constant(0.0);
    for (int m = 0; m < critic.num_heads(); ++m) {
        std::vector<Eigen::Index> rows;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (s.head[static_cast<std::size_t>(i)] == m) {
                rows.push_back(i);
            }
        }
        if (rows.empty()) {
            continue;
        }
        ValueSample part = subset(s, rows);
        Var v = critic_head_forward(b, critic, tape.constant(part.z), part.c, m);
        Var diff = tape.sub(v, tape.constant(Matrix(part.target)));
        total = tape.add(total, tape.sum(tape.mul(diff, diff)));
    }
    Var loss = tape.scale(total, 1.0 / static_cast<double>(n));
    if (grad != nullptr) {
        tape.backward(loss);
        *grad = b.grads();
        mask_frozen(critic, *grad);
    }
    return loss.scalar();
}

AdamW make_critic_optimizer(const CriticNet& critic, const AdamConfig& cfg) {
    AdamW opt(critic.params, cfg);
    if (critic.flags.freeze_trunk) {
        for (std::size_t i = 0; i < critic.params.size(); ++i) {
            if (is_trunk_param(critic.params.name(i))) {
                opt.freeze(i);
            }
        }
    }
    return opt;
}

void mask_frozen(const CriticNet& critic, ParamSet& grad) {
    if (!critic.flags.freeze_trunk) {
        return;
    }
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (is_trunk_param(grad.name(i))) {
            grad.values(i).setZero();
        }
    }
}

std::vector<double> value_pretrain(CriticNet& critic, AdamW& opt, const std::vector<Trajectory>& trajs,
                                   const NoiseSchedule& sched, int iters, const ValueFitConfig& cfg) {
    if (trajs.empty()) {
        throw Error("value pretraining needs at least one trajectory");
    }
    if (iters < 0 || cfg.shards < 1) {
        throw ConfigError("value pretraining needs iters >= 0 and shards >= 1");
    }
    std::vector<double> history;
    if (iters == 0) {
        return history;
    }
    const ValueSample all = value_targets(trajs, critic, sched, cfg.target_clip);
    const Eigen::Index n = all.z.rows();
    for (int it = 0; it < iters; ++it) {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        Rng rng(cfg.seed, {0x7661, static_cast<std::uint64_t>(it)});
        std::shuffle(order.begin(), order.end(), rng.engine());
        double acc = 0.0;
        const auto shards = static_cast<Eigen::Index>(std::min<Eigen::Index>(cfg.shards, n));
        for (Eigen::Index s = 0; s < shards; ++s) {
            const Eigen::Index lo = s * n / shards;
            const Eigen::Index hi = (s + 1) * n / shards;
            std::vector<Eigen::Index> rows(order.begin() + lo, order.begin() + hi);
            ParamSet g;
            const double loss = value_loss(critic, subset(all, rows), &g);
            if (!std::isfinite(loss)) {
                throw DivergenceError("value loss became non-finite at iteration " + std::to_string(it));
            }
            acc += loss;
            opt.step(critic.params, g);
        }
        history.push_back(acc / static_cast<double>(shards));
    }
    return history;
}

std::vector<double> value_pretrain(CriticNet& critic, const std::vector<Trajectory>& trajs,
                                   const NoiseSchedule& sched, int iters, double lr) {
    AdamW opt = make_critic_optimizer(critic, AdamConfig{lr, 0.9, 0.95, 1e-8, 1e-4});
    return value_pretrain(critic, opt, trajs, sched, iters);
}

}  // namespace lac
