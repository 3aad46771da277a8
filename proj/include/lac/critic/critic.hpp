#pragma once

#include "lac/autodiff/layers.hpp"
#include "lac/autodiff/optim.hpp"
#include "lac/gen/policy.hpp"
#include "lac/gen/sampler.hpp"
#include "lac/gen/schedule.hpp"

#include <string>
#include <vector>

namespace lac {

enum class Pooling { Mlp, QueryAttention };

std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& s);

struct CriticFlags {
    bool time_cond_head = true;
    bool text_cond_head = false;
    Pooling pooling = Pooling::Mlp;
    // Trunk layers (0-based) followed by a query-token attention branch.
    std::vector<int> attn_layers;
    int token_dim = 8;
    bool trunk_time_input = true;
    // One scalar head regressing every reward.
    bool shared_head = false;
    bool freeze_trunk = false;
    int head_hidden = 32;
    int adaln_hidden = 16;

    friend bool operator==(const CriticFlags&, const CriticFlags&) = default;
};

// Value network V^(m)(z_t, t, y): trunk copied from the policy, optional
// query-token attention branches, and one AdaLN-modulated head per reward:
//   u = h + gate * F(scale * rms(h) + shift),  V = out_scale * (u . w) + out_bias
// with (scale, shift, gate) produced from the time (and optionally class)
// embedding. gate and w start at zero, so V == 0 at initialisation.
struct CriticNet {
    NetConfig cfg;
    CriticFlags flags;
    // Rewards served, in head order unless the head is shared.
    std::vector<std::string> rewards;
    ParamSet params;

    [[nodiscard]] int num_heads() const { return flags.shared_head ? 1 : static_cast<int>(rewards.size()); }
    // Head serving reward `id`; throws ConfigError for an unknown id.
    [[nodiscard]] int head_for(const std::string& id) const;
    [[nodiscard]] int feature_dim() const;
    [[nodiscard]] int cond_dim() const;
};

// Critic with the policy's trunk weights and fresh heads for `rewards`.
CriticNet critic_init_from_policy(const PolicyNet& policy, const std::vector<std::string>& rewards,
                                  const CriticFlags& flags, Rng& rng);

// Values of every head for a batch: rows x num_heads. Throws DivergenceError
// naming the stage that produced a non-finite activation.
Var critic_forward(const Bound& b, const CriticNet& critic, Var z, const Conditioning& c);
Var critic_head_forward(const Bound& b, const CriticNet& critic, Var z, const Conditioning& c, int head);

Matrix value(const CriticNet& critic, const Matrix& z, const Conditioning& c);
Vector value(const CriticNet& critic, const Vector& z, double t, int y);

// out = h + gate * F(scale * norm(h) + shift); exposed for tests with the
// sub-block and norm supplied by the caller.
Var adaln_modulate(Tape& tape, Var h, Var scale, Var shift, Var gate, const std::function<Var(Var)>& block,
                   const std::function<Var(Var)>& norm);

// dV_head / dz at each row of z, with t and y held fixed.
Matrix critic_grad_state(const CriticNet& critic, const Matrix& z, const Conditioning& c, int head);
Vector critic_grad_state(const CriticNet& critic, const Vector& z, double t, int y, int head);

std::string head_prefix(int head);
bool is_trunk_param(const std::string& name);

struct ValueSample {
    Matrix z;                   // n x d states
    Conditioning c;             // their timesteps and labels
    std::vector<int> head;      // regression head per row
    Vector target;              // n, already clipped
};

// Every non-terminal state of every trajectory with its Monte Carlo return
// (gamma = 1, terminal reward of the trajectory's active reward).
ValueSample value_targets(const std::vector<Trajectory>& trajs, const CriticNet& critic, const NoiseSchedule& sched,
                          double target_clip = 5.0);

// Mean squared error of the assigned heads; fills grad when given.
double value_loss(const CriticNet& critic, const ValueSample& s, ParamSet* grad);

struct ValueFitConfig {
    int shards = 4;
    double target_clip = 5.0;
    std::uint64_t seed = 0;
};

// Regress the critic onto Monte Carlo returns of fixed trajectories. Each
// iteration is one pass over `shards` shuffled minibatches; returns the mean
// loss of every iteration. Throws on an empty trajectory set.
std::vector<double> value_pretrain(CriticNet& critic, AdamW& opt, const std::vector<Trajectory>& trajs,
                                   const NoiseSchedule& sched, int iters, const ValueFitConfig& cfg = {});
std::vector<double> value_pretrain(CriticNet& critic, const std::vector<Trajectory>& trajs,
                                   const NoiseSchedule& sched, int iters, double lr);

// Critic optimiser with the trunk frozen when the flags ask for it.
AdamW make_critic_optimizer(const CriticNet& critic, const AdamConfig& cfg);

// Zero the gradient entries the critic's flags keep fixed.
void mask_frozen(const CriticNet& critic, ParamSet& grad);

}  // namespace lac
