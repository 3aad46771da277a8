#pragma once

#include "lac/autodiff/optim.hpp"
#include "lac/critic/critic.hpp"
#include "lac/gen/policy.hpp"
#include "lac/gen/sampler.hpp"
#include "lac/reward/reward.hpp"
#include "lac/rl/advantage.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lac {

enum class Baseline { Ours, Grpo, Ddpo };

std::string to_string(Baseline b);
Baseline parse_baseline(const std::string& s);

struct TrainConfig {
    double gamma = 1.0;
    double lam = 1.0;
    double clip_eps = 1e-4;
    double adv_clip = 10.0;
    double value_clip = 5.0;
    int updates_per_iter = 4;
    int iterations = 300;
    int batch = 256;  // trajectories per iteration
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 1e-4;
    double policy_lr = 1e-3;
    double value_lr = 1e-3;
    double kl_coef = 0.0;
    double noise_level = 0.7;
    double cfg_scale = 1.0;
    int vp_iters = 15;
    Baseline baseline = Baseline::Ours;
    int group_size = 4;  // grpo only
    // grpo: every member of a group starts from the same initial noise
    bool grpo_shared_noise = true;
    // Evaluate every reward on every sample and sum the weighted advantages.
    bool joint_eval = false;
    // Prompt proportions per registered reward; empty means equal shares.
    std::vector<double> ratios;
    double max_skip_frac = 0.1;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct RewardSetup {
    RewardRegistry registry;
    RewardContext ctx;
};

struct TrainerState {
    PolicyNet policy;
    PolicyNet reference;
    std::optional<CriticNet> critic;
    AdamW policy_opt;
    AdamW critic_opt;
    int iteration = 0;     // PPO iterations completed
    int vp_done = 0;       // value-pretraining iterations completed
};

TrainerState make_trainer_state(const PolicyNet& base, const RewardSetup& rewards, const TrainConfig& cfg,
                                const CriticFlags& flags, std::uint64_t seed);

// One row per stochastic transition used in the PPO ratio.
struct AdvantageBatch {
    Matrix z;         // state latent
    Matrix action;    // realised next latent
    Conditioning c;   // t_k and y
    std::vector<int> step;
    Vector sigma;
    Vector logp_old;
    Vector advantages;
    std::vector<int> traj;  // source trajectory index

    [[nodiscard]] Eigen::Index rows() const { return z.rows(); }
};

// Rows for every stochastic transition; adv[i][k] is the advantage of
// trajectory i at step k.
AdvantageBatch make_advantage_batch(const std::vector<Trajectory>& trajs, const std::vector<std::vector<double>>& adv,
                                    const NoiseSchedule& sched);

struct PpoStats {
    double policy_loss = 0.0;
    double kl = 0.0;
    double clip_frac = 0.0;
    double mean_ratio = 1.0;
    double max_ratio_dev = 0.0;
    double approx_kl = 0.0;
    int used = 0;
    int skipped = 0;
    bool aborted = false;
};

// Clipped-surrogate loss over `rows` of the batch, plus kl_coef times the
// KL estimate against `reference` when kl_coef > 0. Fills the policy
// gradient when requested. Transitions with a non-finite ratio are skipped;
// more than max_skip_frac skipped aborts (grad left empty, stats.aborted).
PpoStats ppo_losses(const PolicyNet& policy, const PolicyNet* reference, const AdvantageBatch& batch,
                    const std::vector<Eigen::Index>& rows, const NoiseSchedule& sched, const TrainConfig& cfg,
                    ParamSet* grad);

struct Rollouts {
    std::vector<Trajectory> trajs;
    std::vector<double> weights;  // prompt weight per trajectory
    std::vector<int> group;       // prompt group per trajectory (grpo)
};

Rollouts collect_rollouts(const PolicyNet& policy, const RewardSetup& rewards, const NoiseSchedule& sched,
                          const TrainConfig& cfg, std::uint64_t seed, std::uint64_t tag, int iteration);

struct IterationMetrics {
    int iteration = 0;
    std::vector<std::pair<std::string, double>> reward_mean;  // registry order
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double clip_frac = 0.0;
    double approx_kl = 0.0;
    double kl = 0.0;
    double diversity = 0.0;
    double mean_ratio = 1.0;
    int skipped = 0;
    int aborted_updates = 0;
};

// Sample, score, compute advantages and run updates_per_iter PPO shards.
IterationMetrics train_iteration(TrainerState& state, const RewardSetup& rewards, const NoiseSchedule& sched,
                                 const TrainConfig& cfg, std::uint64_t seed);

// Critic-only warm-up iterations with the policy frozen; returns the value
// loss of each iteration.
std::vector<double> value_pretrain_phase(TrainerState& state, const RewardSetup& rewards,
                                         const NoiseSchedule& sched, const TrainConfig& cfg, std::uint64_t seed,
                                         int iters);

// Mean over classes of the mean pairwise distance among that class's samples.
double class_diversity(const std::vector<Trajectory>& trajs);

}  // namespace lac
