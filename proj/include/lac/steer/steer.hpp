#pragma once

#include "lac/critic/critic.hpp"
#include "lac/gen/policy.hpp"
#include "lac/gen/schedule.hpp"
#include "lac/reward/reward.hpp"
#include "lac/rng.hpp"

#include <functional>
#include <string>
#include <vector>

namespace lac {

// eps - eta * sqrt(1 - alpha_bar) * g
Matrix guide_ddim(const Matrix& eps_hat, const Matrix& g, double eta, double alpha_bar);
// v + eta * g
Matrix guide_flow(const Matrix& v_hat, const Matrix& g, double eta);

enum class Strategy { None, Guide, Bon, Smc, GuideBon };
enum class SmcScorerKind { Critic, PushToX0 };
enum class Resampling { Multinomial, Systematic };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);
std::string to_string(SmcScorerKind s);
SmcScorerKind parse_smc_scorer(const std::string& s);
std::string to_string(Resampling r);
Resampling parse_resampling(const std::string& s);

struct SteerConfig {
    double eta = 0.0;
    int n = 4;
    int K = 4;
    double tau = 1.0;
    SmcScorerKind scorer = SmcScorerKind::Critic;
    Resampling resampling = Resampling::Multinomial;
    double noise_level = 0.7;  // SMC propagation
    double cfg_scale = 1.0;

    void validate() const;
    friend bool operator==(const SteerConfig&, const SteerConfig&) = default;
};

struct GuidedBatch {
    Matrix x0;      // rows x d
    Matrix values;  // rows x T, critic value at the state entering each step; empty without a critic
};

// Deterministic sampling from z_init with the critic direction of `head`
// added at every step. For flow the direction is handed to guide_flow in the
// velocity frame (-dV/dz), since the sampler moves against the velocity.
// eta = 0 reproduces sample_deterministic bit for bit.
GuidedBatch guided_sample_batch(const PolicyNet& policy, const CriticNet* critic, int head, const std::vector<int>& ys,
                                const Matrix& z_init, const NoiseSchedule& sched, double eta, double cfg_scale = 1.0);

struct GuidedSample {
    Vector x0;
    Vector values;
};

// Initial noise drawn from rng.
GuidedSample guided_sample(const PolicyNet& policy, const CriticNet* critic, int head, int y,
                           const NoiseSchedule& sched, double eta, Rng& rng, double cfg_scale = 1.0);

using ScoreFn = std::function<double(const Vector& x0, int y)>;
ScoreFn reward_scorer(const RewardSpec& spec, const RewardContext& ctx);

// First index of the largest finite score; throws when none is finite.
int select_best(const std::vector<double>& scores);

struct BonResult {
    Vector x0;
    double score = 0.0;
    int index = 0;
    std::vector<double> scores;
};

// Candidate i uses the i-th initial noise drawn from rng, so the first m
// candidates of a size-n call are those of a size-m call with the same rng.
BonResult best_of_n(const PolicyNet& policy, const ScoreFn& score, int y, int n, const NoiseSchedule& sched, Rng& rng,
                    double cfg_scale = 1.0);

BonResult guided_bon(const PolicyNet& policy, const CriticNet* critic, int head, const ScoreFn& score, int y, int n,
                     double eta, const NoiseSchedule& sched, Rng& rng, double cfg_scale = 1.0);

// Intermediate scores of K particles at rollout step k (0 < k < T) and the
// terminal score of a finished sample.
struct SmcScorer {
    std::function<Vector(const Matrix& z, int k)> intermediate;
    ScoreFn terminal;
};

SmcScorer critic_scorer(const CriticNet& critic, int head, int y, const NoiseSchedule& sched, ScoreFn terminal);
// Completes each particle with the deterministic sampler and scores the result.
SmcScorer push_to_x0_scorer(const PolicyNet& policy, int y, const NoiseSchedule& sched, ScoreFn terminal,
                            double cfg_scale = 1.0);

// softmax(scores / tau). Non-finite scores get weight 0; all non-finite throws.
Vector smc_weights(const Vector& scores, double tau);
// Ancestor index for each of the K slots.
std::vector<int> resample(const Vector& weights, Rng& rng, Resampling scheme);

struct ParticleSet {
    Matrix z;
    int k = 0;
    Vector weights;
};

struct SmcResult {
    Vector x0;
    double score = 0.0;
    std::vector<Vector> weights;  // after every reweighting, one per step
};

// Particle i propagates with stream Rng(seed, {i}); resampling draws from a
// separate stream. With K = 1 the output is sample_trajectory's x0 for
// Rng(seed, {0}).
SmcResult smc_sample(const PolicyNet& policy, const SmcScorer& scorer, int y, const SteerConfig& cfg,
                     const NoiseSchedule& sched, std::uint64_t seed);

struct StrategyReport {
    Strategy strategy = Strategy::None;
    double mean = 0.0;
    double std = 0.0;
    int prompts = 0;
    int samples_per_prompt = 1;
    std::vector<double> scores;
};

// Per-prompt scores of one strategy. Prompt p's candidates come from
// Rng(seed, {p}), shared across strategies, so none / bon / guide /
// guide+bon see the same initial noise.
StrategyReport run_strategy(Strategy s, const PolicyNet& policy, const CriticNet* critic, const std::string& head_id,
                            const RewardSpec& spec, const RewardContext& ctx, const std::vector<int>& ys,
                            const NoiseSchedule& sched, const SteerConfig& cfg, std::uint64_t seed);

}  // namespace lac
