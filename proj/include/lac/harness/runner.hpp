#pragma once

#include "lac/gen/checkpoint.hpp"
#include "lac/harness/config.hpp"
#include "lac/harness/metrics.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace lac {

Checkpoint policy_checkpoint(const PolicyNet& policy);
// Throws ConfigError when the checkpoint holds no policy or a malformed one.
PolicyNet policy_from_checkpoint(const Checkpoint& ck, const std::string& prefix = "policy.");

// Policy, reference policy, critic with its head manifest, both optimisers'
// moments and the iteration counters, plus the serialised run config.
Checkpoint trainer_checkpoint(const TrainerState& s, const RunConfig& cfg);
// Rebuilds the state for cfg; the critic's head manifest must match the
// configured rewards.
TrainerState trainer_from_checkpoint(const Checkpoint& ck, const RunConfig& cfg, const RewardSetup& rewards);

struct PretrainOutput {
    PolicyNet policy;
    std::vector<double> losses;
    double mode_coverage = 0.0;  // fraction of scatter samples within 3 std of some mode
};

// Trains the base policy and writes base.ckpt, base_samples.csv,
// pretrain_loss.csv and pretrain.json into out_dir.
PretrainOutput run_pretrain(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct TrainOptions {
    std::filesystem::path base;  // policy checkpoint; default out_dir/base.ckpt
    bool resume = false;
    // Stop after this many PPO iterations in this call (< 0: run to the
    // end). Lets tests interrupt a run between iterations.
    int max_new_iterations = -1;
    bool quiet = true;
};

struct TrainOutput {
    std::vector<IterationMetrics> rows;  // iterations run in this call
    std::vector<double> vp_losses;
    int iteration = 0;
    double wall_seconds = 0.0;
};

// Runs value pretraining (ours only) and then the PPO iterations. Writes
// metrics.csv, timing.csv, vp.csv, train.ckpt and summary.json in out_dir.
TrainOutput run_train(const RunConfig& cfg, const std::filesystem::path& out_dir, const TrainOptions& opt = {});

// Value pretraining alone; writes vp.csv and vp.ckpt.
std::vector<double> run_value_pretrain(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                       const std::filesystem::path& base);

struct SteerOptions {
    std::filesystem::path checkpoint;  // trainer or policy checkpoint
    std::vector<Strategy> modes;
};

// JSON report with mean / std reward per strategy and the sample budget of each.
std::string run_steer(const RunConfig& cfg, const SteerOptions& opt, const std::filesystem::path& report_path);

const std::vector<std::string>& ablation_studies();

struct AblationOptions {
    std::vector<std::uint64_t> seeds{1, 2, 3};
};

// Runs the grid of `study` with shared seeds and writes ablate_<study>.csv
// (and per-setting reward curves for cfg) into out_dir. Returns the table.
std::string run_ablation(const RunConfig& cfg, const std::string& study, const std::filesystem::path& out_dir,
                         const AblationOptions& opt = {});

// Short text summary of a finished run directory.
std::string report_run(const std::filesystem::path& dir);

}  // namespace lac
