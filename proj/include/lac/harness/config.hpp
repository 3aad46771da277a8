#pragma once

#include "lac/critic/critic.hpp"
#include "lac/gen/dataset.hpp"
#include "lac/gen/pretrain.hpp"
#include "lac/gen/schedule.hpp"
#include "lac/reward/reward.hpp"
#include "lac/rl/trainer.hpp"
#include "lac/steer/steer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lac {

struct DataConfig {
    std::string kind = "ring";  // ring | eight-gaussians
    MixtureParams mixture;

    friend bool operator==(const DataConfig& a, const DataConfig& b) {
        return a.kind == b.kind && a.mixture.dim == b.mixture.dim && a.mixture.modes == b.mixture.modes &&
               a.mixture.radius == b.mixture.radius && a.mixture.component_std == b.mixture.component_std &&
               a.mixture.target_weights == b.mixture.target_weights;
    }
};

struct ScheduleConfig {
    ScheduleKind kind = ScheduleKind::FlowOt;
    int steps = 40;
    ScheduleParams params;

    friend bool operator==(const ScheduleConfig& a, const ScheduleConfig& b) {
        return a.kind == b.kind && a.steps == b.steps && a.params.beta_start == b.params.beta_start &&
               a.params.beta_end == b.params.beta_end && a.params.train_steps == b.params.train_steps &&
               a.params.flow_timesteps == b.params.flow_timesteps;
    }
};

struct PretrainSettings {
    int steps = 2000;
    int batch = 256;
    double lr = 5e-3;
    double cond_dropout = 0.1;
    double ema = 0.99;
    int scatter_per_class = 250;

    friend bool operator==(const PretrainSettings&, const PretrainSettings&) = default;
};

struct SteerSettings {
    Strategy mode = Strategy::None;
    bool all = false;
    SteerConfig cfg;
    std::string head;  // empty: first reward
    int prompts = 500;

    friend bool operator==(const SteerSettings&, const SteerSettings&) = default;
};

// Everything a run needs. Stored as flat "section.key = value" lines.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/default";
    DataConfig data;
    ScheduleConfig schedule;
    NetConfig net;  // dim and num_classes follow the data, see build_net
    PretrainSettings pretrain;
    CriticFlags critic;
    TrainConfig train;
    std::vector<RewardSpec> rewards{make_reward("pref", RewardFn::ModeAffinity)};
    SteerSettings steer;
    int checkpoint_every = 25;

    void validate() const;
    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Keys a config file must set explicitly.
const std::vector<std::string>& required_keys();

std::string serialize_config(const RunConfig& c);

// Parses the text format: one "key = value" per line, '#' starts a comment.
// Unset keys keep their defaults. Unknown or malformed keys and missing
// required keys throw ConfigError naming the key.
RunConfig parse_config(const std::string& text, bool require = true);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& c);

// Applies one "key=value" override on top of c; c is unchanged when it throws.
void apply_override(RunConfig& c, const std::string& assignment);
// All assignments as one batch, so rewards = a,b can come with reward.b.fn.
void apply_overrides(RunConfig& c, const std::vector<std::string>& assignments);

TargetMixture build_mixture(const RunConfig& c);
NoiseSchedule build_schedule(const RunConfig& c);
RewardSetup build_rewards(const RunConfig& c);
PretrainConfig build_pretrain(const RunConfig& c);
// Policy sizes from the config with dim and class count taken from the data.
NetConfig build_net(const RunConfig& c);

}  // namespace lac
