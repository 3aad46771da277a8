#pragma once

#include "lac/autodiff/tensor.hpp"
#include "lac/gen/dataset.hpp"
#include "lac/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace lac {

enum class RewardKind { Continuous, Binary };

// Built-in analytic rewards.
//  mode-affinity     exp(-|x - mu_y|^2 / 2 s^2), preference proxy
//  region-indicator  1 iff x lies in the class's axis-aligned box, verifiable proxy
//  alignment         tanh(log p(x | y)) under the class-conditional mixture
enum class RewardFn { ModeAffinity, RegionIndicator, Alignment };

std::string to_string(RewardFn f);
RewardFn parse_reward_fn(const std::string& s);
RewardKind kind_of(RewardFn f);

// metadata keys
//  mode-affinity:    s (default 0.5)
//  region-indicator: box (lo0,lo1,...,hi0,hi1,... for every class) or box.<y>
//                    per class; when neither is set a box is placed on the
//                    outer edge of the class's target mode
struct RewardSpec {
    std::string id;
    RewardFn fn = RewardFn::ModeAffinity;
    RewardKind kind = RewardKind::Continuous;
    double weight = 1.0;
    std::map<std::string, std::string> metadata;

    void validate() const;
    friend bool operator==(const RewardSpec&, const RewardSpec&) = default;
};

RewardSpec make_reward(std::string id, RewardFn fn, double weight = 1.0,
                       std::map<std::string, std::string> metadata = {});

struct AxisBox {
    Vector lo;
    Vector hi;
    [[nodiscard]] bool contains(const Vector& x) const;
};

// Box for class y: from metadata, or the default sliver next to the target mode.
AxisBox region_box(const RewardSpec& spec, const TargetMixture& m, int y);

// The environment rewards are evaluated against.
struct RewardContext {
    TargetMixture mixture;
};

double evaluate(const Vector& x0, int y, const RewardSpec& spec, const RewardContext& ctx);

class RewardRegistry {
public:
    RewardRegistry() = default;
    explicit RewardRegistry(std::vector<RewardSpec> specs);

    void add(RewardSpec spec);
    [[nodiscard]] const RewardSpec& get(const std::string& id) const;
    [[nodiscard]] int index(const std::string& id) const;
    [[nodiscard]] bool contains(const std::string& id) const;
    [[nodiscard]] const std::vector<RewardSpec>& specs() const { return specs_; }
    [[nodiscard]] std::size_t size() const { return specs_.size(); }
    [[nodiscard]] std::vector<std::string> ids() const;

    friend bool operator==(const RewardRegistry&, const RewardRegistry&) = default;

private:
    std::vector<RewardSpec> specs_;
};

// Throws ConfigError for an unregistered id.
double evaluate(const Vector& x0, int y, const RewardRegistry& reg, const std::string& id,
                const RewardContext& ctx);

struct PromptItem {
    std::string reward_id;
    int y = 0;
    double weight = 1.0;
    std::map<std::string, std::string> metadata;
};

// Largest-remainder allocation of n items over the specs by ratio, shuffled.
// Classes are drawn uniformly from [0, num_classes).
std::vector<PromptItem> mixed_batch(const std::vector<RewardSpec>& specs, const std::vector<double>& ratios, int n,
                                    int num_classes, Rng& rng);

// Exact per-spec counts used by mixed_batch.
std::vector<int> allocate_counts(const std::vector<double>& ratios, int n);

// Mean pairwise Euclidean distance among the rows of `samples`.
double hacking_probe(const Matrix& samples);

}  // namespace lac
