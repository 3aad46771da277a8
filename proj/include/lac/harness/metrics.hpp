#pragma once

#include "lac/rl/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace lac {

// Per-iteration training log. Column order is fixed:
//
//   iteration, reward.<id> for every reward in registry order, policy_loss,
//   value_loss, clip_frac, approx_kl, kl, diversity, mean_ratio, skipped
//
// Numbers use the shortest round-trip decimal form, so a run's bytes depend
// only on its values. Wall-clock time goes to a separate timing file and
// never into this one.
class MetricsLog {
public:
    MetricsLog() = default;
    MetricsLog(std::filesystem::path path, std::vector<std::string> reward_ids);

    static std::vector<std::string> columns(const std::vector<std::string>& reward_ids);
    [[nodiscard]] std::string header() const;
    [[nodiscard]] std::string format_row(const IterationMetrics& m) const;

    // Fresh file holding only the header.
    void create();
    // Reopen for a resumed run: rows past `last_iteration` are dropped.
    void reopen(int last_iteration);
    // Throws unless m.iteration exceeds every logged iteration.
    void append(const IterationMetrics& m);

    [[nodiscard]] int last_iteration() const { return last_; }
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::vector<std::string> ids_;
    int last_ = 0;
};

struct MetricsTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    [[nodiscard]] int column(const std::string& name) const;
    [[nodiscard]] std::vector<double> series(const std::string& name) const;
};

MetricsTable read_metrics(const std::filesystem::path& path);

// Mean of the last `window` entries (all of them when fewer).
double tail_mean(const std::vector<double>& xs, int window = 10);

std::string format_number(double v);

}  // namespace lac
