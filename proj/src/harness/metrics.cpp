#include "lac/harness/metrics.hpp"

#include "lac/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace lac {

std::string format_number(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

MetricsLog::MetricsLog(std::filesystem::path path, std::vector<std::string> reward_ids)
    : path_(std::move(path)), ids_(std::move(reward_ids)) {}

std::vector<std::string> MetricsLog::columns(const std::vector<std::string>& reward_ids) {
    std::vector<std::string> cols{"iteration"};
    for (const auto& id : reward_ids) {
        cols.push_back("reward." + id);
    }
    for (const char* c : {"policy_loss", "value_loss", "clip_frac", "approx_kl", "kl", "diversity", "mean_ratio",
                          "skipped"}) {
        cols.emplace_back(c);
    }
    return cols;
}

std::string MetricsLog::header() const {
    std::string s;
    for (const auto& c : columns(ids_)) {
        s += (s.empty() ? "" : ",") + c;
    }
    return s + '\n';
}

std::string MetricsLog::format_row(const IterationMetrics& m) const {
    if (m.reward_mean.size() != ids_.size()) {
        throw Error("metrics row has " + std::to_string(m.reward_mean.size()) + " rewards, log expects " +
                    std::to_string(ids_.size()));
    }
    std::string s = std::to_string(m.iteration);
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (m.reward_mean[i].first != ids_[i]) {
            throw Error("metrics row reward order differs from the log: " + m.reward_mean[i].first);
        }
        s += ',' + format_number(m.reward_mean[i].second);
    }
    for (double v : {m.policy_loss, m.value_loss, m.clip_frac, m.approx_kl, m.kl, m.diversity, m.mean_ratio}) {
        s += ',' + format_number(v);
    }
    s += ',' + std::to_string(m.skipped);
    return s + '\n';
}

void MetricsLog::create() {
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path_.string());
    }
    out << header();
    last_ = 0;
}

void MetricsLog::reopen(int last_iteration) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) {
        create();
        if (last_iteration > 0) {
            throw Error("metrics file " + path_.string() + " is missing rows up to iteration " +
                        std::to_string(last_iteration));
        }
        return;
    }
    std::string line;
    std::getline(in, line);
    if (line + '\n' != header()) {
        throw ConfigError("metrics file " + path_.string() + " has a different column layout");
    }
    std::string kept = header();
    int last = 0;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const int it = std::stoi(line.substr(0, line.find(',')));
        if (it > last_iteration) {
            break;
        }
        kept += line + '\n';
        last = it;
    }
    in.close();
    if (last != last_iteration) {
        throw Error("metrics file " + path_.string() + " ends at iteration " + std::to_string(last) +
                    ", checkpoint is at " + std::to_string(last_iteration));
    }
    std::ofstream out(path_, std::ios::binary | std::ios::trunc);
    out << kept;
    last_ = last;
}

void MetricsLog::append(const IterationMetrics& m) {
    if (m.iteration <= last_) {
        throw Error("metrics iterations must increase: " + std::to_string(m.iteration) + " after " +
                    std::to_string(last_));
    }
    const std::string row = format_row(m);
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) {
        throw Error("cannot append to " + path_.string());
    }
    out << row;
    out.flush();
    last_ = m.iteration;
}

int MetricsTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (columns[i] == name) {
            return static_cast<int>(i);
        }
    }
    throw ConfigError("no metrics column " + name);
}

std::vector<double> MetricsTable::series(const std::string& name) const {
    const auto c = static_cast<std::size_t>(column(name));
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        out.push_back(r.at(c));
    }
    return out;
}

MetricsTable read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read metrics file " + path.string());
    }
    MetricsTable t;
    std::string line;
    std::getline(in, line);
    {
        std::istringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            t.columns.push_back(cell);
        }
    }
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<double> row;
        std::istringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            double v = 0.0;
            auto r = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (r.ec != std::errc()) {
                throw Error("bad number '" + cell + "' in " + path.string());
            }
            row.push_back(v);
        }
        if (row.size() != t.columns.size()) {
            throw Error("ragged row in " + path.string());
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

double tail_mean(const std::vector<double>& xs, int window) {
    if (xs.empty()) {
        throw Error("tail_mean of an empty series");
    }
    const std::size_t n = std::min(xs.size(), static_cast<std::size_t>(std::max(window, 1)));
    double s = 0.0;
    for (std::size_t i = xs.size() - n; i < xs.size(); ++i) {
        s += xs[i];
    }
    return s / static_cast<double>(n);
}

}  // namespace lac
