#include "lac/reward/reward.hpp"

#include "lac/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace lac {

std::string to_string(RewardFn f) {
    switch (f) {
        case RewardFn::ModeAffinity:
            return "mode-affinity";
        case RewardFn::RegionIndicator:
            return "region-indicator";
        case RewardFn::Alignment:
            return "alignment";
    }
    return "?";
}

RewardFn parse_reward_fn(const std::string& s) {
    if (s == "mode-affinity") {
        return RewardFn::ModeAffinity;
    }
    if (s == "region-indicator") {
        return RewardFn::RegionIndicator;
    }
    if (s == "alignment") {
        return RewardFn::Alignment;
    }
    throw ConfigError("unknown reward type '" + s + "' (mode-affinity, region-indicator, alignment)");
}

RewardKind kind_of(RewardFn f) { return f == RewardFn::RegionIndicator ? RewardKind::Binary : RewardKind::Continuous; }

namespace {

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (item.find_first_not_of(" \t", used) != std::string::npos) {
                throw ConfigError("bad number '" + item + "'");
            }
        } catch (const std::logic_error&) {
            throw ConfigError("bad number '" + item + "' in list '" + s + "'");
        }
    }
    return out;
}

double meta_double(const RewardSpec& spec, const std::string& key, double fallback) {
    auto it = spec.metadata.find(key);
    if (it == spec.metadata.end()) {
        return fallback;
    }
    auto v = parse_list(it->second);
    if (v.size() != 1) {
        throw ConfigError("reward '" + spec.id + "': metadata " + key + " must be a single number");
    }
    return v.front();
}

}  // namespace

void RewardSpec::validate() const {
    if (id.empty()) {
        throw ConfigError("reward id must be non-empty");
    }
    if (!(weight > 0.0) || !std::isfinite(weight)) {
        throw ConfigError("reward '" + id + "': weight must be > 0");
    }
    if (kind != kind_of(fn)) {
        throw ConfigError("reward '" + id + "': kind does not match type " + to_string(fn));
    }
    if (fn == RewardFn::ModeAffinity && !(meta_double(*this, "s", 0.5) > 0.0)) {
        throw ConfigError("reward '" + id + "': s must be > 0");
    }
    if (fn == RewardFn::RegionIndicator) {
        for (const auto& [key, val] : metadata) {
            if (key == "box" || key.rfind("box.", 0) == 0) {
                const auto v = parse_list(val);
                if (v.size() < 4 || v.size() % 2 != 0) {
                    throw ConfigError("reward '" + id + "': " + key + " needs lo and hi bounds per coordinate");
                }
            }
        }
        for (const char* key : {"inner", "depth", "half_width"}) {
            if (!(meta_double(*this, key, 1.0) > 0.0)) {
                throw ConfigError("reward '" + id + "': " + key + " must be > 0");
            }
        }
    }
}

RewardSpec make_reward(std::string id, RewardFn fn, double weight, std::map<std::string, std::string> metadata) {
    RewardSpec s{std::move(id), fn, kind_of(fn), weight, std::move(metadata)};
    s.validate();
    return s;
}

bool AxisBox::contains(const Vector& x) const {
    if (x.size() != lo.size()) {
        throw ShapeError("region box dimension mismatch");
    }
    return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

AxisBox region_box(const RewardSpec& spec, const TargetMixture& m, int y) {
    const int d = m.dim;
    std::string key = "box." + std::to_string(y);
    auto it = spec.metadata.find(key);
    if (it == spec.metadata.end()) {
        it = spec.metadata.find("box");
    }
    AxisBox b{Vector::Constant(d, -std::numeric_limits<double>::infinity()),
              Vector::Constant(d, std::numeric_limits<double>::infinity())};
    if (it != spec.metadata.end()) {
        auto v = parse_list(it->second);
        if (static_cast<int>(v.size()) == 4 && d > 2) {
            // bounds on the first two coordinates only
            b.lo.head(2) << v[0], v[1];
            b.hi.head(2) << v[2], v[3];
            return b;
        }
        if (static_cast<int>(v.size()) != 2 * d) {
            throw ConfigError("reward '" + spec.id + "': " + it->first + " needs 2 x dim numbers");
        }
        for (int i = 0; i < d; ++i) {
            b.lo(i) = v[static_cast<std::size_t>(i)];
            b.hi(i) = v[static_cast<std::size_t>(d + i)];
        }
        return b;
    }
    // Default: a thin patch just outside the target mode, radially beyond
    // `inner` mode stds and `depth` stds deep, `half_width` stds to each side.
    const double inner = meta_double(spec, "inner", 1.5);
    const double depth = meta_double(spec, "depth", 2.5);
    const double half_width = meta_double(spec, "half_width", 1.5);
    const Vector& mu = m.target_mean(y);
    const double r = std::hypot(mu(0), mu(1));
    const double s = m.component_std;
    Vector radial = Vector::Zero(d);
    radial(0) = mu(0) / r;
    radial(1) = mu(1) / r;
    Vector tangent = Vector::Zero(d);
    tangent(0) = -radial(1);
    tangent(1) = radial(0);
    const Vector a = mu + radial * inner * s + tangent * half_width * s;
    const Vector c = mu + radial * (inner + depth) * s - tangent * half_width * s;
    b.lo.head(2) = a.head(2).cwiseMin(c.head(2));
    b.hi.head(2) = a.head(2).cwiseMax(c.head(2));
    return b;
}

double evaluate(const Vector& x0, int y, const RewardSpec& spec, const RewardContext& ctx) {
    const TargetMixture& m = ctx.mixture;
    if (x0.size() != m.dim) {
        throw ShapeError("reward '" + spec.id + "': sample dimension " + std::to_string(x0.size()) + " vs " +
                         std::to_string(m.dim));
    }
    switch (spec.fn) {
        case RewardFn::ModeAffinity: {
            const double s = meta_double(spec, "s", 0.5);
            return std::exp(-(x0 - m.target_mean(y)).squaredNorm() / (2.0 * s * s));
        }
        case RewardFn::RegionIndicator:
            return region_box(spec, m, y).contains(x0) ? 1.0 : 0.0;
        case RewardFn::Alignment: {
            const auto& w = m.class_weights.at(static_cast<std::size_t>(y));
            double top = -std::numeric_limits<double>::infinity();
            std::vector<double> terms;
            for (int c = 0; c < m.num_components(); ++c) {
                if (w[static_cast<std::size_t>(c)] > 0.0) {
                    terms.push_back(std::log(w[static_cast<std::size_t>(c)]) + m.component_log_density(x0, c));
                    top = std::max(top, terms.back());
                }
            }
            double acc = 0.0;
            for (double t : terms) {
                acc += std::exp(t - top);
            }
            return std::tanh(top + std::log(acc));
        }
    }
    throw ConfigError("reward '" + spec.id + "' has no evaluator");
}

RewardRegistry::RewardRegistry(std::vector<RewardSpec> specs) {
    for (auto& s : specs) {
        add(std::move(s));
    }
}

void RewardRegistry::add(RewardSpec spec) {
    spec.validate();
    if (contains(spec.id)) {
        throw ConfigError("reward '" + spec.id + "' registered twice");
    }
    specs_.push_back(std::move(spec));
}

int RewardRegistry::index(const std::string& id) const {
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        if (specs_[i].id == id) {
            return static_cast<int>(i);
        }
    }
    throw ConfigError("unknown reward id '" + id + "'");
}

const RewardSpec& RewardRegistry::get(const std::string& id) const {
    return specs_[static_cast<std::size_t>(index(id))];
}

bool RewardRegistry::contains(const std::string& id) const {
    return std::any_of(specs_.begin(), specs_.end(), [&](const RewardSpec& s) { return s.id == id; });
}

std::vector<std::string> RewardRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& s : specs_) {
        out.push_back(s.id);
    }
    return out;
}

double evaluate(const Vector& x0, int y, const RewardRegistry& reg, const std::string& id,
                const RewardContext& ctx) {
    return evaluate(x0, y, reg.get(id), ctx);
}

std::vector<int> allocate_counts(const std::vector<double>& ratios, int n) {
    if (ratios.empty()) {
        throw ConfigError("mixed batch needs at least one reward");
    }
    if (n < 0) {
        throw ConfigError("mixed batch size must be >= 0");
    }
    double total = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0) || !std::isfinite(r)) {
            throw ConfigError("reward ratios must be positive");
        }
        total += r;
    }
    std::vector<int> counts(ratios.size());
    std::vector<std::pair<double, std::size_t>> rema;
    int used = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double exact = n * ratios[i] / total;
        counts[i] = static_cast<int>(std::floor(exact));
        used += counts[i];
        rema.emplace_back(exact - counts[i], i);
    }
    // ties broken by spec order
    std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; used < n; ++k, ++used) {
        ++counts[rema[k].second];
    }
    return counts;
}

std::vector<PromptItem> mixed_batch(const std::vector<RewardSpec>& specs, const std::vector<double>& ratios, int n,
                                    int num_classes, Rng& rng) {
    if (specs.size() != ratios.size()) {
        throw ConfigError("mixed batch: one ratio per reward required");
    }
    if (num_classes < 1) {
        throw ConfigError("mixed batch: need at least one class");
    }
    const std::vector<int> counts = allocate_counts(ratios, n);
    std::vector<PromptItem> items;
    items.reserve(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < specs.size(); ++i) {
        for (int c = 0; c < counts[i]; ++c) {
            items.push_back({specs[i].id, 0, specs[i].weight, specs[i].metadata});
        }
    }
    std::shuffle(items.begin(), items.end(), rng.engine());
    for (auto& it : items) {
        it.y = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
    }
    return items;
}

double hacking_probe(const Matrix& samples) {
    const Eigen::Index n = samples.rows();
    if (n < 2) {
        throw ConfigError("hacking probe needs at least 2 samples");
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            acc += (samples.row(i) - samples.row(j)).norm();
        }
    }
    return acc / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

}  // namespace lac
