#include "lac/harness/config.hpp"

#include "lac/error.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace lac {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) {
        return {};
    }
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (trim(s).empty()) {
        return out;
    }
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) {
        out.push_back(trim(item));
    }
    return out;
}

std::string fmt(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const char* end = v.data() + v.size();
    auto r = std::from_chars(v.data(), end, out);
    if (r.ec != std::errc() || r.ptr != end) {
        throw ConfigError("config key " + key + ": cannot parse '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") {
        return true;
    }
    if (v == "false" || v == "0") {
        return false;
    }
    throw ConfigError("config key " + key + ": expected true or false, got '" + v + "'");
}

template <class T>
std::string join(const std::vector<T>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) {
            s += ',';
        }
        if constexpr (std::is_same_v<T, double>) {
            s += fmt(xs[i]);
        } else {
            s += std::to_string(xs[i]);
        }
    }
    return s;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
    std::vector<T> out;
    for (const auto& item : split(v, ',')) {
        out.push_back(parse_number<T>(key, item));
    }
    return out;
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <class T, class Acc>
Field field(std::string key, Acc acc) {
    Field f;
    f.key = key;
    f.get = [acc](const RunConfig& c) -> std::string {
        const T& v = acc(const_cast<RunConfig&>(c));
        if constexpr (std::is_same_v<T, bool>) {
            return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, double>) {
            return fmt(v);
        } else if constexpr (std::is_same_v<T, std::string>) {
            return v;
        } else if constexpr (std::is_same_v<T, std::vector<double>> || std::is_same_v<T, std::vector<int>>) {
            return join(v);
        } else {
            return std::to_string(v);
        }
    };
    f.set = [acc, key](RunConfig& c, const std::string& s) {
        T& v = acc(c);
        if constexpr (std::is_same_v<T, bool>) {
            v = parse_bool(key, s);
        } else if constexpr (std::is_same_v<T, std::string>) {
            v = s;
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
            v = parse_list<double>(key, s);
        } else if constexpr (std::is_same_v<T, std::vector<int>>) {
            v = parse_list<int>(key, s);
        } else {
            v = parse_number<T>(key, s);
        }
    };
    return f;
}

template <class E>
Field enum_field(std::string key, std::function<E&(RunConfig&)> acc, std::function<std::string(E)> show,
                 std::function<E(const std::string&)> read) {
    Field f;
    f.key = key;
    f.get = [acc, show](const RunConfig& c) { return show(acc(const_cast<RunConfig&>(c))); };
    f.set = [acc, read, key](RunConfig& c, const std::string& s) {
        try {
            acc(c) = read(s);
        } catch (const ConfigError& e) {
            throw ConfigError("config key " + key + ": " + e.what());
        }
    };
    return f;
}

#define LAC_F(T, key, expr) field<T>(key, [](RunConfig & c) -> T& { return expr; })

const std::vector<Field>& fields() {
    static const std::vector<Field> fs = [] {
        std::vector<Field> v{
            LAC_F(std::uint64_t, "seed", c.seed),
            LAC_F(std::string, "out_dir", c.out_dir),
            LAC_F(int, "checkpoint_every", c.checkpoint_every),
            LAC_F(std::string, "data.kind", c.data.kind),
            LAC_F(int, "data.dim", c.data.mixture.dim),
            LAC_F(int, "data.modes", c.data.mixture.modes),
            LAC_F(double, "data.radius", c.data.mixture.radius),
            LAC_F(double, "data.std", c.data.mixture.component_std),
            LAC_F(std::vector<double>, "data.target_weights", c.data.mixture.target_weights),
            enum_field<ScheduleKind>(
                "schedule.kind", [](RunConfig& c) -> ScheduleKind& { return c.schedule.kind; },
                [](ScheduleKind k) { return std::string(to_string(k)); },
                [](const std::string& s) { return parse_schedule_kind(s); }),
            LAC_F(int, "schedule.steps", c.schedule.steps),
            LAC_F(double, "schedule.beta_start", c.schedule.params.beta_start),
            LAC_F(double, "schedule.beta_end", c.schedule.params.beta_end),
            LAC_F(int, "schedule.train_steps", c.schedule.params.train_steps),
            LAC_F(std::vector<double>, "schedule.flow_timesteps", c.schedule.params.flow_timesteps),
            LAC_F(int, "policy.hidden", c.net.hidden),
            LAC_F(int, "policy.depth", c.net.depth),
            LAC_F(int, "policy.time_embed", c.net.time_embed),
            LAC_F(int, "policy.class_embed", c.net.class_embed),
            LAC_F(int, "pretrain.steps", c.pretrain.steps),
            LAC_F(int, "pretrain.batch", c.pretrain.batch),
            LAC_F(double, "pretrain.lr", c.pretrain.lr),
            LAC_F(double, "pretrain.cond_dropout", c.pretrain.cond_dropout),
            LAC_F(double, "pretrain.ema", c.pretrain.ema),
            LAC_F(int, "pretrain.scatter_per_class", c.pretrain.scatter_per_class),
            LAC_F(bool, "critic.time_cond_head", c.critic.time_cond_head),
            LAC_F(bool, "critic.text_cond_head", c.critic.text_cond_head),
            enum_field<Pooling>(
                "critic.pooling", [](RunConfig& c) -> Pooling& { return c.critic.pooling; },
                [](Pooling p) { return to_string(p); }, [](const std::string& s) { return parse_pooling(s); }),
            LAC_F(std::vector<int>, "critic.attn_layers", c.critic.attn_layers),
            LAC_F(int, "critic.token_dim", c.critic.token_dim),
            LAC_F(bool, "critic.trunk_time_input", c.critic.trunk_time_input),
            LAC_F(bool, "critic.shared_head", c.critic.shared_head),
            LAC_F(bool, "critic.freeze_trunk", c.critic.freeze_trunk),
            LAC_F(int, "critic.head_hidden", c.critic.head_hidden),
            LAC_F(int, "critic.adaln_hidden", c.critic.adaln_hidden),
            enum_field<Baseline>(
                "train.baseline", [](RunConfig& c) -> Baseline& { return c.train.baseline; },
                [](Baseline b) { return to_string(b); }, [](const std::string& s) { return parse_baseline(s); }),
            LAC_F(double, "train.gamma", c.train.gamma),
            LAC_F(double, "train.lam", c.train.lam),
            LAC_F(double, "train.clip_eps", c.train.clip_eps),
            LAC_F(double, "train.adv_clip", c.train.adv_clip),
            LAC_F(double, "train.value_clip", c.train.value_clip),
            LAC_F(int, "train.updates_per_iter", c.train.updates_per_iter),
            LAC_F(int, "train.iterations", c.train.iterations),
            LAC_F(int, "train.batch", c.train.batch),
            LAC_F(double, "train.beta1", c.train.beta1),
            LAC_F(double, "train.beta2", c.train.beta2),
            LAC_F(double, "train.weight_decay", c.train.weight_decay),
            LAC_F(double, "train.policy_lr", c.train.policy_lr),
            LAC_F(double, "train.value_lr", c.train.value_lr),
            LAC_F(double, "train.kl_coef", c.train.kl_coef),
            LAC_F(double, "train.noise_level", c.train.noise_level),
            LAC_F(double, "train.cfg_scale", c.train.cfg_scale),
            LAC_F(int, "train.vp_iters", c.train.vp_iters),
            LAC_F(int, "train.group_size", c.train.group_size),
            LAC_F(bool, "train.grpo_shared_noise", c.train.grpo_shared_noise),
            LAC_F(bool, "train.joint_eval", c.train.joint_eval),
            LAC_F(std::vector<double>, "train.ratios", c.train.ratios),
            LAC_F(double, "train.max_skip_frac", c.train.max_skip_frac),
            LAC_F(bool, "steer.all", c.steer.all),
            enum_field<Strategy>(
                "steer.mode", [](RunConfig& c) -> Strategy& { return c.steer.mode; },
                [](Strategy s) { return to_string(s); }, [](const std::string& s) { return parse_strategy(s); }),
            LAC_F(double, "steer.eta", c.steer.cfg.eta),
            LAC_F(int, "steer.n", c.steer.cfg.n),
            LAC_F(int, "steer.K", c.steer.cfg.K),
            LAC_F(double, "steer.tau", c.steer.cfg.tau),
            enum_field<SmcScorerKind>(
                "steer.scorer", [](RunConfig& c) -> SmcScorerKind& { return c.steer.cfg.scorer; },
                [](SmcScorerKind s) { return to_string(s); },
                [](const std::string& s) { return parse_smc_scorer(s); }),
            enum_field<Resampling>(
                "steer.resampling", [](RunConfig& c) -> Resampling& { return c.steer.cfg.resampling; },
                [](Resampling r) { return to_string(r); }, [](const std::string& s) { return parse_resampling(s); }),
            LAC_F(double, "steer.noise_level", c.steer.cfg.noise_level),
            LAC_F(double, "steer.cfg_scale", c.steer.cfg.cfg_scale),
            LAC_F(std::string, "steer.head", c.steer.head),
            LAC_F(int, "steer.prompts", c.steer.prompts),
        };
        return v;
    }();
    return fs;
}

#undef LAC_F

const Field* find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) {
            return &f;
        }
    }
    return nullptr;
}

bool valid_reward_id(const std::string& id) {
    if (id.empty()) {
        return false;
    }
    for (char ch : id) {
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-')) {
            return false;
        }
    }
    return true;
}

// Collects reward.* lines until the whole file is read, since the reward
// list and the per-reward keys may come in any order.
struct RewardLines {
    std::optional<std::vector<std::string>> ids;
    std::map<std::string, std::map<std::string, std::string>> keys;  // id -> (subkey -> value)

    bool empty() const { return !ids && keys.empty(); }
};

void take_line(RunConfig& c, RewardLines& rl, const std::string& key, const std::string& value) {
    if (key == "rewards") {
        rl.ids = split(value, ',');
        return;
    }
    if (key.rfind("reward.", 0) == 0) {
        const std::string rest = key.substr(7);
        const auto dot = rest.find('.');
        if (dot == std::string::npos || dot == 0 || dot + 1 == rest.size()) {
            throw ConfigError("config key " + key + ": expected reward.<id>.<field>");
        }
        rl.keys[rest.substr(0, dot)][rest.substr(dot + 1)] = value;
        return;
    }
    const Field* f = find_field(key);
    if (!f) {
        throw ConfigError("unknown config key " + key);
    }
    f->set(c, value);
}

void build_reward_list(RunConfig& c, const RewardLines& rl) {
    if (rl.empty()) {
        return;
    }
    std::vector<std::string> ids;
    if (rl.ids) {
        ids = *rl.ids;
    } else {
        for (const auto& s : c.rewards) {
            ids.push_back(s.id);
        }
    }
    std::map<std::string, RewardSpec> existing;
    for (const auto& s : c.rewards) {
        existing[s.id] = s;
    }
    std::set<std::string> seen;
    std::vector<RewardSpec> out;
    for (const auto& id : ids) {
        if (!valid_reward_id(id)) {
            throw ConfigError("config key rewards: bad reward id '" + id + "'");
        }
        if (!seen.insert(id).second) {
            throw ConfigError("config key rewards: duplicate reward id " + id);
        }
        RewardSpec spec;
        const auto it = rl.keys.find(id);
        const bool had = existing.count(id) > 0;
        if (had) {
            spec = existing[id];
        }
        std::map<std::string, std::string> sub = it == rl.keys.end() ? std::map<std::string, std::string>{} : it->second;
        if (sub.count("fn")) {
            spec.fn = parse_reward_fn(sub["fn"]);
            sub.erase("fn");
        } else if (!had) {
            throw ConfigError("missing config key reward." + id + ".fn");
        }
        spec.id = id;
        spec.kind = kind_of(spec.fn);
        if (sub.count("weight")) {
            spec.weight = parse_number<double>("reward." + id + ".weight", sub["weight"]);
            sub.erase("weight");
        }
        for (const auto& [k, v] : sub) {
            if (k.rfind("meta.", 0) != 0 || k.size() == 5) {
                throw ConfigError("unknown config key reward." + id + "." + k);
            }
            spec.metadata[k.substr(5)] = v;
        }
        try {
            spec.validate();
        } catch (const ConfigError& e) {
            throw ConfigError("config key reward." + id + ": " + e.what());
        }
        out.push_back(std::move(spec));
    }
    for (const auto& [id, sub] : rl.keys) {
        if (!seen.count(id)) {
            throw ConfigError("config key reward." + id + "." + sub.begin()->first + ": reward " + id +
                              " is not listed in rewards");
        }
    }
    c.rewards = std::move(out);
}

}  // namespace

const std::vector<std::string>& required_keys() {
    static const std::vector<std::string> keys{"seed", "out_dir"};
    return keys;
}

void RunConfig::validate() const {
    if (data.kind != "ring" && data.kind != "eight-gaussians") {
        throw ConfigError("config key data.kind: expected ring or eight-gaussians");
    }
    if (data.mixture.dim < 2 || data.mixture.modes < 1 || !(data.mixture.radius > 0.0) ||
        !(data.mixture.component_std > 0.0)) {
        throw ConfigError("data.dim must be >= 2, data.modes >= 1, data.radius and data.std > 0");
    }
    if (schedule.steps < 1) {
        throw ConfigError("config key schedule.steps must be >= 1");
    }
    if (net.hidden < 1 || net.depth < 1 || net.time_embed < 2 || net.time_embed % 2 != 0 || net.class_embed < 1) {
        throw ConfigError("policy sizes must be positive and policy.time_embed even");
    }
    if (pretrain.steps < 0 || pretrain.batch < 1 || !(pretrain.lr > 0.0) || pretrain.cond_dropout < 0.0 ||
        pretrain.cond_dropout > 1.0 || pretrain.ema < 0.0 || pretrain.ema >= 1.0 || pretrain.scatter_per_class < 0) {
        throw ConfigError("invalid pretrain settings");
    }
    if (critic.head_hidden < 1 || critic.adaln_hidden < 1 || critic.token_dim < 1) {
        throw ConfigError("critic sizes must be positive");
    }
    for (int l : critic.attn_layers) {
        if (l < 0 || l >= net.depth) {
            throw ConfigError("config key critic.attn_layers: layer " + std::to_string(l) + " out of range");
        }
    }
    if (rewards.empty()) {
        throw ConfigError("config key rewards: at least one reward is needed");
    }
    for (const auto& r : rewards) {
        r.validate();
    }
    if (!train.ratios.empty() && train.ratios.size() != rewards.size()) {
        throw ConfigError("config key train.ratios needs one entry per reward");
    }
    train.validate();
    steer.cfg.validate();
    if (steer.prompts < 1) {
        throw ConfigError("config key steer.prompts must be >= 1");
    }
    if (!steer.head.empty()) {
        bool found = false;
        for (const auto& r : rewards) {
            found = found || r.id == steer.head;
        }
        if (!found) {
            throw ConfigError("config key steer.head: no reward named " + steer.head);
        }
    }
    if (checkpoint_every < 1) {
        throw ConfigError("config key checkpoint_every must be >= 1");
    }
    if (out_dir.empty()) {
        throw ConfigError("config key out_dir must not be empty");
    }
}

std::string serialize_config(const RunConfig& c) {
    std::ostringstream out;
    for (const auto& f : fields()) {
        out << f.key << " = " << f.get(c) << '\n';
    }
    std::vector<std::string> ids;
    for (const auto& r : c.rewards) {
        ids.push_back(r.id);
    }
    std::string list;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        list += (i ? "," : "") + ids[i];
    }
    out << "rewards = " << list << '\n';
    for (const auto& r : c.rewards) {
        out << "reward." << r.id << ".fn = " << to_string(r.fn) << '\n';
        out << "reward." << r.id << ".weight = " << fmt(r.weight) << '\n';
        for (const auto& [k, v] : r.metadata) {
            out << "reward." << r.id << ".meta." << k << " = " << v << '\n';
        }
    }
    return out.str();
}

RunConfig parse_config(const std::string& text, bool require) {
    RunConfig c;
    RewardLines rl;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        if (!seen.insert(key).second) {
            throw ConfigError("config key " + key + " is set twice");
        }
        take_line(c, rl, key, value);
    }
    if (require) {
        for (const auto& k : required_keys()) {
            if (!seen.count(k)) {
                throw ConfigError("missing required config key " + k);
            }
        }
    }
    build_reward_list(c, rl);
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read config file " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void save_config(const std::filesystem::path& path, const RunConfig& c) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << serialize_config(c);
}

void apply_overrides(RunConfig& c, const std::vector<std::string>& assignments) {
    RunConfig next = c;
    RewardLines rl;
    for (const auto& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("override '" + a + "' is not key=value");
        }
        take_line(next, rl, trim(a.substr(0, eq)), trim(a.substr(eq + 1)));
    }
    build_reward_list(next, rl);
    next.validate();
    c = std::move(next);
}

void apply_override(RunConfig& c, const std::string& assignment) { apply_overrides(c, {assignment}); }

TargetMixture build_mixture(const RunConfig& c) {
    if (c.data.kind == "eight-gaussians") {
        return make_eight_gaussians(c.data.mixture.dim, c.data.mixture.radius, c.data.mixture.component_std);
    }
    return make_ring_mixture(c.data.mixture);
}

NoiseSchedule build_schedule(const RunConfig& c) { return make_schedule(c.schedule.kind, c.schedule.steps, c.schedule.params); }

RewardSetup build_rewards(const RunConfig& c) { return RewardSetup{RewardRegistry(c.rewards), RewardContext{build_mixture(c)}}; }

PretrainConfig build_pretrain(const RunConfig& c) {
    PretrainConfig p;
    p.steps = c.pretrain.steps;
    p.batch = c.pretrain.batch;
    p.lr = c.pretrain.lr;
    p.cond_dropout = c.pretrain.cond_dropout;
    p.ema = c.pretrain.ema;
    p.seed = c.seed;
    return p;
}

NetConfig build_net(const RunConfig& c) {
    const TargetMixture m = build_mixture(c);
    NetConfig n = c.net;
    n.dim = m.dim;
    n.num_classes = m.num_classes();
    return n;
}

}  // namespace lac
