#include "lac/harness/runner.hpp"

#include "lac/error.hpp"
#include "lac/gen/pretrain.hpp"
#include "lac/gen/sampler.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lac {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kTagScatter = 0x73636174;
constexpr std::uint64_t kTagSteer = 0x7374656572;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const fs::path& p, const std::string& text) {
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("cannot write " + p.string());
        }
        out << text;
    }
    fs::rename(tmp, p);
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read " + p.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void append_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::app);
    if (!out) {
        throw Error("cannot append to " + p.string());
    }
    out << text;
}

// Header plus the rows whose first field is <= last.
void keep_rows_upto(const fs::path& p, int last) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        return;
    }
    std::string line, kept;
    std::getline(in, line);
    kept = line + '\n';
    while (std::getline(in, line)) {
        if (!line.empty() && std::stoi(line.substr(0, line.find(','))) <= last) {
            kept += line + '\n';
        }
    }
    in.close();
    write_text(p, kept);
}

int meta_int(const Checkpoint& ck, const std::string& key) {
    try {
        return std::stoi(ck.meta_at(key));
    } catch (const std::logic_error&) {
        throw ConfigError("checkpoint field " + key + " is not an integer");
    }
}

// Config lines that determine the base policy.
std::string pretrain_fingerprint(const RunConfig& cfg) {
    std::istringstream in(serialize_config(cfg));
    std::string line, out;
    while (std::getline(in, line)) {
        for (const char* p : {"seed ", "data.", "schedule.", "policy.", "pretrain."}) {
            if (line.rfind(p, 0) == 0) {
                out += line + '\n';
                break;
            }
        }
    }
    return out;
}

// For resume checks: everything except the iteration budget and the
// output location.
std::string resume_fingerprint(RunConfig cfg) {
    cfg.train.iterations = 0;
    cfg.out_dir = "-";
    cfg.steer = SteerSettings{};
    return serialize_config(cfg);
}

void put_adam(Checkpoint& ck, const std::string& prefix, const AdamW& opt) {
    ck.put_params(prefix + "m.", opt.first_moment());
    ck.put_params(prefix + "v.", opt.second_moment());
    ck.meta[prefix + "steps"] = std::to_string(opt.steps());
}

void restore_adam(const Checkpoint& ck, const std::string& prefix, const ParamSet& layout, AdamW& opt) {
    ParamSet m = ck.params(prefix + "m.");
    ParamSet v = ck.params(prefix + "v.");
    if (!m.same_layout(layout) || !v.same_layout(layout)) {
        throw ConfigError("checkpoint optimiser state " + prefix + " does not match the network");
    }
    opt.restore(m, v, std::stol(ck.meta_at(prefix + "steps")));
}

std::string join_ids(const std::vector<std::string>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        s += (i ? "," : "") + ids[i];
    }
    return s;
}

Checkpoint load_base(const RunConfig& cfg, const fs::path& path) {
    if (!fs::exists(path)) {
        throw ConfigError("base checkpoint " + path.string() + " not found; run pretrain first");
    }
    Checkpoint ck = read_checkpoint(path);
    if (!ck.meta.count("fingerprint") || ck.meta.at("fingerprint") != pretrain_fingerprint(cfg)) {
        throw ConfigError("base checkpoint " + path.string() +
                          " was trained with different seed/data/schedule/policy/pretrain settings");
    }
    return ck;
}

json reward_summary(const MetricsTable& t, const std::vector<std::string>& ids) {
    json r = json::object();
    for (const auto& id : ids) {
        const auto s = t.series("reward." + id);
        r[id] = {{"initial", s.front()}, {"final", tail_mean(s)}, {"last", s.back()}};
    }
    return r;
}

}  // namespace

Checkpoint policy_checkpoint(const PolicyNet& policy) {
    Checkpoint ck;
    ck.meta["kind"] = "policy";
    ck.meta["schedule.kind"] = std::string(to_string(policy.kind));
    ck.meta["policy.dim"] = std::to_string(policy.cfg.dim);
    ck.meta["policy.num_classes"] = std::to_string(policy.cfg.num_classes);
    ck.meta["policy.hidden"] = std::to_string(policy.cfg.hidden);
    ck.meta["policy.depth"] = std::to_string(policy.cfg.depth);
    ck.meta["policy.time_embed"] = std::to_string(policy.cfg.time_embed);
    ck.meta["policy.class_embed"] = std::to_string(policy.cfg.class_embed);
    ck.meta["policy.cond_dropout"] = format_number(policy.cond_dropout);
    ck.put_params("policy.", policy.params);
    return ck;
}

PolicyNet policy_from_checkpoint(const Checkpoint& ck, const std::string& prefix) {
    for (const char* k : {"schedule.kind", "policy.dim", "policy.num_classes", "policy.hidden", "policy.depth",
                          "policy.time_embed", "policy.class_embed", "policy.cond_dropout"}) {
        if (!ck.meta.count(k)) {
            throw ConfigError(std::string("checkpoint is missing field ") + k);
        }
    }
    NetConfig n;
    n.dim = meta_int(ck, "policy.dim");
    n.num_classes = meta_int(ck, "policy.num_classes");
    n.hidden = meta_int(ck, "policy.hidden");
    n.depth = meta_int(ck, "policy.depth");
    n.time_embed = meta_int(ck, "policy.time_embed");
    n.class_embed = meta_int(ck, "policy.class_embed");
    Rng rng(0);
    PolicyNet p = PolicyNet::init(n, parse_schedule_kind(ck.meta_at("schedule.kind")),
                                  std::stod(ck.meta_at("policy.cond_dropout")), rng);
    ParamSet stored = ck.params(prefix);
    if (!stored.same_layout(p.params)) {
        throw ConfigError("checkpoint tensors under " + prefix + " do not match the policy layout");
    }
    p.params = std::move(stored);
    return p;
}

Checkpoint trainer_checkpoint(const TrainerState& s, const RunConfig& cfg) {
    Checkpoint ck = policy_checkpoint(s.policy);
    ck.meta["kind"] = "trainer";
    ck.meta["config"] = serialize_config(cfg);
    ck.meta["baseline"] = to_string(cfg.train.baseline);
    ck.meta["iteration"] = std::to_string(s.iteration);
    ck.meta["vp_done"] = std::to_string(s.vp_done);
    ck.put_params("reference.", s.reference.params);
    put_adam(ck, "opt.policy.", s.policy_opt);
    if (s.critic) {
        ck.meta["critic.heads"] = join_ids(s.critic->rewards);
        ck.meta["critic.shared_head"] = s.critic->flags.shared_head ? "true" : "false";
        ck.put_params("critic.", s.critic->params);
        put_adam(ck, "opt.critic.", s.critic_opt);
    }
    return ck;
}

TrainerState trainer_from_checkpoint(const Checkpoint& ck, const RunConfig& cfg, const RewardSetup& rewards) {
    if (!ck.meta.count("kind") || ck.meta.at("kind") != "trainer") {
        throw ConfigError("not a training checkpoint");
    }
    const PolicyNet reference = policy_from_checkpoint(ck, "reference.");
    TrainerState s = make_trainer_state(reference, rewards, cfg.train, cfg.critic, cfg.seed);
    s.policy = policy_from_checkpoint(ck, "policy.");
    restore_adam(ck, "opt.policy.", s.policy.params, s.policy_opt);
    s.iteration = meta_int(ck, "iteration");
    s.vp_done = meta_int(ck, "vp_done");
    const bool has_critic = ck.meta.count("critic.heads") > 0;
    if (s.critic) {
        if (!has_critic) {
            throw ConfigError("checkpoint holds no critic but baseline ours needs one");
        }
        const std::string want = join_ids(s.critic->rewards);
        if (ck.meta.at("critic.heads") != want) {
            throw ConfigError("critic heads in checkpoint (" + ck.meta.at("critic.heads") +
                              ") do not match the configured rewards (" + want + ")");
        }
        ParamSet p = ck.params("critic.");
        if (!p.same_layout(s.critic->params)) {
            throw ConfigError("critic tensors in checkpoint do not match the configured critic");
        }
        s.critic->params = std::move(p);
        restore_adam(ck, "opt.critic.", s.critic->params, s.critic_opt);
    }
    return s;
}

PretrainOutput run_pretrain(const RunConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);
    const TargetMixture mix = build_mixture(cfg);
    const NoiseSchedule sched = build_schedule(cfg);
    PretrainResult pr = pretrain_base(mixture_source(mix), build_net(cfg), sched, build_pretrain(cfg));

    Checkpoint ck = policy_checkpoint(pr.policy);
    ck.meta["fingerprint"] = pretrain_fingerprint(cfg);
    write_checkpoint(out_dir / "base.ckpt", ck);

    std::string loss = "step,loss\n";
    for (std::size_t i = 0; i < pr.losses.size(); ++i) {
        loss += std::to_string(i + 1) + ',' + format_number(pr.losses[i]) + '\n';
    }
    write_text(out_dir / "pretrain_loss.csv", loss);

    // scatter of deterministic samples per class
    const int per = cfg.pretrain.scatter_per_class;
    const int C = mix.num_classes();
    std::vector<int> ys;
    for (int y = 0; y < C; ++y) {
        ys.insert(ys.end(), static_cast<std::size_t>(per), y);
    }
    PretrainOutput out;
    std::string scatter = "y";
    for (int j = 0; j < mix.dim; ++j) {
        scatter += ",x" + std::to_string(j);
    }
    scatter += '\n';
    if (!ys.empty()) {
        Rng rng(cfg.seed, {kTagScatter});
        Matrix z(static_cast<Eigen::Index>(ys.size()), mix.dim);
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            z.data()[i] = rng.normal();
        }
        const Matrix x = sample_deterministic(pr.policy, z, ys, sched, 1.0);
        int near = 0;
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            scatter += std::to_string(ys[static_cast<std::size_t>(i)]);
            for (int j = 0; j < mix.dim; ++j) {
                scatter += ',' + format_number(x(i, j));
            }
            scatter += '\n';
            for (const auto& mu : mix.means) {
                if ((x.row(i).transpose() - mu).norm() <= 3.0 * mix.component_std) {
                    ++near;
                    break;
                }
            }
        }
        out.mode_coverage = static_cast<double>(near) / static_cast<double>(x.rows());
    }
    write_text(out_dir / "base_samples.csv", scatter);

    json j;
    j["seed"] = cfg.seed;
    j["steps"] = cfg.pretrain.steps;
    j["final_loss"] = pr.losses.empty() ? 0.0 : tail_mean(pr.losses, 100);
    j["mode_coverage"] = out.mode_coverage;
    j["wall_seconds"] = seconds_since(t0);
    write_text(out_dir / "pretrain.json", j.dump(2) + '\n');

    out.policy = std::move(pr.policy);
    out.losses = std::move(pr.losses);
    return out;
}

TrainOutput run_train(const RunConfig& cfg, const fs::path& out_dir, const TrainOptions& opt) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);
    const RewardSetup rs = build_rewards(cfg);
    const NoiseSchedule sched = build_schedule(cfg);
    const fs::path ckpt_path = out_dir / "train.ckpt";
    const fs::path vp_path = out_dir / "vp.csv";
    const fs::path timing_path = out_dir / "timing.csv";
    MetricsLog log(out_dir / "metrics.csv", rs.registry.ids());

    TrainerState st;
    double wall_before = 0.0;
    if (opt.resume && fs::exists(ckpt_path)) {
        const Checkpoint ck = read_checkpoint(ckpt_path);
        if (!ck.meta.count("config")) {
            throw ConfigError("checkpoint " + ckpt_path.string() + " has no run config");
        }
        if (resume_fingerprint(parse_config(ck.meta.at("config"), false)) != resume_fingerprint(cfg)) {
            throw ConfigError("checkpoint " + ckpt_path.string() + " was written with a different config");
        }
        st = trainer_from_checkpoint(ck, cfg, rs);
        if (ck.meta.count("wall_seconds")) {
            wall_before = std::stod(ck.meta.at("wall_seconds"));
        }
        log.reopen(st.iteration);
        keep_rows_upto(vp_path, st.vp_done);
        keep_rows_upto(timing_path, st.iteration);
    } else {
        const Checkpoint base = load_base(cfg, opt.base.empty() ? out_dir / "base.ckpt" : opt.base);
        st = make_trainer_state(policy_from_checkpoint(base), rs, cfg.train, cfg.critic, cfg.seed);
        log.create();
        write_text(vp_path, "iteration,value_loss\n");
        write_text(timing_path, "iteration,wall_seconds\n");
    }
    save_config(out_dir / "config.txt", cfg);

    auto checkpoint = [&] {
        Checkpoint ck = trainer_checkpoint(st, cfg);
        ck.meta["wall_seconds"] = format_number(wall_before + seconds_since(t0));
        write_checkpoint(ckpt_path, ck);
    };

    TrainOutput out;
    if (cfg.train.baseline == Baseline::Ours && st.vp_done < cfg.train.vp_iters) {
        while (st.vp_done < cfg.train.vp_iters) {
            const double l = value_pretrain_phase(st, rs, sched, cfg.train, cfg.seed, 1).front();
            out.vp_losses.push_back(l);
            append_text(vp_path, std::to_string(st.vp_done) + ',' + format_number(l) + '\n');
        }
        checkpoint();
        if (!opt.quiet) {
            std::fprintf(stderr, "value pretraining: %d iterations, loss %.4g\n", st.vp_done,
                         out.vp_losses.empty() ? 0.0 : out.vp_losses.back());
        }
    }

    int budget = opt.max_new_iterations;
    while (st.iteration < cfg.train.iterations && budget != 0) {
        IterationMetrics m = train_iteration(st, rs, sched, cfg.train, cfg.seed);
        log.append(m);
        append_text(timing_path, std::to_string(m.iteration) + ',' + format_number(wall_before + seconds_since(t0)) + '\n');
        if (m.iteration % cfg.checkpoint_every == 0 || m.iteration == cfg.train.iterations) {
            checkpoint();
        }
        if (!opt.quiet && (m.iteration % 10 == 0 || m.iteration == 1)) {
            std::fprintf(stderr, "iter %d", m.iteration);
            for (const auto& [id, v] : m.reward_mean) {
                std::fprintf(stderr, " %s=%.4f", id.c_str(), v);
            }
            std::fprintf(stderr, " clip=%.3f div=%.3f\n", m.clip_frac, m.diversity);
        }
        out.rows.push_back(std::move(m));
        if (budget > 0) {
            --budget;
        }
    }
    out.iteration = st.iteration;
    out.wall_seconds = wall_before + seconds_since(t0);

    if (st.iteration == cfg.train.iterations && st.iteration > 0) {
        const MetricsTable t = read_metrics(log.path());
        json j;
        j["baseline"] = to_string(cfg.train.baseline);
        j["seed"] = cfg.seed;
        j["iterations"] = st.iteration;
        j["vp_iterations"] = st.vp_done;
        j["rewards"] = reward_summary(t, rs.registry.ids());
        const auto div = t.series("diversity");
        j["diversity"] = {{"initial", div.front()}, {"final", tail_mean(div)}};
        j["wall_seconds"] = out.wall_seconds;
        write_text(out_dir / "summary.json", j.dump(2) + '\n');
    }
    return out;
}

std::vector<double> run_value_pretrain(const RunConfig& cfg, const fs::path& out_dir, const fs::path& base) {
    cfg.validate();
    if (cfg.train.baseline != Baseline::Ours) {
        throw ConfigError("value pretraining needs train.baseline = ours");
    }
    fs::create_directories(out_dir);
    const RewardSetup rs = build_rewards(cfg);
    const NoiseSchedule sched = build_schedule(cfg);
    const Checkpoint b = load_base(cfg, base.empty() ? out_dir / "base.ckpt" : base);
    TrainerState st = make_trainer_state(policy_from_checkpoint(b), rs, cfg.train, cfg.critic, cfg.seed);
    const auto losses = value_pretrain_phase(st, rs, sched, cfg.train, cfg.seed, cfg.train.vp_iters);
    std::string csv = "iteration,value_loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) {
        csv += std::to_string(i + 1) + ',' + format_number(losses[i]) + '\n';
    }
    write_text(out_dir / "vp.csv", csv);
    write_checkpoint(out_dir / "vp.ckpt", trainer_checkpoint(st, cfg));
    return losses;
}

std::string run_steer(const RunConfig& cfg, const SteerOptions& opt, const fs::path& report_path) {
    cfg.validate();
    const RewardSetup rs = build_rewards(cfg);
    const NoiseSchedule sched = build_schedule(cfg);
    if (!fs::exists(opt.checkpoint)) {
        throw ConfigError("checkpoint " + opt.checkpoint.string() + " not found");
    }
    const Checkpoint ck = read_checkpoint(opt.checkpoint);
    PolicyNet policy;
    std::optional<CriticNet> critic;
    if (ck.meta.count("kind") && ck.meta.at("kind") == "trainer") {
        TrainerState st = trainer_from_checkpoint(ck, cfg, rs);
        policy = std::move(st.policy);
        critic = std::move(st.critic);
    } else {
        policy = policy_from_checkpoint(ck);
    }
    const std::string head = cfg.steer.head.empty() ? rs.registry.ids().front() : cfg.steer.head;
    const RewardSpec& spec = rs.registry.get(head);
    std::vector<int> ys;
    const int C = rs.ctx.mixture.num_classes();
    for (int p = 0; p < cfg.steer.prompts; ++p) {
        ys.push_back(p % C);
    }
    const std::uint64_t seed = derive_seed(cfg.seed, {kTagSteer});
    const int T = sched.steps;

    json j;
    j["checkpoint"] = opt.checkpoint.string();
    j["head"] = head;
    j["prompts"] = cfg.steer.prompts;
    j["steps"] = T;
    j["eta"] = cfg.steer.cfg.eta;
    j["n"] = cfg.steer.cfg.n;
    j["K"] = cfg.steer.cfg.K;
    j["tau"] = cfg.steer.cfg.tau;
    j["smc_scorer"] = to_string(cfg.steer.cfg.scorer);
    json arr = json::array();
    for (Strategy s : opt.modes) {
        const StrategyReport r =
            run_strategy(s, policy, critic ? &*critic : nullptr, head, spec, rs.ctx, ys, sched, cfg.steer.cfg, seed);
        json e;
        e["strategy"] = to_string(s);
        e["mean"] = r.mean;
        e["std"] = r.std;
        e["stderr"] = r.prompts > 0 ? r.std / std::sqrt(static_cast<double>(r.prompts)) : 0.0;
        e["prompts"] = r.prompts;
        e["samples_per_prompt"] = r.samples_per_prompt;
        e["denoiser_calls_per_prompt"] = r.samples_per_prompt * T;
        const bool guided = s == Strategy::Guide || s == Strategy::GuideBon;
        e["critic_gradient_calls_per_prompt"] = guided && cfg.steer.cfg.eta > 0.0 ? r.samples_per_prompt * T : 0;
        if (s == Strategy::Guide || s == Strategy::None) {
            e["budget"] = "1 sample per prompt";
        } else {
            e["budget"] = std::to_string(r.samples_per_prompt) + " samples per prompt, " +
                          std::to_string(r.samples_per_prompt) + "x the sampling compute of guidance";
        }
        arr.push_back(e);
    }
    j["strategies"] = arr;
    const std::string text = j.dump(2) + '\n';
    if (!report_path.empty()) {
        if (report_path.has_parent_path()) {
            fs::create_directories(report_path.parent_path());
        }
        write_text(report_path, text);
    }
    return text;
}

const std::vector<std::string>& ablation_studies() {
    static const std::vector<std::string> s{"vp", "heads", "conditioning", "cfg", "clip"};
    return s;
}

namespace {

struct Setting {
    std::string label;
    std::function<void(RunConfig&)> apply;
};

std::vector<Setting> study_grid(const std::string& study) {
    auto ours = [](RunConfig& c) { c.train.baseline = Baseline::Ours; };
    std::vector<Setting> g;
    if (study == "vp") {
        for (int v : {0, 15, 50, 100}) {
            g.push_back({std::to_string(v), [v, ours](RunConfig& c) { ours(c); c.train.vp_iters = v; }});
        }
    } else if (study == "heads") {
        g.push_back({"separate", [ours](RunConfig& c) { ours(c); c.critic.shared_head = false; }});
        g.push_back({"shared", [ours](RunConfig& c) { ours(c); c.critic.shared_head = true; }});
    } else if (study == "conditioning") {
        g.push_back({"time", [ours](RunConfig& c) {
                         ours(c);
                         c.critic.time_cond_head = true;
                         c.critic.text_cond_head = false;
                     }});
        g.push_back({"none", [ours](RunConfig& c) {
                         ours(c);
                         c.critic.time_cond_head = false;
                         c.critic.text_cond_head = false;
                     }});
        g.push_back({"time+text", [ours](RunConfig& c) {
                         ours(c);
                         c.critic.time_cond_head = true;
                         c.critic.text_cond_head = true;
                     }});
    } else if (study == "cfg") {
        for (double s : {1.0, 3.0, 10.0}) {
            g.push_back({format_number(s), [s](RunConfig& c) { c.train.cfg_scale = s; }});
        }
    } else if (study == "clip") {
        for (double e : {1e-5, 1e-4, 0.2}) {
            g.push_back({format_number(e), [e](RunConfig& c) { c.train.clip_eps = e; }});
        }
    } else {
        std::string names;
        for (const auto& s : ablation_studies()) {
            names += (names.empty() ? "" : ", ") + s;
        }
        throw ConfigError("unknown study '" + study + "'; valid studies: " + names);
    }
    return g;
}

fs::path ensure_base(const RunConfig& c, const fs::path& dir) {
    const fs::path p = dir / "base.ckpt";
    if (fs::exists(p)) {
        const Checkpoint ck = read_checkpoint(p);
        if (ck.meta.count("fingerprint") && ck.meta.at("fingerprint") == pretrain_fingerprint(c)) {
            return p;
        }
    }
    run_pretrain(c, dir);
    return p;
}

}  // namespace

std::string run_ablation(const RunConfig& cfg, const std::string& study, const fs::path& out_dir,
                         const AblationOptions& opt) {
    const std::vector<Setting> grid = study_grid(study);
    cfg.validate();
    if (opt.seeds.empty()) {
        throw ConfigError("ablation needs at least one seed");
    }
    fs::create_directories(out_dir);
    std::vector<std::string> ids;
    for (const auto& r : cfg.rewards) {
        ids.push_back(r.id);
    }

    std::string table = "setting,seeds";
    for (const auto& id : ids) {
        table += ",reward." + id + ".initial,reward." + id + ".final,reward." + id + ".final_std";
    }
    table += ",diversity.final\n";

    for (const auto& s : grid) {
        std::vector<MetricsTable> runs;
        for (std::uint64_t seed : opt.seeds) {
            RunConfig c = cfg;
            c.seed = seed;
            s.apply(c);
            c.validate();
            const fs::path seed_dir = out_dir / ("seed" + std::to_string(seed));
            TrainOptions to;
            to.base = ensure_base(c, seed_dir);
            const fs::path run_dir = out_dir / study / s.label / ("seed" + std::to_string(seed));
            c.out_dir = run_dir.string();
            run_train(c, run_dir, to);
            runs.push_back(read_metrics(run_dir / "metrics.csv"));
        }
        const double n = static_cast<double>(runs.size());
        table += s.label + ',' + std::to_string(runs.size());
        for (const auto& id : ids) {
            double init = 0.0, fin = 0.0, fin2 = 0.0;
            for (const auto& t : runs) {
                const auto ser = t.series("reward." + id);
                const double f = tail_mean(ser);
                init += ser.front() / n;
                fin += f / n;
                fin2 += f * f / n;
            }
            table += ',' + format_number(init) + ',' + format_number(fin) + ',' +
                     format_number(std::sqrt(std::max(0.0, fin2 - fin * fin)));
        }
        double div = 0.0;
        for (const auto& t : runs) {
            div += tail_mean(t.series("diversity")) / n;
        }
        table += ',' + format_number(div) + '\n';

        if (study == "cfg") {
            std::string curve = "iteration";
            for (const auto& id : ids) {
                curve += ",reward." + id;
            }
            curve += '\n';
            const std::size_t rows = runs.front().rows.size();
            for (std::size_t i = 0; i < rows; ++i) {
                curve += std::to_string(i + 1);
                for (const auto& id : ids) {
                    double m = 0.0;
                    for (const auto& t : runs) {
                        m += t.series("reward." + id).at(i) / n;
                    }
                    curve += ',' + format_number(m);
                }
                curve += '\n';
            }
            write_text(out_dir / ("cfg_" + s.label + "_curve.csv"), curve);
        }
    }
    write_text(out_dir / ("ablate_" + study + ".csv"), table);
    return table;
}

std::string report_run(const fs::path& dir) {
    std::ostringstream out;
    const fs::path metrics = dir / "metrics.csv";
    if (fs::exists(metrics)) {
        const MetricsTable t = read_metrics(metrics);
        out << "run " << dir.string() << ": " << t.rows.size() << " iterations\n";
        if (!t.rows.empty()) {
            for (const auto& c : t.columns) {
                if (c.rfind("reward.", 0) == 0) {
                    const auto s = t.series(c);
                    char buf[160];
                    std::snprintf(buf, sizeof buf, "  %-20s initial %.4f  final(last 10) %.4f\n", c.c_str(), s.front(),
                                  tail_mean(s));
                    out << buf;
                }
            }
            const auto d = t.series("diversity");
            char buf[160];
            std::snprintf(buf, sizeof buf, "  %-20s initial %.4f  final(last 10) %.4f\n", "diversity", d.front(),
                          tail_mean(d));
            out << buf;
        }
    }
    if (fs::exists(dir / "summary.json")) {
        const json j = json::parse(read_text(dir / "summary.json"));
        char buf[160];
        std::snprintf(buf, sizeof buf, "  baseline %s, wall %.1f s\n", j.value("baseline", "?").c_str(),
                      j.value("wall_seconds", 0.0));
        out << buf;
    }
    if (fs::exists(dir / "steer_report.json")) {
        const json j = json::parse(read_text(dir / "steer_report.json"));
        out << "steering (" << j.value("prompts", 0) << " prompts, head " << j.value("head", "") << ")\n";
        for (const auto& e : j["strategies"]) {
            char buf[200];
            std::snprintf(buf, sizeof buf, "  %-10s mean %.4f  std %.4f  samples/prompt %d\n",
                          e["strategy"].get<std::string>().c_str(), e["mean"].get<double>(), e["std"].get<double>(),
                          e["samples_per_prompt"].get<int>());
            out << buf;
        }
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("ablate_", 0) == 0 && entry.path().extension() == ".csv") {
            out << name << ":\n" << read_text(entry.path());
        }
    }
    if (out.str().empty()) {
        throw ConfigError("nothing to report in " + dir.string());
    }
    return out.str();
}

}  // namespace lac
