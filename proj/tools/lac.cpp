#include "lac/error.hpp"
#include "lac/harness/runner.hpp"
#include "lac/runtime.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace fs = std::filesystem;
using namespace lac;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("-c,--config", c.config, "run config file (key = value lines)");
    app->add_option("--set", c.sets, "override one config key, key=value (repeatable)");
    app->add_option("-o,--out", c.out, "output directory (overrides out_dir)");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    apply_overrides(cfg, c.sets);
    if (!c.out.empty()) {
        cfg.out_dir = c.out;
    }
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    configure_allocator();
    CLI::App app{"lac: latent-critic RL fine-tuning of small diffusion / flow models"};
    app.require_subcommand(1);

    Common cp, cv, ct, cs, ca;
    std::string vp_base, train_base, baseline, steer_ckpt, steer_mode, steer_head, study, report_dir, seeds = "1,2,3";
    bool resume = false;
    double eta = -1.0, tau = -1.0;
    int n = -1, K = -1, iters = -1;

    auto* pre = app.add_subcommand("pretrain", "train the base policy");
    add_common(pre, cp);

    auto* vp = app.add_subcommand("value-pretrain", "fit the critic to the frozen base policy");
    add_common(vp, cv);
    vp->add_option("--base", vp_base, "base checkpoint (default <out>/base.ckpt)");

    auto* tr = app.add_subcommand("train", "value pretraining (ours) then RL fine-tuning");
    add_common(tr, ct);
    tr->add_option("--baseline", baseline, "ours | grpo | ddpo");
    tr->add_option("--base", train_base, "base checkpoint (default <out>/base.ckpt)");
    tr->add_option("--iterations", iters, "PPO iterations");
    tr->add_flag("--resume", resume, "continue from <out>/train.ckpt");

    auto* st = app.add_subcommand("steer", "evaluate inference-time steering");
    add_common(st, cs);
    st->add_option("--checkpoint", steer_ckpt, "trained checkpoint (default <out>/train.ckpt)");
    st->add_option("--steer", steer_mode, "none | guide | bon | smc | guide+bon | all");
    st->add_option("--eta", eta, "guidance strength");
    st->add_option("--n", n, "best-of-n candidates");
    st->add_option("--K", K, "SMC particles");
    st->add_option("--tau", tau, "SMC temperature");
    st->add_option("--head", steer_head, "reward head used for steering and scoring");

    auto* ab = app.add_subcommand("ablate", "run an ablation grid");
    add_common(ab, ca);
    ab->add_option("--study", study, "vp | heads | conditioning | cfg | clip")->required();
    ab->add_option("--seeds", seeds, "comma separated seeds");
    ab->add_option("--iterations", iters, "PPO iterations per run");

    auto* rp = app.add_subcommand("report", "summarise a run directory");
    rp->add_option("dir", report_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*pre) {
            const RunConfig cfg = resolve(cp);
            const auto r = run_pretrain(cfg, cfg.out_dir);
            std::printf("pretrain: final loss %.4f, mode coverage %.3f -> %s/base.ckpt\n",
                        r.losses.empty() ? 0.0 : r.losses.back(), r.mode_coverage, cfg.out_dir.c_str());
        } else if (*vp) {
            RunConfig cfg = resolve(cv);
            const auto l = run_value_pretrain(cfg, cfg.out_dir, vp_base);
            std::printf("value-pretrain: %zu iterations, loss %.4g -> %.4g\n", l.size(), l.empty() ? 0.0 : l.front(),
                        l.empty() ? 0.0 : l.back());
        } else if (*tr) {
            RunConfig cfg = resolve(ct);
            if (!baseline.empty()) {
                apply_override(cfg, "train.baseline=" + baseline);
            }
            if (iters >= 0) {
                apply_override(cfg, "train.iterations=" + std::to_string(iters));
            }
            TrainOptions o;
            o.base = train_base;
            o.resume = resume;
            o.quiet = false;
            run_train(cfg, cfg.out_dir, o);
            std::cout << report_run(cfg.out_dir);
        } else if (*st) {
            RunConfig cfg = resolve(cs);
            if (eta >= 0.0) cfg.steer.cfg.eta = eta;
            if (n >= 0) cfg.steer.cfg.n = n;
            if (K >= 0) cfg.steer.cfg.K = K;
            if (tau >= 0.0) cfg.steer.cfg.tau = tau;
            if (!steer_head.empty()) cfg.steer.head = steer_head;
            SteerOptions o;
            if (steer_mode.empty()) {
                steer_mode = cfg.steer.all ? "all" : to_string(cfg.steer.mode);
            }
            if (steer_mode == "all") {
                o.modes = {Strategy::None, Strategy::Guide, Strategy::Bon, Strategy::Smc, Strategy::GuideBon};
            } else {
                o.modes = {parse_strategy(steer_mode)};
            }
            cfg.validate();
            o.checkpoint = steer_ckpt.empty() ? fs::path(cfg.out_dir) / "train.ckpt" : fs::path(steer_ckpt);
            std::cout << run_steer(cfg, o, fs::path(cfg.out_dir) / "steer_report.json");
        } else if (*ab) {
            RunConfig cfg = resolve(ca);
            if (iters >= 0) {
                apply_override(cfg, "train.iterations=" + std::to_string(iters));
            }
            AblationOptions o;
            o.seeds.clear();
            std::stringstream ss(seeds);
            std::string item;
            while (std::getline(ss, item, ',')) {
                try {
                    o.seeds.push_back(std::stoull(item));
                } catch (const std::logic_error&) {
                    throw ConfigError("--seeds: bad seed '" + item + "'");
                }
            }
            std::cout << run_ablation(cfg, study, cfg.out_dir, o);
        } else if (*rp) {
            std::cout << report_run(report_dir);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
