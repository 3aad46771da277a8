#include "lac/error.hpp"
#include "lac/harness/runner.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace lac;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lac_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Small enough to train in well under a second.
RunConfig tiny(std::uint64_t seed = 3) {
    RunConfig c;
    c.seed = seed;
    c.schedule.steps = 6;
    c.net.hidden = 16;
    c.net.depth = 2;
    c.pretrain.steps = 60;
    c.pretrain.batch = 64;
    c.pretrain.scatter_per_class = 5;
    c.train.batch = 32;
    c.train.iterations = 6;
    c.train.vp_iters = 2;
    c.checkpoint_every = 2;
    return c;
}

}  // namespace

TEST_CASE("config text round-trips") {
    RunConfig c;
    CHECK(parse_config(serialize_config(c)) == c);

    c.seed = 1234567890123ULL;
    c.out_dir = "runs/x y";
    c.data.mixture.target_weights = {0.1, 0.2, 0.3};
    c.schedule.kind = ScheduleKind::Ddpm;
    c.schedule.params.flow_timesteps = {1.0, 0.3333333333333333, 0.1};
    c.critic.attn_layers = {0, 2};
    c.critic.pooling = Pooling::QueryAttention;
    c.critic.shared_head = true;
    c.train.baseline = Baseline::Grpo;
    c.train.clip_eps = 0.1 + 0.2;  // not exactly representable in short form
    c.train.ratios = {1.0, 2.0, 0.5};
    c.steer.mode = Strategy::GuideBon;
    c.steer.cfg.scorer = SmcScorerKind::PushToX0;
    c.steer.head = "ver";
    c.rewards = {make_reward("pref", RewardFn::ModeAffinity, 1.0, {{"s", "0.25"}}),
                 make_reward("ver", RewardFn::RegionIndicator, 2.5, {{"box.0", "0,0,1,1"}, {"box", "-1,-1,1,1"}}),
                 make_reward("align", RewardFn::Alignment, 1e-3)};
    const std::string text = serialize_config(c);
    const RunConfig back = parse_config(text);
    CHECK(back == c);
    CHECK(back.train.clip_eps == 0.1 + 0.2);
    CHECK(serialize_config(back) == text);
}

TEST_CASE("config errors name the key") {
    const std::string ok = "seed = 1\nout_dir = a\n";
    CHECK_NOTHROW(parse_config(ok));
    auto message = [](const std::string& text) {
        try {
            parse_config(text);
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message("out_dir = a\n").find("seed") != std::string::npos);
    CHECK(message(ok + "train.clip = 3\n").find("train.clip") != std::string::npos);
    CHECK(message(ok + "train.batch = many\n").find("train.batch") != std::string::npos);
    CHECK(message(ok + "seed = 2\n").find("seed") != std::string::npos);
    CHECK(message(ok + "rewards = a\n").find("reward.a.fn") != std::string::npos);
    CHECK(message(ok + "reward.zz.fn = alignment\n").find("reward.zz") != std::string::npos);
    CHECK(message(ok + "train.baseline = grpo\ntrain.group_size = 1\n").find("group_size") != std::string::npos);
    CHECK_FALSE(message(ok + "just words\n").empty());

    RunConfig c = parse_config(ok + "# comment\n  policy.hidden = 32   # trailing\n");
    CHECK(c.net.hidden == 32);
    apply_override(c, "reward.pref.meta.s=2");
    CHECK(c.rewards.front().metadata.at("s") == "2");
    CHECK_THROWS_AS(apply_override(c, "nokey"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "steer.head=missing"), ConfigError);

    CHECK_THROWS_AS(apply_override(c, "rewards=pref,ver"), ConfigError);
    CHECK(c.steer.head.empty());
    apply_overrides(c, {"rewards=pref,ver", "reward.ver.fn=region-indicator", "train.batch=64", "train.batch=32"});
    REQUIRE(c.rewards.size() == 2);
    CHECK(c.rewards[1].fn == RewardFn::RegionIndicator);
    CHECK(c.rewards[0].metadata.at("s") == "2");
    CHECK(c.train.batch == 32);
}

TEST_CASE("checkpoint container") {
    Checkpoint c;
    c.meta["a"] = "1";
    c.meta["empty"] = "";
    Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, -6e-300;
    c.put("w", m);
    c.put("scalar", Matrix::Constant(1, 1, 0.1));
    const std::string bytes = encode_checkpoint(c);
    CHECK(bytes.substr(0, 8) == "LATCKPT1");
    CHECK(decode_checkpoint(bytes) == c);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), ConfigError);
    CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), ConfigError);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), ConfigError);
    CHECK_THROWS_AS(c.put("w", m), Error);

    const fs::path dir = scratch("ckpt");
    write_checkpoint(dir / "c.ckpt", c);
    CHECK(read_checkpoint(dir / "c.ckpt") == c);
    CHECK_FALSE(fs::exists(dir / "c.ckpt.tmp"));
}

TEST_CASE("metrics log is append-only with frozen columns") {
    const fs::path dir = scratch("metrics");
    MetricsLog log(dir / "m.csv", {"pref", "ver"});
    log.create();
    IterationMetrics m;
    m.reward_mean = {{"pref", 0.5}, {"ver", 0.25}};
    m.iteration = 1;
    m.clip_frac = 0.1;
    log.append(m);
    m.iteration = 2;
    log.append(m);
    CHECK_THROWS(log.append(m));
    IterationMetrics wrong = m;
    wrong.iteration = 3;
    wrong.reward_mean = {{"ver", 0.25}, {"pref", 0.5}};
    CHECK_THROWS(log.append(wrong));
    CHECK(slurp(dir / "m.csv").substr(0, slurp(dir / "m.csv").find('\n')) ==
          "iteration,reward.pref,reward.ver,policy_loss,value_loss,clip_frac,approx_kl,kl,diversity,mean_ratio,skipped");
    const MetricsTable t = read_metrics(dir / "m.csv");
    CHECK(t.rows.size() == 2);
    CHECK(t.series("clip_frac")[1] == 0.1);
    log.reopen(1);
    CHECK(read_metrics(dir / "m.csv").rows.size() == 1);
    CHECK(tail_mean({1, 2, 3, 4}, 2) == 3.5);
    CHECK(tail_mean({1, 2}, 10) == 1.5);
}

TEST_CASE("pretraining is reproducible byte for byte") {
    const RunConfig c = tiny();
    const fs::path a = scratch("pre_a"), b = scratch("pre_b");
    run_pretrain(c, a);
    run_pretrain(c, b);
    CHECK(slurp(a / "base.ckpt") == slurp(b / "base.ckpt"));
    CHECK(slurp(a / "base_samples.csv") == slurp(b / "base_samples.csv"));
    const PolicyNet p = policy_from_checkpoint(read_checkpoint(a / "base.ckpt"));
    CHECK(p.cfg.hidden == 16);
    CHECK(p.params.size() > 0);
}

TEST_CASE("trainer checkpoints round-trip and check the head manifest") {
    RunConfig c = tiny();
    c.rewards = {make_reward("pref", RewardFn::ModeAffinity), make_reward("align", RewardFn::Alignment)};
    const fs::path dir = scratch("trainer_ck");
    run_pretrain(c, dir);
    TrainOptions o;
    o.max_new_iterations = 2;
    run_train(c, dir, o);
    const Checkpoint ck = read_checkpoint(dir / "train.ckpt");
    CHECK(ck.meta_at("iteration") == "2");
    CHECK(ck.meta_at("critic.heads") == "pref,align");
    const RewardSetup rs = build_rewards(c);
    const TrainerState s = trainer_from_checkpoint(ck, c, rs);
    CHECK(s.iteration == 2);
    CHECK(s.vp_done == 2);
    CHECK(s.critic->params == ck.params("critic."));
    CHECK(s.policy_opt.steps() == std::stol(ck.meta_at("opt.policy.steps")));
    // re-encoding the rebuilt state gives the same tensors
    Checkpoint again = trainer_checkpoint(s, c);
    CHECK(again.tensors == ck.tensors);

    RunConfig swapped = c;
    swapped.rewards = {make_reward("align", RewardFn::Alignment), make_reward("pref", RewardFn::ModeAffinity)};
    CHECK_THROWS_AS(trainer_from_checkpoint(ck, swapped, build_rewards(swapped)), ConfigError);
    // resuming under a changed config is refused before any training
    TrainOptions r;
    r.resume = true;
    CHECK_THROWS_AS(run_train(swapped, dir, r), ConfigError);
}

TEST_CASE("interrupted runs resume to identical metrics") {
    const RunConfig c = tiny(5);
    const fs::path full = scratch("resume_full"), cut = scratch("resume_cut");
    run_pretrain(c, full);
    fs::copy_file(full / "base.ckpt", cut / "base.ckpt");
    run_train(c, full);

    TrainOptions first;
    first.max_new_iterations = 3;  // stops past the checkpoint at 2
    run_train(c, cut, first);
    CHECK(read_metrics(cut / "metrics.csv").rows.size() == 3);
    CHECK(read_checkpoint(cut / "train.ckpt").meta_at("iteration") == "2");
    TrainOptions rest;
    rest.resume = true;
    const TrainOutput out = run_train(c, cut, rest);
    CHECK(out.iteration == 6);
    CHECK(slurp(cut / "metrics.csv") == slurp(full / "metrics.csv"));
    CHECK(slurp(cut / "vp.csv") == slurp(full / "vp.csv"));
    CHECK(fs::exists(cut / "summary.json"));
}

TEST_CASE("identical config and seed give identical metrics bytes") {
    for (Baseline b : {Baseline::Ours, Baseline::Grpo, Baseline::Ddpo}) {
        RunConfig c = tiny(9);
        c.train.baseline = b;
        const fs::path a = scratch("det_a"), bb = scratch("det_b");
        run_pretrain(c, a);
        run_pretrain(c, bb);
        run_train(c, a);
        run_train(c, bb);
        CHECK(slurp(a / "metrics.csv") == slurp(bb / "metrics.csv"));
    }
}

TEST_CASE("train refuses a missing or mismatched base") {
    RunConfig c = tiny();
    const fs::path dir = scratch("nobase");
    CHECK_THROWS_AS(run_train(c, dir), ConfigError);
    run_pretrain(c, dir);
    c.net.hidden = 8;
    CHECK_THROWS_AS(run_train(c, dir), ConfigError);
}

TEST_CASE("steer report covers every strategy and guide at eta 0 equals none") {
    RunConfig c = tiny();
    c.steer.prompts = 12;
    c.steer.cfg.eta = 0.0;
    const fs::path dir = scratch("steer");
    run_pretrain(c, dir);
    run_train(c, dir);
    SteerOptions o;
    o.checkpoint = dir / "train.ckpt";
    o.modes = {Strategy::None, Strategy::Guide, Strategy::Bon, Strategy::Smc, Strategy::GuideBon};
    const std::string rep = run_steer(c, o, dir / "steer_report.json");
    for (const char* s : {"\"none\"", "\"guide\"", "\"bon\"", "\"smc\"", "\"guide+bon\""}) {
        CHECK(rep.find(s) != std::string::npos);
    }
    SteerOptions a, g;
    a.checkpoint = g.checkpoint = o.checkpoint;
    a.modes = {Strategy::None};
    g.modes = {Strategy::Guide};
    const std::string ra = run_steer(c, a, {}), rg = run_steer(c, g, {});
    auto mean_of = [](const std::string& r) { return r.substr(r.find("\"mean\""), 40); };
    CHECK(mean_of(ra) == mean_of(rg));

    // guidance needs the critic, a policy-only checkpoint has none
    SteerOptions p;
    p.checkpoint = dir / "base.ckpt";
    p.modes = {Strategy::Guide};
    CHECK_THROWS_AS(run_steer(c, p, {}), ConfigError);
}

TEST_CASE("unknown ablation study lists the valid names") {
    try {
        run_ablation(tiny(), "nope", scratch("abl"));
        FAIL("expected an error");
    } catch (const ConfigError& e) {
        const std::string m = e.what();
        for (const auto& s : ablation_studies()) {
            CHECK(m.find(s) != std::string::npos);
        }
    }
}
