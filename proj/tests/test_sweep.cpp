#include <doctest.h>

#include <algorithm>
#include <set>

#include "phaselab/checkpoint.hpp"
#include "phaselab/sweep.hpp"
#include "test_support.hpp"

using namespace phaselab;

namespace {

const std::string kHash(64, 'c');

RunLog synthetic(double beta, std::int64_t seed, PathLabel path, double logic) {
    TrainingTrace trace;
    for (int i = 1; i <= 4; ++i) trace.steps.push_back({i, 0.6, 0.5 * i, beta * 0.5 * i});
    std::vector<ProbeResult> results;
    for (const auto& p : builtin_probes()) {
        results.push_back({p.id, p.category, p.category == Category::kLogic ? logic : 0.1});
    }
    const auto report = make_report("", results);
    RunLogConfig c;
    c.beta = beta;
    c.seed = seed;
    c.lr = 5e-5;
    c.steps = 4;
    c.batch_size = 4;
    c.schedule_tag = "canonical";
    c.path_label = path;
    c.probe_pack = "builtin";
    RunLog log = build_run_log(make_run_id(beta, seed, 5e-5, path), kHash, c, trace, &report, RunStatus::kOk);
    log.adapter_hash = std::string(64, 'd');
    log.stream_key = "1";
    return log;
}

SweepPlan quick_plan(std::vector<double> betas, std::vector<std::int64_t> seeds, int steps = 6) {
    SweepPlan plan;
    plan.beta_grid = std::move(betas);
    plan.seeds = std::move(seeds);
    plan.training = testing::quick_training(steps);
    return plan;
}

}  // namespace

TEST_CASE("default beta grid") {
    const auto g = default_beta_grid();
    CHECK(g == std::vector<double>{0.0005, 0.001, 0.002, 0.004, 0.006, 0.008, 0.009, 0.010, 0.012, 0.015, 0.020,
                                   0.050, 0.100});
    CHECK(std::is_sorted(g.begin(), g.end()));
    CHECK(std::adjacent_find(g.begin(), g.end()) == g.end());
    CHECK(default_seeds(false) == std::vector<std::int64_t>{1});
    CHECK(default_seeds(true) == std::vector<std::int64_t>{1, 2, 3, 4, 5});
}

TEST_CASE("stress grid ordering and cardinality") {
    const auto plan = stress_grid();
    const auto pts = plan.points();
    REQUIRE(pts.size() == 9);
    CHECK(pts[0].lr == 1e-5);
    CHECK(pts[0].beta == 0.006);
    CHECK(pts[1].lr == 1e-5);
    CHECK(pts[1].beta == 0.01);
    CHECK(pts[3].lr == 5e-5);
    CHECK(pts[8].lr == 2e-4);
    CHECK(pts[8].beta == 0.02);
    CHECK(stress_grid({1e-4}, {0.01}).points().size() == 1);
    CHECK_THROWS_AS(stress_grid({}, {0.01}), std::invalid_argument);
}

TEST_CASE("plan validation") {
    SweepPlan plan;
    CHECK_NOTHROW(plan.validate());
    CHECK(plan.effective_lr_grid() == std::vector<double>{5e-5});
    plan.beta_grid = {0.01, 0.01};
    CHECK_THROWS(plan.validate());
    plan.beta_grid = {0.02, 0.01};
    CHECK_THROWS(plan.validate());
    plan.beta_grid = {-0.01, 0.01};
    CHECK_THROWS(plan.validate());
    plan = SweepPlan{};
    plan.seeds.clear();
    CHECK_THROWS(plan.validate());

    HysteresisPlan h;
    CHECK_NOTHROW(h.validate());
    h.beta_high = 0.005;
    CHECK_THROWS(h.validate());
}

TEST_CASE("run ids and stream keys") {
    CHECK(make_run_id(0.01, 3, 5e-5, PathLabel::kFresh) != make_run_id(0.01, 3, 5e-5, PathLabel::kHysteresisStage2));
    CHECK(make_run_id(0.01, 3, 5e-5, PathLabel::kFresh).starts_with("run_"));
    const auto fresh = run_stream_key("h", 0.02, 1, 5e-5, "canonical", PathLabel::kFresh);
    CHECK(fresh == run_stream_key("h", 0.02, 1, 5e-5, "canonical", PathLabel::kHysteresisStage1));
    CHECK(fresh != run_stream_key("h", 0.02, 1, 5e-5, "canonical", PathLabel::kHysteresisStage2));
    CHECK(fresh != run_stream_key("h", 0.02, 2, 5e-5, "canonical", PathLabel::kFresh));
    CHECK(fresh != run_stream_key("g", 0.02, 1, 5e-5, "canonical", PathLabel::kFresh));
}

TEST_CASE("sweep completeness, shared base hash, and determinism across workers") {
    const auto& base = testing::small_base();
    const auto plan = quick_plan({0.005, 0.01, 0.05}, {1, 2});
    const auto a = run_sweep(plan, base, {1, std::nullopt});
    const auto b = run_sweep(plan, base, {2, std::nullopt});
    REQUIRE(a.entries.size() == 6);
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].log.base_hash == base.hash);
        CHECK(a.entries[i].log.ok());
        CHECK(serialize_run_log(a.entries[i].log) == serialize_run_log(b.entries[i].log));
    }
    CHECK(a.seeds() == std::vector<std::int64_t>{1, 2});
    CHECK(a.betas() == std::vector<double>{0.005, 0.01, 0.05});
    CHECK(a.failed_count() == 0);
    REQUIRE(a.find({0.01, 2, 5e-5}) != nullptr);
    CHECK(a.find({0.01, 9, 5e-5}) == nullptr);
}

TEST_CASE("runs are keyed by coordinates, not plan position") {
    const auto& base = testing::small_base();
    const auto forward = run_sweep(quick_plan({0.004, 0.02}, {3, 1}), base);
    const auto single = run_sweep(quick_plan({0.02}, {1}), base);
    const auto* e = forward.find({0.02, 1, 5e-5});
    REQUIRE(e != nullptr);
    CHECK(serialize_run_log(e->log) == serialize_run_log(single.entries.front().log));
}

TEST_CASE("one beta across five seeds") {
    const auto& base = testing::small_base();
    const auto r = run_sweep(quick_plan({0.006}, {1, 2, 3, 4, 5}), base);
    REQUIRE(r.entries.size() == 5);
    std::set<std::string> reports, adapters;
    for (const auto& e : r.entries) {
        reports.insert(nlohmann::json(e.log.probe_results).dump());
        adapters.insert(*e.log.adapter_hash);
        auto cfg = e.log.config;
        cfg.seed = 1;
        CHECK(cfg == r.entries.front().log.config);
    }
    CHECK(adapters.size() == 5);
    CHECK(reports.size() == 5);
}

TEST_CASE("failed runs are recorded and the sweep continues") {
    const auto& base = testing::small_base();
    auto plan = quick_plan({0.01, 1e6}, {1}, 8);
    plan.lr_grid = {1e30};
    plan.training.optimizer.kind = OptimizerKind::kSgd;
    testing::TempDir dir("sweep_fail");
    const auto r = run_sweep(plan, base, {1, dir.path()});
    REQUIRE(r.entries.size() == 2);
    CHECK(r.failed_count() >= 1);
    for (const auto& e : r.entries) {
        if (!e.log.ok()) {
            CHECK(e.log.error.has_value());
            CHECK_FALSE(e.log.adapter_hash.has_value());
        }
    }
    const auto reloaded = load_sweep_directory(dir.path());
    CHECK(reloaded.entries.size() == 2);
    CHECK(reloaded.failed_count() == r.failed_count());
}

TEST_CASE("missing inputs abort") {
    RegisteredBase none;
    CHECK_THROWS_AS(run_sweep(SweepPlan{}, none), std::invalid_argument);
    auto plan = quick_plan({0.01}, {1});
    plan.training.probe_pack = "nope";
    CHECK_THROWS_AS(run_sweep(plan, testing::small_base()), UnknownProbePack);
}

TEST_CASE("a written sweep reloads into the same result") {
    const auto& base = testing::small_base();
    testing::TempDir dir("sweep_reload");
    const auto r = run_sweep(quick_plan({0.002, 0.01, 0.1}, {1}), base, {1, dir.path()});
    const auto back = load_sweep_directory(dir.path());
    REQUIRE(back.entries.size() == r.entries.size());
    CHECK(back.base_hash == base.hash);
    for (std::size_t i = 0; i < r.entries.size(); ++i) CHECK(back.entries[i].log == r.entries[i].log);

    testing::TempDir empty("sweep_empty");
    CHECK_THROWS(load_sweep_directory(empty.path()));
    std::filesystem::copy_file(dir.path() / (r.entries[0].log.run_id + ".json"), dir.path() / "run_copy.json");
    CHECK_THROWS(load_sweep_directory(dir.path()));
}

TEST_CASE("hysteresis: cardinality, prefix property and optimizer reset") {
    const auto& base = testing::small_base();
    HysteresisPlan plan;
    plan.stage_steps = 5;
    plan.training = testing::quick_training();
    testing::TempDir dir("hyst");
    const auto r = run_hysteresis(plan, base, {2, dir.path()});
    CHECK(r.path_a_steps == 5);
    CHECK(r.path_b_steps == 10);
    REQUIRE(r.seeds.size() == 5);
    CHECK(r.complete_pairs() == 5);

    std::size_t logs = 0, ckpts = 0;
    for (const auto& f : std::filesystem::directory_iterator(dir.path())) {
        if (f.path().extension() == ".json") ++logs;
        if (f.path().extension() == ".ckpt") ++ckpts;
    }
    CHECK(logs == 15);
    CHECK(ckpts == 5);

    const auto& s = r.seeds.front();
    CHECK(s.path_a.config.path_label == PathLabel::kFresh);
    CHECK(s.stage1.config.path_label == PathLabel::kHysteresisStage1);
    REQUIRE(s.stage2.has_value());
    CHECK(s.stage2->config.optimizer_reset);
    CHECK(s.stage2->initial_adapter_hash == s.stage1.adapter_hash);
    CHECK(s.stage2->config.beta == plan.beta_final);

    SweepPlan quench;
    quench.beta_grid = {plan.beta_high};
    quench.seeds = {s.seed};
    quench.training = plan.training;
    quench.training.steps = plan.stage_steps;
    const RunContext ctx(base, quench.training);
    const auto q = ctx.execute(RunRequest({plan.beta_high, s.seed, plan.effective_lr()}));
    REQUIRE(q.adapters.has_value());
    REQUIRE(s.stage1_adapters.has_value());
    CHECK(save_checkpoint(*base.params, &*q.adapters) == save_checkpoint(*base.params, &*s.stage1_adapters));
    CHECK(q.log.margin_scaled == s.stage1.margin_scaled);

    const auto csv = hysteresis_summary_csv(r);
    CHECK(csv.starts_with("capability,PathA,PathB,p,d_z,"));
    const auto j = hysteresis_summary_json(r);
    CHECK(j.at("comparisons").size() == r.comparisons.size());
    CHECK(r.comparisons.back().capability == "final_margin");
}

TEST_CASE("single-seed hysteresis flags insufficient n") {
    const auto& base = testing::small_base();
    HysteresisPlan plan;
    plan.stage_steps = 3;
    plan.seeds = {1};
    plan.training = testing::quick_training();
    const auto r = run_hysteresis(plan, base);
    REQUIRE_FALSE(r.comparisons.empty());
    for (const auto& c : r.comparisons) CHECK(c.stats.insufficient_n);
    CHECK(hysteresis_summary_csv(r).find("insufficient_n") != std::string::npos);
}

TEST_CASE("paired comparison over five same-sign seeds") {
    std::vector<HysteresisSeedResult> seeds;
    for (int k = 1; k <= 5; ++k) {
        HysteresisSeedResult s;
        s.seed = k;
        s.path_a = synthetic(0.01, k, PathLabel::kFresh, 0.1 * k);
        s.stage1 = synthetic(0.02, k, PathLabel::kHysteresisStage1, 0.0);
        s.stage2 = synthetic(0.01, k, PathLabel::kHysteresisStage2, 0.1 * k - 0.05 * k * k);
        seeds.push_back(std::move(s));
    }
    const auto cmp = compare_paths(seeds);
    const auto it = std::find_if(cmp.begin(), cmp.end(), [](const auto& c) { return c.capability == "logic"; });
    REQUIRE(it != cmp.end());
    CHECK(it->stats.n == 5);
    CHECK(it->stats.p_wilcoxon == doctest::Approx(0.0625));
    CHECK(it->stats.mean_diff > 0.0);
    CHECK(it->path_a_mean == doctest::Approx(0.3));

    seeds[2].stage2.reset();
    const auto partial = compare_paths(seeds);
    CHECK(partial.front().stats.n == 4);
}

TEST_CASE("cross-probe correlation") {
    SweepResult sweep;
    sweep.base_hash = kHash;
    CounterRng rng(6);
    const auto grid = default_beta_grid();
    for (double beta : grid) {
        RunLog log = synthetic(beta, 1, PathLabel::kFresh, 0.0);
        const double x = rng.normal();
        log.probe_results[Category::kLogic]["syllogism_1"] = quantize9(x);
        log.probe_results[Category::kArith]["add_small"] = quantize9(-x);
        sweep.entries.push_back({{beta, 1, 5e-5}, log});
    }
    CHECK(cross_probe_correlation(sweep, "syllogism_1", "syllogism_1").r == doctest::Approx(1.0));
    CHECK(cross_probe_correlation(sweep, "syllogism_1", "add_small").r == doctest::Approx(-1.0));
    CHECK_THROWS_AS(cross_probe_correlation(sweep, "syllogism_1", "missing"), StatsError);

    // Planted r: y = r·x + sqrt(1 − r²)·z with z orthogonalized against x.
    std::vector<double> x(grid.size()), z(grid.size());
    for (auto& v : x) v = rng.normal();
    for (auto& v : z) v = rng.normal();
    auto center = [](std::vector<double>& v) {
        const double m = mean(v);
        for (double& e : v) e -= m;
    };
    center(x);
    center(z);
    double xz = 0, xx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xz += x[i] * z[i];
        xx += x[i] * x[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) z[i] -= xz / xx * x[i];
    double zz = 0;
    for (double e : z) zz += e * e;
    const double planted = -0.71;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double y = planted * x[i] / std::sqrt(xx) + std::sqrt(1 - planted * planted) * z[i] / std::sqrt(zz);
        sweep.entries[i].log.probe_results[Category::kLogic]["syllogism_1"] = quantize9(x[i]);
        sweep.entries[i].log.probe_results[Category::kArith]["add_small"] = quantize9(y);
    }
    CHECK(cross_probe_correlation(sweep, "syllogism_1", "add_small").r == doctest::Approx(planted).epsilon(0.01));
}
