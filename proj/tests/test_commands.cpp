#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "phaselab/commands.hpp"
#include "test_support.hpp"

using namespace phaselab;
using json = nlohmann::json;

namespace {

// Tiny base so command tests stay quick.
json small_config(const std::filesystem::path& out) {
    return json{{"output_dir", out.string()},
                {"schedule", "fast"},
                {"steps", 4},
                {"preference_pool", 16},
                {"base", {{"pretrain", {{"steps", 5}, {"corpus_size", 50}}}}}};
}

std::filesystem::path write_config(const std::filesystem::path& dir, const json& j) {
    const auto path = dir / "config.json";
    write_text_file(path, j.dump(2));
    return path;
}

std::size_t count_files(const std::filesystem::path& dir, const std::string& prefix, const std::string& ext) {
    std::size_t n = 0;
    for (const auto& f : std::filesystem::directory_iterator(dir)) {
        const auto name = f.path().filename().string();
        if (name.starts_with(prefix) && f.path().extension() == ext) ++n;
    }
    return n;
}

}  // namespace

TEST_CASE("seed lists") {
    CHECK(parse_seed_list("1,2,3") == std::vector<std::int64_t>{1, 2, 3});
    CHECK(parse_seed_list("7") == std::vector<std::int64_t>{7});
    CHECK_THROWS_AS(parse_seed_list("1,x"), ConfigError);
    CHECK_THROWS_AS(parse_seed_list(""), ConfigError);
}

TEST_CASE("config parsing") {
    const auto job = parse_sweep_config(json{{"beta_grid", {0.01, 0.02}}, {"seeds", {1, 2}}, {"lr_grid", {1e-4}}});
    CHECK(job.plan.beta_grid == std::vector<double>{0.01, 0.02});
    CHECK(job.plan.seeds == std::vector<std::int64_t>{1, 2});
    CHECK(job.plan.lr_grid == std::vector<double>{1e-4});

    const auto stress = parse_stress_config(json::object());
    CHECK(stress.plan.points().size() == 9);

    const auto h = parse_hysteresis_config(json{{"stage_steps", 10}, {"seeds", {1}}});
    CHECK(h.plan.stage_steps == 10);
    CHECK(h.plan.beta_high == 0.02);
    CHECK(h.plan.beta_final == 0.01);
}

TEST_CASE("unknown and ill-typed keys name the field") {
    try {
        parse_sweep_config(json{{"beta_grd", {0.01}}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "beta_grd");
    }
    try {
        parse_sweep_config(json{{"beta_grid", "0.01"}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "beta_grid");
    }
    try {
        parse_sweep_config(json{{"base", {{"pretrain", {{"stepz", 3}}}}}});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "base.pretrain.stepz");
    }
    CHECK_THROWS_AS(parse_hysteresis_config(json{{"beta_high", 0.005}, {"beta_grid", {0.01}}}), ConfigError);
}

TEST_CASE("cmd_sweep exits 2 naming a bad field or probe pack") {
    testing::TempDir dir("cmd_bad");
    std::ostringstream out, err;
    CommandOptions o;
    o.config = write_config(dir.path(), json{{"beta_grid", {0.02, 0.01}}});
    CHECK(cmd_sweep(o, out, err) == kExitConfigError);
    CHECK(err.str().find("beta_grid") != std::string::npos);

    auto cfg = small_config(dir.path());
    cfg["probe_pack"] = "no-such-pack";
    o.config = write_config(dir.path(), cfg);
    err.str("");
    CHECK(cmd_sweep(o, out, err) == kExitConfigError);
    CHECK(err.str().find("no-such-pack") != std::string::npos);

    o.config = dir.path() / "missing.json";
    CHECK(cmd_sweep(o, out, err) == kExitConfigError);

    o.config = write_config(dir.path(), small_config(dir.path()));
    o.schedule = "slow";
    err.str("");
    CHECK(cmd_sweep(o, out, err) == kExitConfigError);
    CHECK(err.str().find("--schedule") != std::string::npos);
}

TEST_CASE("cmd_sweep writes logs and a manifest, deterministically") {
    testing::TempDir dir("cmd_sweep");
    auto cfg = small_config(dir.path() / "a");
    cfg["beta_grid"] = {0.005, 0.01, 0.05};
    cfg["sweep_id"] = "tiny";
    CommandOptions o;
    o.config = write_config(dir.path(), cfg);
    std::ostringstream out, err;
    REQUIRE(cmd_sweep(o, out, err) == kExitOk);
    const auto a = dir.path() / "a" / "tiny";
    CHECK(count_files(a, "run_", ".json") == 3);
    CHECK(std::filesystem::exists(a / "manifest.json"));
    CHECK(std::filesystem::exists(a / "base.ckpt"));

    o.out = dir.path() / "b";
    o.workers = 2;
    REQUIRE(cmd_sweep(o, out, err) == kExitOk);
    const auto b = dir.path() / "b" / "tiny";
    for (const auto& f : std::filesystem::directory_iterator(a)) {
        CHECK(read_text_file(f.path()) == read_text_file(b / f.path().filename()));
    }

    CommandOptions ao;
    REQUIRE(cmd_analyze(a, ao, out, err) == kExitOk);
    CHECK(std::filesystem::exists(a / "analysis" / "phase_table.csv"));
    CHECK(std::filesystem::exists(a / "analysis" / "margin_vs_beta.svg"));
    CHECK_FALSE(std::filesystem::exists(a / "analysis" / "variance.csv"));
}

TEST_CASE("cmd_sweep --seeds override") {
    testing::TempDir dir("cmd_seeds");
    auto cfg = small_config(dir.path());
    cfg["beta_grid"] = {0.01};
    CommandOptions o;
    o.config = write_config(dir.path(), cfg);
    o.seeds = parse_seed_list("4,5");
    std::ostringstream out, err;
    REQUIRE(cmd_sweep(o, out, err) == kExitOk);
    CHECK(count_files(dir.path() / "sweep", "run_", ".json") == 2);
}

TEST_CASE("cmd_analyze rejects an empty directory") {
    testing::TempDir dir("cmd_analyze_empty");
    std::ostringstream out, err;
    CHECK(cmd_analyze(dir.path(), CommandOptions{}, out, err) == kExitConfigError);
    CHECK_FALSE(err.str().empty());
}

TEST_CASE("cmd_hysteresis writes three logs per seed and a summary") {
    testing::TempDir dir("cmd_hyst");
    auto cfg = small_config(dir.path());
    cfg.erase("steps");
    cfg["stage_steps"] = 3;
    cfg["seeds"] = {1, 2};
    CommandOptions o;
    o.config = write_config(dir.path(), cfg);
    std::ostringstream out, err;
    REQUIRE(cmd_hysteresis(o, out, err) == kExitOk);
    const auto h = dir.path() / "hysteresis";
    CHECK(count_files(h, "run_", ".json") == 6);
    const auto csv = read_text_file(h / "hysteresis_summary.csv");
    CHECK(csv.starts_with("capability,PathA,PathB,p,d_z"));
    const auto summary = json::parse(read_text_file(h / "hysteresis_summary.json"));
    CHECK(summary.at("path_b_steps") == 6);
    CHECK(summary.at("complete_pairs") == 2);

    o.seeds = std::vector<std::int64_t>{1};
    o.out = dir.path() / "single";
    REQUIRE(cmd_hysteresis(o, out, err) == kExitOk);
    CHECK(read_text_file(dir.path() / "single" / "hysteresis" / "hysteresis_summary.csv").find("insufficient_n") !=
          std::string::npos);
}

TEST_CASE("cmd_hysteresis rejects inverted betas") {
    testing::TempDir dir("cmd_hyst_bad");
    CommandOptions o;
    o.config = write_config(dir.path(), json{{"beta_high", 0.005}});
    std::ostringstream out, err;
    CHECK(cmd_hysteresis(o, out, err) == kExitConfigError);
    CHECK(err.str().find("beta_high") != std::string::npos);
}

TEST_CASE("cmd_probes list and dump") {
    std::ostringstream out, err;
    CHECK(cmd_probes("list", CommandOptions{}, out, err) == kExitOk);
    CHECK(out.str().find("syllogism_1\tlogic") != std::string::npos);

    testing::TempDir dir("cmd_probes");
    CommandOptions o;
    o.out = dir.path() / "pack.json";
    o.probe_pack = "builtin+associative";
    CHECK(cmd_probes("dump", o, out, err) == kExitOk);
    CHECK(resolve_probe_pack(o.out->string()).size() == 16);

    o.probe_pack = "mystery";
    err.str("");
    CHECK(cmd_probes("list", o, out, err) == kExitConfigError);
    CHECK(err.str().find("mystery") != std::string::npos);
    CHECK(cmd_probes("explode", CommandOptions{}, out, err) == kExitConfigError);
}
