#include <doctest.h>

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "phaselab/metrics.hpp"
#include "phaselab/report.hpp"
#include "phaselab/svg.hpp"
#include "test_support.hpp"

using namespace phaselab;
using json = nlohmann::json;

namespace {

const std::vector<double> kTableLogic{-0.40, -0.65, -0.64, -0.33, -0.23, +0.16, -0.06,
                                      +0.04, +0.15, -0.04, -0.02, -0.44, -0.38};

RunLog make_log(double beta, std::int64_t seed, double logic, double margin_level, const std::string& hash,
                bool failed = false) {
    TrainingTrace trace;
    for (int i = 1; i <= 10; ++i) {
        const double raw = margin_level / beta + 0.3 * ((i * 7 + seed) % 5) / beta;
        trace.steps.push_back({i, 0.6, raw, beta * raw});
    }
    std::vector<ProbeResult> results;
    int k = 0;
    for (const auto& p : builtin_probes()) {
        results.push_back({p.id, p.category, p.category == Category::kLogic ? logic : 0.05 * (++k % 3) - beta});
    }
    const auto report = make_report("", results);
    RunLogConfig c;
    c.beta = beta;
    c.seed = seed;
    c.lr = 5e-5;
    c.steps = 10;
    c.batch_size = 4;
    c.schedule_tag = "canonical";
    c.probe_pack = "builtin";
    const auto id = make_run_id(beta, seed, 5e-5, PathLabel::kFresh);
    if (failed) {
        TrainingTrace partial;
        partial.steps.assign(trace.steps.begin(), trace.steps.begin() + 3);
        RunLog log = build_run_log(id, hash, c, partial, nullptr, RunStatus::kFailed);
        log.error = "non-finite DPO loss at step 4";
        log.stream_key = "1";
        return log;
    }
    RunLog log = build_run_log(id, hash, c, trace, &report, RunStatus::kOk);
    log.adapter_hash = std::string(64, 'e');
    log.stream_key = "1";
    return log;
}

SweepResult table_sweep(const std::string& hash = std::string(64, 'a')) {
    SweepResult s;
    s.sweep_id = "table";
    s.base_hash = hash;
    const auto grid = default_beta_grid();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        s.entries.push_back({{grid[i], 1, 5e-5}, make_log(grid[i], 1, kTableLogic[i], 0.01 * i, hash)});
    }
    return s;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_CASE("phase table rows ascend in beta with signs and pocket markers") {
    SweepResult s;
    const std::string hash(64, 'a');
    s.entries.push_back({{0.02, 1, 5e-5}, make_log(0.02, 1, -0.3, 0.1, hash)});
    s.entries.push_back({{0.01, 1, 5e-5}, make_log(0.01, 1, 0.2, 0.1, hash)});
    const auto rows = parse_csv(phase_table_csv(s));
    REQUIRE(rows.size() == 3);
    const auto& header = rows[0];
    const auto col = [&](const std::string& name) {
        return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
    };
    CHECK(rows[1][0] == "0.01");
    CHECK(rows[2][0] == "0.02");
    CHECK(rows[1][col("logic")] == "+0.2");
    CHECK(rows[2][col("logic")] == "-0.3");
    CHECK(rows[1][col("pocket")] == "*");
    CHECK(rows[2][col("pocket")].empty());

    const auto text = phase_table_text(s);
    CHECK(text.find("+0.2000") != std::string::npos);
    CHECK(text.find("-0.3000") != std::string::npos);
}

TEST_CASE("failed runs render as a dash") {
    SweepResult s;
    const std::string hash(64, 'a');
    s.entries.push_back({{0.01, 1, 5e-5}, make_log(0.01, 1, 0.1, 0.1, hash)});
    s.entries.push_back({{0.02, 1, 5e-5}, make_log(0.02, 1, 0.1, 0.1, hash, true)});
    const auto rows = parse_csv(phase_table_csv(s));
    REQUIRE(rows.size() == 3);
    CHECK(std::count(rows[2].begin(), rows[2].end(), "—") >= 6);
    CHECK(std::find(rows[2].begin(), rows[2].end(), "failed") != rows[2].end());
    const auto bundle = build_report(s);
    CHECK(std::any_of(bundle.warnings.begin(), bundle.warnings.end(),
                      [](const std::string& w) { return w.find("failed") != std::string::npos; }));
}

TEST_CASE("phase table CSV reloads to the logged numbers") {
    const auto sweep = table_sweep();
    const auto rows = parse_csv(phase_table_csv(sweep));
    const auto& header = rows[0];
    REQUIRE(rows.size() == sweep.entries.size() + 1);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& log = sweep.entries[r - 1].log;
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (header[c] == "final_margin") CHECK(std::stod(rows[r][c]) == *log.final_margin);
            if (header[c] == "roughness") CHECK(std::stod(rows[r][c]) == *log.roughness);
            if (header[c] == "logic") CHECK(std::stod(rows[r][c]) == log.category_aggregates.at(Category::kLogic));
            if (header[c] == "arith") CHECK(std::stod(rows[r][c]) == log.category_aggregates.at(Category::kArith));
        }
    }
}

TEST_CASE("pockets.json lists the reference logic pocket") {
    const auto bundle = build_report(table_sweep());
    const auto pockets = json::parse(bundle.files.at("pockets.json"));
    const auto& logic = pockets.at("slices").at(0).at("categories").at("logic");
    CHECK(logic.at("positive_points") == json{0.008, 0.010, 0.012});
    CHECK(logic.at("band") == json{0.008, 0.012});
    CHECK(logic.at("contiguous") == false);
    CHECK(bundle.annotations.at("pocket_lo") == 0.008);

    const auto svg = bundle.files.at("margin_vs_beta.svg");
    CHECK(svg.find("pocket-band") != std::string::npos);
    CHECK(svg.find("data-key=\"pocket_lo\" data-value=\"0.008\"") != std::string::npos);
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("width=\"800\" height=\"500\"") != std::string::npos);
}

TEST_CASE("collapse.json agrees with the collapse detector") {
    const auto sweep = table_sweep();
    const auto bundle = build_report(sweep);
    std::vector<double> betas, rough;
    for (const auto& e : sweep.entries) {
        betas.push_back(e.point.beta);
        rough.push_back(*e.log.roughness);
    }
    const auto want = detect_collapse(PhaseSeries(betas, rough));
    const auto collapse = json::parse(bundle.files.at("collapse.json"));
    const auto& slice = collapse.at("slices").at(0);
    CHECK(slice.dump().find(format9(want.beta_from)) != std::string::npos);
    CHECK(bundle.annotations.at("collapse_from") == want.beta_from);
    CHECK(bundle.annotations.at("collapse_drop") == quantize9(want.relative_drop));
}

TEST_CASE("single-seed analysis omits variance and notes it") {
    const auto bundle = build_report(table_sweep());
    CHECK(bundle.files.count("variance.csv") == 0);
    CHECK(std::any_of(bundle.notes.begin(), bundle.notes.end(),
                      [](const std::string& n) { return n.find("variance.csv omitted") != std::string::npos; }));
    CHECK(std::any_of(bundle.warnings.begin(), bundle.warnings.end(),
                      [](const std::string& w) { return w.find("pocket is seed-sensitive") != std::string::npos; }));
    CHECK(bundle.files.count("seed_variance_vs_beta.svg") == 1);
}

TEST_CASE("multi-seed analysis writes seed variance") {
    SweepResult s;
    const std::string hash(64, 'a');
    for (double beta : {0.004, 0.006, 0.01}) {
        for (std::int64_t seed : {1, 2, 3}) {
            s.entries.push_back({{beta, seed, 5e-5}, make_log(beta, seed, 0.1 * seed - 0.2, 0.01 * seed, hash)});
        }
    }
    const auto bundle = build_report(s);
    REQUIRE(bundle.files.count("variance.csv") == 1);
    const auto rows = parse_csv(bundle.files.at("variance.csv"));
    CHECK(rows.size() > 1);
    std::vector<double> logic;
    for (const auto& e : s.entries) {
        if (e.point.beta == 0.004) logic.push_back(e.log.category_aggregates.at(Category::kLogic));
    }
    CHECK(bundle.files.at("variance.csv").find(format9(quantize9(seed_variance(logic)))) != std::string::npos);
    CHECK_FALSE(std::any_of(bundle.warnings.begin(), bundle.warnings.end(),
                            [](const std::string& w) { return w.find("seed-sensitive") != std::string::npos; }));
}

TEST_CASE("mixed base hashes raise a warning") {
    auto sweep = table_sweep();
    sweep.entries[4].log.base_hash = std::string(64, 'f');
    const auto bundle = build_report(sweep);
    CHECK(std::any_of(bundle.warnings.begin(), bundle.warnings.end(),
                      [](const std::string& w) { return w.find("mixed base hashes") != std::string::npos; }));
}

TEST_CASE("analysis is a pure function of the logs") {
    const auto sweep = table_sweep();
    testing::TempDir a("report_a"), b("report_b");
    write_report(build_report(sweep), a.path());
    write_report(build_report(sweep), b.path());
    std::size_t n = 0;
    for (const auto& f : std::filesystem::directory_iterator(a.path())) {
        CHECK(read_text_file(f.path()) == read_text_file(b.path() / f.path().filename()));
        ++n;
    }
    CHECK(n >= 8);
}

TEST_CASE("slices are ordered by lr then seed") {
    SweepResult s;
    const std::string hash(64, 'a');
    s.entries.push_back({{0.01, 2, 5e-5}, make_log(0.01, 2, 0.1, 0.1, hash)});
    s.entries.push_back({{0.01, 1, 2e-4}, make_log(0.01, 1, 0.1, 0.1, hash)});
    s.entries.push_back({{0.01, 1, 5e-5}, make_log(0.01, 1, 0.1, 0.1, hash)});
    std::sort(s.entries.begin(), s.entries.end(), [](const auto& x, const auto& y) { return x.point < y.point; });
    const auto slices = slices_of(s);
    REQUIRE(slices.size() == 4);
    CHECK(slices[0].lr == 5e-5);
    CHECK(slices[0].seed == 1);
    CHECK(slices[1].seed == 2);
    CHECK(slices[2].lr == 2e-4);
}

TEST_CASE("empty plots say so") {
    PlotSpec spec;
    spec.title = "nothing";
    const auto svg = render_plot(spec);
    CHECK(svg.find("no data") != std::string::npos);
}
