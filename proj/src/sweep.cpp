#include "phaselab/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "phaselab/checkpoint.hpp"
#include "phaselab/digest.hpp"
#include "phaselab/metrics.hpp"

namespace phaselab {
namespace {

using json = nlohmann::json;

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void check_strictly_increasing(const std::vector<double>& xs, const char* what) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] > 0.0) || !std::isfinite(xs[i])) throw std::invalid_argument(std::string(what) + ": values must be positive");
        if (i > 0 && !(xs[i] > xs[i - 1])) throw std::invalid_argument(std::string(what) + ": must be strictly increasing");
    }
}

}  // namespace

std::vector<double> default_beta_grid() {
    return {0.0005, 0.001, 0.002, 0.004, 0.006, 0.008, 0.009, 0.010, 0.012, 0.015, 0.020, 0.050, 0.100};
}

std::vector<std::int64_t> default_seeds(bool multi_seed) {
    if (multi_seed) return {1, 2, 3, 4, 5};
    return {1};
}

double TrainingSettings::default_lr() const { return RunConfig::for_schedule(schedule, 0.01, 1).lr; }

RunConfig TrainingSettings::run_config(double beta, std::int64_t seed, double lr) const {
    RunConfig c = RunConfig::for_schedule(schedule, beta, seed);
    c.lr = lr;
    if (steps) c.steps = *steps;
    c.batch_size = batch_size;
    c.adapter = adapter;
    c.optimizer = optimizer;
    return c;
}

void TrainingSettings::validate() const {
    if (steps && *steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (preference.pool_size < 1) throw std::invalid_argument("preference_pool must be >= 1");
    if (!(preference.conflict_fraction >= 0.0 && preference.conflict_fraction <= 1.0)) {
        throw std::invalid_argument("conflict_fraction must lie in [0, 1]");
    }
    adapter.validate();
}

void SweepPlan::validate() const {
    if (sweep_id.empty() || sweep_id.find('/') != std::string::npos) throw std::invalid_argument("sweep_id must be a plain name");
    if (beta_grid.empty()) throw std::invalid_argument("beta_grid must be non-empty");
    check_strictly_increasing(beta_grid, "beta_grid");
    if (seeds.empty()) throw std::invalid_argument("seeds must be non-empty");
    if (std::set<std::int64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw std::invalid_argument("seeds must not repeat");
    }
    for (double lr : lr_grid) {
        if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr_grid: values must be positive");
    }
    if (std::set<double>(lr_grid.begin(), lr_grid.end()).size() != lr_grid.size()) {
        throw std::invalid_argument("lr_grid must not repeat");
    }
    training.validate();
}

std::vector<double> SweepPlan::effective_lr_grid() const {
    if (lr_grid.empty()) return {training.default_lr()};
    return lr_grid;
}

std::vector<SweepPoint> SweepPlan::points() const {
    std::vector<SweepPoint> out;
    for (double lr : effective_lr_grid()) {
        for (double beta : beta_grid) {
            for (auto seed : seeds) out.push_back({beta, seed, lr});
        }
    }
    return out;
}

SweepPlan stress_grid(std::vector<double> lr_values, std::vector<double> beta_values) {
    if (lr_values.empty() || beta_values.empty()) throw std::invalid_argument("stress_grid: both lists must be non-empty");
    SweepPlan plan;
    plan.sweep_id = "stress";
    plan.lr_grid = std::move(lr_values);
    std::sort(beta_values.begin(), beta_values.end());
    plan.beta_grid = std::move(beta_values);
    plan.seeds = {1};
    return plan;
}

RegisteredBase register_base(ParameterSet params) {
    if (!params.all_finite()) throw std::invalid_argument("base checkpoint has non-finite weights");
    RegisteredBase b;
    b.hash = params.content_hash();
    b.params = std::make_shared<const ParameterSet>(std::move(params));
    return b;
}

RegisteredBase prepare_base(const BaseSpec& spec) {
    if (spec.checkpoint) {
        auto loaded = read_checkpoint_file(*spec.checkpoint);
        return register_base(std::move(loaded.params));
    }
    spec.model.validate();
    const auto corpus = synthetic_corpus(spec.pretrain.seed, spec.corpus_size);
    ParameterSet init = init_base(spec.model, spec.pretrain.seed);
    return register_base(pretrain_base(init, corpus, spec.pretrain));
}

std::uint64_t run_stream_key(const std::string& base_hash, double beta, std::int64_t seed, double lr,
                             std::string_view schedule_tag, PathLabel path) {
    DigestBuilder d;
    d.add(std::string_view("phaselab-run"));
    d.add(base_hash);
    d.add_f64(beta);
    d.add_u64(static_cast<std::uint64_t>(seed));
    d.add_f64(lr);
    d.add(schedule_tag);
    // Stage 1 is the same computation as a fresh quench.
    if (path == PathLabel::kHysteresisStage2) d.add(path_label_name(path));
    return digest_prefix_u64(d.finish());
}

std::string make_run_id(double beta, std::int64_t seed, double lr, PathLabel path) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "run_b%g_s%lld_lr%g_%s", beta, static_cast<long long>(seed), lr,
                  std::string(path_label_name(path)).c_str());
    return buf;
}

RunContext::RunContext(RegisteredBase base, TrainingSettings training)
    : base_(std::move(base)), training_(std::move(training)) {
    if (!base_.params) throw std::invalid_argument("missing base checkpoint");
    training_.validate();
    probes_ = resolve_probe_pack(training_.probe_pack);
    for (const auto& p : probes_) p.validate(base_.params->config.context_len);
    pool_ = generate_preference_data(training_.preference.seed, training_.preference.pool_size,
                                     training_.preference.conflict_fraction);
}

RunOutcome RunContext::execute(const RunRequest& request) const {
    const auto& pt = request.point;
    const RunConfig rc = training_.run_config(pt.beta, pt.seed, pt.lr);
    const std::string schedule_tag(schedule_name(training_.schedule));
    const std::string run_id = make_run_id(pt.beta, pt.seed, pt.lr, request.path);

    RunLogConfig lc;
    lc.beta = pt.beta;
    lc.seed = pt.seed;
    lc.lr = pt.lr;
    lc.steps = rc.steps;
    lc.batch_size = rc.batch_size;
    lc.adapter = rc.adapter;
    lc.optimizer = rc.optimizer;
    lc.schedule_tag = schedule_tag;
    lc.path_label = request.path;
    lc.optimizer_reset = request.path == PathLabel::kHysteresisStage2;
    lc.probe_pack = training_.probe_pack;
    lc.preference = training_.preference;

    TrainOptions opts;
    opts.stream_key = run_stream_key(base_.hash, pt.beta, pt.seed, pt.lr, schedule_tag, request.path);
    if (request.initial_adapters) opts.initial_adapters = *request.initial_adapters;

    const auto started = training_.record_timestamps ? std::optional<std::string>(utc_now()) : std::nullopt;
    RunOutcome out;
    try {
        if (base_.params->content_hash() != base_.hash) throw std::logic_error("base checkpoint changed after registration");
        TrainResult tr = train_run(base_.params, rc, pool_, opts);
        const Policy policy{base_.params.get(), &tr.adapters};
        const ProbeReport report = evaluate_all(policy, probes_, run_id);
        out.log = build_run_log(run_id, base_.hash, lc, tr.trace, &report, RunStatus::kOk);
        out.log.adapter_hash = to_hex(checkpoint_digest(*base_.params, &tr.adapters));
        out.adapters = std::move(tr.adapters);
    } catch (const TrainingAborted& e) {
        out.log = build_run_log(run_id, base_.hash, lc, e.partial_trace(), nullptr, RunStatus::kFailed);
        out.log.error = e.what();
    } catch (const NonFiniteError& e) {
        out.log = build_run_log(run_id, base_.hash, lc, TrainingTrace{}, nullptr, RunStatus::kFailed);
        out.log.error = e.what();
    }
    out.log.initial_adapter_hash = request.initial_adapter_hash;
    char key[24];
    std::snprintf(key, sizeof key, "%016llx", static_cast<unsigned long long>(opts.stream_key));
    out.log.stream_key = key;
    if (started) {
        out.log.started_at = started;
        out.log.finished_at = utc_now();
    }
    return out;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

const SweepEntry* SweepResult::find(const SweepPoint& p) const {
    const auto it = std::lower_bound(entries.begin(), entries.end(), p,
                                     [](const SweepEntry& e, const SweepPoint& q) { return e.point < q; });
    return it != entries.end() && it->point == p ? &*it : nullptr;
}

std::size_t SweepResult::failed_count() const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [](const SweepEntry& e) { return !e.log.ok(); }));
}

std::vector<std::int64_t> SweepResult::seeds() const {
    std::set<std::int64_t> s;
    for (const auto& e : entries) s.insert(e.point.seed);
    return {s.begin(), s.end()};
}

std::vector<double> SweepResult::lrs() const {
    std::set<double> s;
    for (const auto& e : entries) s.insert(e.point.lr);
    return {s.begin(), s.end()};
}

std::vector<double> SweepResult::betas() const {
    std::set<double> s;
    for (const auto& e : entries) s.insert(e.point.beta);
    return {s.begin(), s.end()};
}

SweepResult run_sweep(const SweepPlan& plan, const RegisteredBase& base, const ExecutionOptions& options) {
    if (!base.params) throw std::invalid_argument("run_sweep: missing base checkpoint");
    plan.validate();
    const RunContext ctx(base, plan.training);
    const auto points = plan.points();
    if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

    // One slot per point; workers never touch each other's slot.
    std::vector<SweepEntry> slots(points.size());
    parallel_for(points.size(), options.workers, [&](std::size_t i) {
        RunOutcome out = ctx.execute(RunRequest(points[i]));
        if (options.out_dir) write_run_log(out.log, *options.out_dir);
        slots[i] = {points[i], std::move(out.log)};
    });

    SweepResult result;
    result.sweep_id = plan.sweep_id;
    result.base_hash = base.hash;
    result.entries = std::move(slots);
    std::sort(result.entries.begin(), result.entries.end(),
              [](const SweepEntry& a, const SweepEntry& b) { return a.point < b.point; });
    return result;
}

json sweep_manifest(const SweepPlan& plan, const SweepResult& result) {
    json runs = json::array();
    json failed = json::array();
    for (const auto& e : result.entries) {
        runs.push_back(e.log.run_id);
        if (!e.log.ok()) failed.push_back(e.log.run_id);
    }
    json betas = json::array();
    for (double b : plan.beta_grid) betas.push_back(quantize9(b));
    json lrs = json::array();
    for (double lr : plan.effective_lr_grid()) lrs.push_back(quantize9(lr));
    const auto& t = plan.training;
    json targets = json::array();
    for (auto tg : t.adapter.targets) targets.push_back(std::string(target_name(tg)));
    return json{{"sweep_id", plan.sweep_id},
                {"base_hash", result.base_hash},
                {"beta_grid", betas},
                {"seeds", plan.seeds},
                {"lr_grid", lrs},
                {"schedule", std::string(schedule_name(t.schedule))},
                {"steps", t.run_config(plan.beta_grid.front(), plan.seeds.front(), lrs.front().get<double>()).steps},
                {"batch_size", t.batch_size},
                {"adapter",
                 {{"rank", t.adapter.rank}, {"alpha", t.adapter.alpha}, {"dropout", t.adapter.dropout}, {"targets", targets}}},
                {"optimizer", std::string(optimizer_name(t.optimizer.kind))},
                {"probe_pack", t.probe_pack},
                {"preference",
                 {{"pool_size", t.preference.pool_size},
                  {"seed", t.preference.seed},
                  {"conflict_fraction", t.preference.conflict_fraction}}},
                {"runs", runs},
                {"failed_runs", failed}};
}

SweepResult load_sweep_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::invalid_argument("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.starts_with("run_") && name.ends_with(".json")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    SweepResult result;
    result.sweep_id = dir.filename().string();
    for (const auto& f : files) {
        RunLog log = read_run_log(f);
        if (log.config.path_label != PathLabel::kFresh) continue;
        SweepPoint p{log.config.beta, log.config.seed, log.config.lr};
        result.entries.push_back({p, std::move(log)});
    }
    if (result.entries.empty()) throw std::invalid_argument("no run logs in " + dir.string());
    std::sort(result.entries.begin(), result.entries.end(),
              [](const SweepEntry& a, const SweepEntry& b) { return a.point < b.point; });
    for (std::size_t i = 1; i < result.entries.size(); ++i) {
        if (result.entries[i].point == result.entries[i - 1].point) {
            throw std::invalid_argument("duplicate run coordinates: " + result.entries[i].log.run_id);
        }
    }
    result.base_hash = result.entries.front().log.base_hash;
    return result;
}

Correlation cross_probe_correlation(const SweepResult& sweep, const std::string& probe_a, const std::string& probe_b,
                                    std::optional<std::int64_t> seed, std::optional<double> lr) {
    if (sweep.entries.empty()) throw StatsError("cross_probe_correlation: empty sweep");
    const std::int64_t s = seed ? *seed : sweep.seeds().front();
    const double l = lr ? *lr : sweep.lrs().front();
    std::vector<double> xa, xb;
    for (const auto& e : sweep.entries) {
        if (e.point.seed != s || e.point.lr != l || !e.log.ok()) continue;
        const auto report = e.log.probe_report();
        const ProbeResult* a = report.find(probe_a);
        const ProbeResult* b = report.find(probe_b);
        if (!a || !b) continue;
        xa.push_back(a->margin);
        xb.push_back(b->margin);
    }
    if (xa.size() < 3) throw StatsError("cross_probe_correlation: probes present at fewer than 3 grid points");
    return pearson(xa, xb);
}

void HysteresisPlan::validate() const {
    if (hysteresis_id.empty() || hysteresis_id.find('/') != std::string::npos) {
        throw std::invalid_argument("hysteresis_id must be a plain name");
    }
    if (!(beta_final > 0.0) || !(beta_high > beta_final)) throw std::invalid_argument("beta_high must exceed beta_final > 0");
    if (stage_steps < 1) throw std::invalid_argument("stage_steps must be >= 1");
    if (seeds.empty()) throw std::invalid_argument("seeds must be non-empty");
    if (std::set<std::int64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw std::invalid_argument("seeds must not repeat");
    }
    if (lr && !(*lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    training.validate();
}

double HysteresisPlan::effective_lr() const { return lr ? *lr : training.default_lr(); }

bool HysteresisSeedResult::complete() const { return path_a.ok() && stage1.ok() && stage2 && stage2->ok(); }

std::size_t HysteresisResult::complete_pairs() const {
    return static_cast<std::size_t>(std::count_if(seeds.begin(), seeds.end(), [](const auto& s) { return s.complete(); }));
}

bool HysteresisResult::any_failed() const { return complete_pairs() != seeds.size(); }

std::vector<CategoryComparison> compare_paths(const std::vector<HysteresisSeedResult>& seeds) {
    std::set<Category> cats;
    for (const auto& s : seeds) {
        if (!s.complete()) continue;
        for (const auto& [c, v] : s.path_a.category_aggregates) {
            if (s.stage2->category_aggregates.count(c)) cats.insert(c);
        }
    }
    std::vector<CategoryComparison> out;
    auto compare = [&](std::string name, auto value_of) {
        std::vector<double> a, b;
        for (const auto& s : seeds) {
            if (!s.complete()) continue;
            const auto va = value_of(s.path_a);
            const auto vb = value_of(*s.stage2);
            if (!va || !vb) continue;
            a.push_back(*va);
            b.push_back(*vb);
        }
        CategoryComparison c;
        c.capability = std::move(name);
        c.path_a_mean = a.empty() ? std::nan("") : mean(a);
        c.path_b_mean = b.empty() ? std::nan("") : mean(b);
        c.stats = paired_tests(a, b);
        out.push_back(std::move(c));
    };
    for (Category cat : cats) {
        compare(std::string(category_name(cat)), [cat](const RunLog& l) -> std::optional<double> {
            const auto it = l.category_aggregates.find(cat);
            if (it == l.category_aggregates.end()) return std::nullopt;
            return it->second;
        });
    }
    compare("final_margin", [](const RunLog& l) { return l.final_margin; });
    return out;
}

HysteresisResult run_hysteresis(const HysteresisPlan& plan, const RegisteredBase& base, const ExecutionOptions& options) {
    if (!base.params) throw std::invalid_argument("run_hysteresis: missing base checkpoint");
    plan.validate();
    TrainingSettings training = plan.training;
    training.steps = plan.stage_steps;
    const RunContext ctx(base, training);
    const double lr = plan.effective_lr();
    if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

    // Task 2k is seed k's Path A, task 2k+1 its Path B chain.
    std::vector<HysteresisSeedResult> slots(plan.seeds.size());
    parallel_for(2 * plan.seeds.size(), options.workers, [&](std::size_t task) {
        auto& slot = slots[task / 2];
        const std::int64_t seed = plan.seeds[task / 2];
        slot.seed = seed;
        if (task % 2 == 0) {
            RunOutcome a = ctx.execute(RunRequest({plan.beta_final, seed, lr}));
            if (options.out_dir) write_run_log(a.log, *options.out_dir);
            slot.path_a = std::move(a.log);
            return;
        }
        RunOutcome s1 = ctx.execute(RunRequest({plan.beta_high, seed, lr}, PathLabel::kHysteresisStage1));
        if (options.out_dir) {
            write_run_log(s1.log, *options.out_dir);
            if (s1.adapters) {
                write_checkpoint_file(*options.out_dir / (s1.log.run_id + ".ckpt"), *base.params, &*s1.adapters);
            }
        }
        if (s1.adapters) {
            RunOutcome s2 = ctx.execute(
                RunRequest({plan.beta_final, seed, lr}, PathLabel::kHysteresisStage2, &*s1.adapters, s1.log.adapter_hash));
            if (options.out_dir) write_run_log(s2.log, *options.out_dir);
            slot.stage2 = std::move(s2.log);
        }
        slot.stage1 = std::move(s1.log);
        slot.stage1_adapters = std::move(s1.adapters);
    });

    HysteresisResult result;
    result.hysteresis_id = plan.hysteresis_id;
    result.base_hash = base.hash;
    result.path_a_steps = plan.stage_steps;
    result.path_b_steps = 2 * plan.stage_steps;
    result.seeds = std::move(slots);
    result.comparisons = compare_paths(result.seeds);
    return result;
}

namespace {

json stat_num(double x) { return std::isfinite(x) ? json(quantize9(x)) : json(nullptr); }

std::string flags_of(const PairedStats& s) {
    std::string f;
    if (s.insufficient_n) f = "insufficient_n";
    if (s.degenerate) f += f.empty() ? "degenerate" : ";degenerate";
    return f;
}

}  // namespace

json hysteresis_summary_json(const HysteresisResult& result) {
    json rows = json::array();
    for (const auto& c : result.comparisons) {
        rows.push_back(json{{"capability", c.capability},
                            {"path_a", stat_num(c.path_a_mean)},
                            {"path_b", stat_num(c.path_b_mean)},
                            {"n", c.stats.n},
                            {"mean_diff", stat_num(c.stats.mean_diff)},
                            {"t", stat_num(c.stats.t)},
                            {"p", stat_num(c.stats.p_t)},
                            {"d_z", stat_num(c.stats.d_z)},
                            {"p_wilcoxon", stat_num(c.stats.p_wilcoxon)},
                            {"degenerate", c.stats.degenerate},
                            {"insufficient_n", c.stats.insufficient_n}});
    }
    json seeds = json::array();
    for (const auto& s : result.seeds) {
        seeds.push_back(json{{"seed", s.seed},
                             {"path_a", s.path_a.run_id},
                             {"path_b_stage1", s.stage1.run_id},
                             {"path_b_stage2", s.stage2 ? json(s.stage2->run_id) : json(nullptr)},
                             {"complete", s.complete()}});
    }
    return json{{"hysteresis_id", result.hysteresis_id},
                {"base_hash", result.base_hash},
                {"difference", "path_a - path_b"},
                {"path_a_steps", result.path_a_steps},
                {"path_b_steps", result.path_b_steps},
                {"optimizer_reset_between_stages", true},
                {"complete_pairs", result.complete_pairs()},
                {"seeds", seeds},
                {"comparisons", rows}};
}

std::string hysteresis_summary_csv(const HysteresisResult& result) {
    std::string out = "capability,PathA,PathB,p,d_z,t,p_wilcoxon,n,flags\n";
    for (const auto& c : result.comparisons) {
        out += c.capability + "," + format9(c.path_a_mean) + "," + format9(c.path_b_mean) + "," + format9(c.stats.p_t) +
               "," + format9(c.stats.d_z) + "," + format9(c.stats.t) + "," + format9(c.stats.p_wilcoxon) + "," +
               std::to_string(c.stats.n) + "," + flags_of(c.stats) + "\n";
    }
    return out;
}

}  // namespace phaselab
