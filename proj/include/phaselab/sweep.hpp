#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "phaselab/dpo.hpp"
#include "phaselab/probes.hpp"
#include "phaselab/run_log.hpp"
#include "phaselab/stats.hpp"

namespace phaselab {

// {0.0005, ..., 0.1}: 13 points, denser between 0.006 and 0.015.
std::vector<double> default_beta_grid();
std::vector<std::int64_t> default_seeds(bool multi_seed);

// Everything a run needs besides its (beta, seed, lr) coordinates.
struct TrainingSettings {
    Schedule schedule = Schedule::kCanonical;
    std::optional<int> steps;  // overrides the schedule
    int batch_size = 4;
    AdapterConfig adapter;
    OptimizerConfig optimizer;
    std::string probe_pack{kBuiltinPack};
    PreferenceSettings preference;
    bool record_timestamps = false;

    double default_lr() const;
    RunConfig run_config(double beta, std::int64_t seed, double lr) const;
    void validate() const;
};

struct SweepPoint {
    double beta = 0.0;
    std::int64_t seed = 0;
    double lr = 0.0;
    auto operator<=>(const SweepPoint&) const = default;
};

struct SweepPlan {
    std::string sweep_id = "sweep";
    std::vector<double> beta_grid = default_beta_grid();
    std::vector<std::int64_t> seeds{1};
    std::vector<double> lr_grid;  // empty: the schedule's rate
    TrainingSettings training;

    void validate() const;
    std::vector<double> effective_lr_grid() const;
    // lr-major, then beta, then seed.
    std::vector<SweepPoint> points() const;
};

// Cross product of learning rates and betas at seed 1.
SweepPlan stress_grid(std::vector<double> lr_values = {1e-5, 5e-5, 2e-4},
                      std::vector<double> beta_values = {0.006, 0.01, 0.02});

// A base checkpoint plus its content hash; every run is checked against it.
struct RegisteredBase {
    std::shared_ptr<const ParameterSet> params;
    std::string hash;
};

RegisteredBase register_base(ParameterSet params);

struct BaseSpec {
    std::optional<std::filesystem::path> checkpoint;
    ModelConfig model;
    PretrainOptions pretrain;
    std::size_t corpus_size = 2000;
};

// Loads the checkpoint if given, otherwise initializes and pretrains.
RegisteredBase prepare_base(const BaseSpec& spec);

// PRNG stream of one run. Stage-1 hysteresis runs share the fresh-run key so
// their prefix matches a standalone quench exactly.
std::uint64_t run_stream_key(const std::string& base_hash, double beta, std::int64_t seed, double lr,
                             std::string_view schedule_tag, PathLabel path);
std::string make_run_id(double beta, std::int64_t seed, double lr, PathLabel path);

struct RunRequest {
    SweepPoint point;
    PathLabel path = PathLabel::kFresh;
    const AdapterSet* initial_adapters = nullptr;
    std::optional<std::string> initial_adapter_hash;

    RunRequest(SweepPoint p, PathLabel label = PathLabel::kFresh, const AdapterSet* initial = nullptr,
               std::optional<std::string> initial_hash = std::nullopt)
        : point(p), path(label), initial_adapters(initial), initial_adapter_hash(std::move(initial_hash)) {}
};

struct RunOutcome {
    RunLog log;
    std::optional<AdapterSet> adapters;
};

// Immutable state shared by all runs of a plan: base, probe pack and preference pool.
class RunContext {
public:
    // Throws UnknownProbePack or std::invalid_argument for bad settings.
    RunContext(RegisteredBase base, TrainingSettings training);

    const RegisteredBase& base() const { return base_; }
    const TrainingSettings& training() const { return training_; }
    const std::vector<ProbeCase>& probes() const { return probes_; }
    const std::vector<PreferencePair>& pool() const { return pool_; }

    // Never throws for training failures; they become failed logs.
    RunOutcome execute(const RunRequest& request) const;

private:
    RegisteredBase base_;
    TrainingSettings training_;
    std::vector<ProbeCase> probes_;
    std::vector<PreferencePair> pool_;
};

// Runs fn(0..n-1) on up to `workers` threads; the first exception is rethrown after joining.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

struct SweepEntry {
    SweepPoint point;
    RunLog log;
};

struct SweepResult {
    std::string sweep_id;
    std::string base_hash;
    std::vector<SweepEntry> entries;  // sorted by point

    const SweepEntry* find(const SweepPoint& p) const;
    std::size_t failed_count() const;
    std::vector<std::int64_t> seeds() const;
    std::vector<double> lrs() const;
    std::vector<double> betas() const;
};

struct ExecutionOptions {
    std::size_t workers = 1;
    // When set, each run writes <out_dir>/<run_id>.json as soon as it finishes.
    std::optional<std::filesystem::path> out_dir;
};

// Throws std::invalid_argument for a missing base or an invalid plan.
SweepResult run_sweep(const SweepPlan& plan, const RegisteredBase& base, const ExecutionOptions& options = {});

nlohmann::json sweep_manifest(const SweepPlan& plan, const SweepResult& result);

// Reloads every fresh-path run log in a directory. Throws on an empty
// directory, an invalid log or duplicated coordinates.
SweepResult load_sweep_directory(const std::filesystem::path& dir);

// Pearson over per-beta margins of two probes within one (seed, lr) slice;
// defaults to the smallest seed and lr present.
Correlation cross_probe_correlation(const SweepResult& sweep, const std::string& probe_a, const std::string& probe_b,
                                    std::optional<std::int64_t> seed = std::nullopt,
                                    std::optional<double> lr = std::nullopt);

struct HysteresisPlan {
    std::string hysteresis_id = "hysteresis";
    double beta_high = 0.02;
    double beta_final = 0.01;
    int stage_steps = 200;
    std::vector<std::int64_t> seeds = default_seeds(true);
    std::optional<double> lr;
    TrainingSettings training;

    void validate() const;
    double effective_lr() const;
};

struct HysteresisSeedResult {
    std::int64_t seed = 0;
    RunLog path_a;
    RunLog stage1;
    std::optional<RunLog> stage2;  // absent when stage 1 failed
    std::optional<AdapterSet> stage1_adapters;

    bool complete() const;
};

struct CategoryComparison {
    std::string capability;
    double path_a_mean = 0.0;
    double path_b_mean = 0.0;
    PairedStats stats;  // on Path A − Path B
};

struct HysteresisResult {
    std::string hysteresis_id;
    std::string base_hash;
    int path_a_steps = 0;
    int path_b_steps = 0;
    std::vector<HysteresisSeedResult> seeds;
    std::vector<CategoryComparison> comparisons;

    std::size_t complete_pairs() const;
    bool any_failed() const;
};

// Path A: fresh at beta_final. Path B: fresh at beta_high, then continue at
// beta_final from the stage-1 adapters with a new optimizer.
HysteresisResult run_hysteresis(const HysteresisPlan& plan, const RegisteredBase& base,
                                const ExecutionOptions& options = {});

std::vector<CategoryComparison> compare_paths(const std::vector<HysteresisSeedResult>& seeds);

nlohmann::json hysteresis_summary_json(const HysteresisResult& result);
// Columns: capability, PathA, PathB, p, d_z, then t, p_wilcoxon, n, flags.
std::string hysteresis_summary_csv(const HysteresisResult& result);

}  // namespace phaselab
