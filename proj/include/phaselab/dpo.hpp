#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "phaselab/model.hpp"
#include "phaselab/optimizer.hpp"
#include "phaselab/preference_data.hpp"

namespace phaselab {

struct DpoTerms {
    double loss = 0.0;
    double margin_raw = 0.0;     // Δ = (θ_w − ref_w) − (θ_l − ref_l)
    double margin_scaled = 0.0;  // β·Δ
    double dloss_dmargin = 0.0;  // ∂loss/∂Δ = −β·σ(−β·Δ)
};

// Numerically stable −log σ(x).
double neg_log_sigmoid(double x);

DpoTerms dpo_loss(double logp_theta_w, double logp_ref_w, double logp_theta_l, double logp_ref_l, double beta);

enum class Schedule { kCanonical, kFast };

std::string_view schedule_name(Schedule s);
Schedule schedule_from_name(std::string_view name);

struct RunConfig {
    double beta = 0.01;
    std::int64_t seed = 1;
    double lr = 5e-5;
    int steps = 200;
    int batch_size = 4;
    AdapterConfig adapter;
    Schedule schedule = Schedule::kCanonical;
    OptimizerConfig optimizer;

    // Canonical: 200 steps at lr 5e-5. Fast: 100 steps at lr 2e-4.
    static RunConfig for_schedule(Schedule schedule, double beta, std::int64_t seed);
    void validate() const;
};

struct TrainingStep {
    int step = 0;
    double loss = 0.0;
    double margin_raw = 0.0;
    double margin_scaled = 0.0;
};

struct TrainingTrace {
    std::vector<TrainingStep> steps;

    std::vector<double> scaled_margins() const;
    std::vector<double> raw_margins() const;
    std::size_t size() const { return steps.size(); }
};

struct TrainResult {
    AdapterSet adapters;
    TrainingTrace trace;
};

// Thrown when a run hits a non-finite loss, gradient or weight; carries the
// trace recorded up to the failure.
class TrainingAborted : public NonFiniteError {
public:
    TrainingAborted(const std::string& what, TrainingTrace partial)
        : NonFiniteError(what), trace_(std::move(partial)) {}
    const TrainingTrace& partial_trace() const { return trace_; }

private:
    TrainingTrace trace_;
};

struct TrainOptions {
    // Key of the run PRNG stream (adapter init, batch draws, dropout masks).
    std::uint64_t stream_key = 0;
    // Continue from these adapters instead of a fresh zero-B init.
    std::optional<AdapterSet> initial_adapters;
};

// Exactly `config.steps` optimizer steps on adapters only; the base is never modified.
TrainResult train_run(std::shared_ptr<const ParameterSet> base, const RunConfig& config,
                      std::span<const PreferencePair> pool, const TrainOptions& options);

// Mean margin_scaled over the final max(1, floor(0.1 * T)) steps.
double final_margin(const TrainingTrace& trace);
double final_margin(std::span<const double> scaled_margins);

}  // namespace phaselab
