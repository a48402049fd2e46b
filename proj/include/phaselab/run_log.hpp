#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "phaselab/dpo.hpp"
#include "phaselab/probes.hpp"

namespace phaselab {

enum class PathLabel { kFresh, kHysteresisStage1, kHysteresisStage2 };

std::string_view path_label_name(PathLabel p);
PathLabel path_label_from_name(std::string_view name);

enum class RunStatus { kOk, kFailed };

std::string_view status_name(RunStatus s);

struct PreferenceSettings {
    std::size_t pool_size = 256;
    std::uint64_t seed = 1;
    double conflict_fraction = 0.2;
    bool operator==(const PreferenceSettings&) const = default;
};

struct RunLogConfig {
    double beta = 0.0;
    std::int64_t seed = 0;
    double lr = 0.0;
    int steps = 0;
    int batch_size = 0;
    AdapterConfig adapter;
    OptimizerConfig optimizer;
    std::string schedule_tag;
    PathLabel path_label = PathLabel::kFresh;
    // Stage-2 runs start a new optimizer instead of carrying stage-1 moments.
    bool optimizer_reset = false;
    std::string probe_pack;
    PreferenceSettings preference;
    bool operator==(const RunLogConfig&) const = default;
};

// One run's archive record. Floats are held at 9 significant digits so the
// in-memory value is exactly what the JSON file stores.
struct RunLog {
    std::string run_id;
    std::string base_hash;
    std::optional<std::string> initial_adapter_hash;  // adapters a stage-2 run continued from
    std::optional<std::string> adapter_hash;          // trained adapters, absent for failed runs
    std::string stream_key;
    RunLogConfig config;
    std::vector<double> margin_raw;
    std::vector<double> margin_scaled;
    std::optional<double> final_margin;
    std::optional<double> roughness;
    std::map<Category, std::map<std::string, double>> probe_results;
    std::map<Category, double> category_aggregates;
    RunStatus status = RunStatus::kOk;
    std::optional<std::string> error;
    std::optional<std::string> started_at;
    std::optional<std::string> finished_at;

    bool ok() const { return status == RunStatus::kOk; }
    ProbeReport probe_report() const;
    bool operator==(const RunLog&) const = default;
};

class RunLogError : public std::runtime_error {
public:
    RunLogError(const std::string& what, std::vector<std::string> fields)
        : std::runtime_error(what), fields_(std::move(fields)) {}
    const std::vector<std::string>& fields() const { return fields_; }

private:
    std::vector<std::string> fields_;
};

// Rounds to 9 significant digits (the on-disk precision).
double quantize9(double x);

// "%.9g" text of x; empty for non-finite values.
std::string format9(double x);

// Assembles a log: quantizes traces and probe margins, then derives final_margin,
// roughness and category aggregates from the quantized values.
RunLog build_run_log(std::string run_id, std::string base_hash, RunLogConfig config, const TrainingTrace& trace,
                     const ProbeReport* report, RunStatus status);

// Names of fields that break the schema or disagree with recomputation; empty when valid.
std::vector<std::string> validate_run_log(const RunLog& log);

nlohmann::json run_log_to_json(const RunLog& log);
// Throws RunLogError listing offending fields.
RunLog run_log_from_json(const nlohmann::json& j);

// Canonical text: sorted keys, 2-space indent, trailing newline.
std::string serialize_run_log(const RunLog& log);

// Writes <dir>/<run_id>.json after validation and returns the path.
std::filesystem::path write_run_log(const RunLog& log, const std::filesystem::path& dir);
RunLog read_run_log(const std::filesystem::path& path);

// Shared by the other canonical JSON artifacts.
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace phaselab
