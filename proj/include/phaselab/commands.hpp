#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "phaselab/sweep.hpp"

namespace phaselab {

enum ExitCode : int { kExitOk = 0, kExitPartialFailure = 1, kExitConfigError = 2 };

// Bad configuration; `field` names the offending key (dotted for nested keys).
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string field, const std::string& what)
        : std::invalid_argument("config field '" + field + "': " + what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

// Command-line overrides applied on top of the JSON config.
struct CommandOptions {
    std::optional<std::filesystem::path> config;
    std::optional<std::filesystem::path> out;
    std::optional<std::size_t> workers;
    std::optional<std::vector<std::int64_t>> seeds;
    std::optional<std::string> probe_pack;
    std::optional<std::string> schedule;
};

struct SweepJob {
    SweepPlan plan;
    BaseSpec base;
    std::filesystem::path output_dir = "runs";
    std::size_t workers = 1;
};

struct HysteresisJob {
    HysteresisPlan plan;
    BaseSpec base;
    std::filesystem::path output_dir = "runs";
    std::size_t workers = 1;
};

// Parsers reject unknown keys and wrong types with ConfigError.
SweepJob parse_sweep_config(const nlohmann::json& j);
SweepJob parse_stress_config(const nlohmann::json& j);
HysteresisJob parse_hysteresis_config(const nlohmann::json& j);

int cmd_sweep(const CommandOptions& options, std::ostream& out, std::ostream& err);
int cmd_stress(const CommandOptions& options, std::ostream& out, std::ostream& err);
int cmd_hysteresis(const CommandOptions& options, std::ostream& out, std::ostream& err);
// Writes the bundle to options.out, default <log_dir>/analysis.
int cmd_analyze(const std::filesystem::path& log_dir, const CommandOptions& options, std::ostream& out, std::ostream& err);
// action: "list" prints the pack, "dump" writes it as JSON (to options.out or stdout).
int cmd_probes(const std::string& action, const CommandOptions& options, std::ostream& out, std::ostream& err);

std::vector<std::int64_t> parse_seed_list(const std::string& text);

}  // namespace phaselab
