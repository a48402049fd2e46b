#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "phaselab/sweep.hpp"

namespace phaselab {

// Phase table in Table-1 shape: one row per run, ascending beta, explicit
// signs, "*" on rows with a positive logic aggregate, "—" for failed runs.
std::string phase_table_csv(const SweepResult& sweep);
std::string phase_table_text(const SweepResult& sweep);

// One (lr, seed) cut through a sweep; pockets and collapses are per slice.
struct Slice {
    double lr = 0.0;
    std::int64_t seed = 0;
};

std::vector<Slice> slices_of(const SweepResult& sweep);

// Everything cmd_analyze writes, keyed by file name. Pure function of the logs.
struct ReportBundle {
    std::map<std::string, std::string> files;
    std::vector<std::string> warnings;
    std::vector<std::string> notes;
    nlohmann::json annotations = nlohmann::json::object();
};

ReportBundle build_report(const SweepResult& sweep);

// Writes every bundle file into out_dir; returns the paths written.
std::vector<std::filesystem::path> write_report(const ReportBundle& bundle, const std::filesystem::path& out_dir);

}  // namespace phaselab
