#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "phaselab/micro_language.hpp"
#include "phaselab/model.hpp"

namespace phaselab {

enum class Category { kLogic, kArith, kFormat, kSyco, kNeg, kAssoc };

inline constexpr std::array kCoreCategories = {Category::kLogic, Category::kArith, Category::kFormat, Category::kSyco,
                                               Category::kNeg};

std::string_view category_name(Category c);
Category category_from_name(std::string_view name);

struct ProbeCase {
    std::string id;
    Category category = Category::kLogic;
    TokenSeq prompt;
    TokenSeq correct;
    TokenSeq incorrect;

    // Throws std::invalid_argument when the case breaks its invariants.
    void validate(int context_len) const;
};

struct ProbeResult {
    std::string id;
    Category category;
    double margin;
};

struct ProbeReport {
    std::string run_id;
    std::vector<ProbeResult> probes;
    std::map<Category, double> aggregates;

    double aggregate(Category c) const;
    const ProbeResult* find(std::string_view probe_id) const;
    bool operator==(const ProbeReport&) const;
};

class UnknownProbePack : public std::invalid_argument {
public:
    explicit UnknownProbePack(const std::string& id)
        : std::invalid_argument("unknown probe pack '" + id + "'"), id_(id) {}
    const std::string& id() const { return id_; }

private:
    std::string id_;
};

// 14 probes: logic 3, arith 3, format 4, syco 2, neg 2.
std::vector<ProbeCase> builtin_probes();
// Optional 2-probe associative family.
std::vector<ProbeCase> associative_probes();

inline constexpr std::string_view kBuiltinPack = "builtin";
inline constexpr std::string_view kAssociativePack = "associative";
inline constexpr std::string_view kBuiltinWithAssociativePack = "builtin+associative";

// Resolves a pack id; anything that is not a built-in id is treated as a path
// to a probe-pack JSON file. Throws UnknownProbePack otherwise.
std::vector<ProbeCase> resolve_probe_pack(const std::string& id_or_path);

nlohmann::json probe_pack_to_json(std::string_view pack_id, std::span<const ProbeCase> probes);
std::vector<ProbeCase> probe_pack_from_json(const nlohmann::json& j);

// Length-normalized log-probability of correct minus incorrect completion.
double probe_margin(const Policy& policy, const ProbeCase& probe);

// Per-probe margins plus unweighted per-category means.
ProbeReport evaluate_all(const Policy& policy, std::span<const ProbeCase> probes, std::string run_id = {});

// Builds the aggregate map from per-probe results.
ProbeReport make_report(std::string run_id, std::vector<ProbeResult> results);

}  // namespace phaselab
