#include "phaselab/run_log.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "phaselab/metrics.hpp"

namespace phaselab {
namespace {

using json = nlohmann::json;

const json kEmptyObject = json::object();

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json opt_num(const std::optional<double>& x) { return x ? num(*x) : json(nullptr); }

json opt_str(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

bool close(double stored, double recomputed) {
    return std::abs(stored - recomputed) <= std::max(1e-9, 1e-8 * std::abs(recomputed));
}

bool is_hex64(const std::string& s) {
    if (s.size() != 64) return false;
    for (char c : s) {
        if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
    }
    return true;
}

std::map<Category, double> aggregates_of(const std::map<Category, std::map<std::string, double>>& results) {
    std::map<Category, double> out;
    for (const auto& [cat, probes] : results) {
        if (probes.empty()) continue;
        double sum = 0.0;
        for (const auto& [id, m] : probes) sum += m;
        out[cat] = sum / static_cast<double>(probes.size());
    }
    return out;
}

// Collects schema errors by dotted field name instead of stopping at the first.
class Reader {
public:
    std::vector<std::string> errors;

    const json* field(const json& obj, const std::string& key, const std::string& path) {
        if (!obj.is_object() || !obj.contains(key)) {
            errors.push_back(path);
            return nullptr;
        }
        return &obj.at(key);
    }

    template <typename T>
    T get(const json& obj, const std::string& key, const std::string& path, T fallback = T{}) {
        const json* v = field(obj, key, path);
        if (!v) return fallback;
        try {
            return v->get<T>();
        } catch (const json::exception&) {
            errors.push_back(path);
            return fallback;
        }
    }

    std::optional<double> opt_double(const json& obj, const std::string& key, const std::string& path) {
        const json* v = field(obj, key, path);
        if (!v || v->is_null()) return std::nullopt;
        if (!v->is_number()) {
            errors.push_back(path);
            return std::nullopt;
        }
        return v->get<double>();
    }

    std::optional<std::string> opt_string(const json& obj, const std::string& key, const std::string& path) {
        const json* v = field(obj, key, path);
        if (!v || v->is_null()) return std::nullopt;
        if (!v->is_string()) {
            errors.push_back(path);
            return std::nullopt;
        }
        return v->get<std::string>();
    }

    std::vector<double> doubles(const json& obj, const std::string& key, const std::string& path) {
        std::vector<double> out;
        const json* v = field(obj, key, path);
        if (!v) return out;
        if (!v->is_array()) {
            errors.push_back(path);
            return out;
        }
        for (const auto& e : *v) {
            if (e.is_number()) {
                out.push_back(e.get<double>());
            } else if (e.is_null()) {
                out.push_back(std::nan(""));
            } else {
                errors.push_back(path);
                return {};
            }
        }
        return out;
    }
};

}  // namespace

std::string_view path_label_name(PathLabel p) {
    switch (p) {
        case PathLabel::kFresh: return "fresh";
        case PathLabel::kHysteresisStage1: return "hysteresis_stage1";
        case PathLabel::kHysteresisStage2: return "hysteresis_stage2";
    }
    return "fresh";
}

PathLabel path_label_from_name(std::string_view name) {
    for (auto p : {PathLabel::kFresh, PathLabel::kHysteresisStage1, PathLabel::kHysteresisStage2}) {
        if (path_label_name(p) == name) return p;
    }
    throw std::invalid_argument("unknown path label '" + std::string(name) + "'");
}

std::string_view status_name(RunStatus s) { return s == RunStatus::kOk ? "ok" : "failed"; }

double quantize9(double x) {
    if (!std::isfinite(x)) return x;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return std::strtod(buf, nullptr);
}

std::string format9(double x) {
    if (!std::isfinite(x)) return {};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

ProbeReport RunLog::probe_report() const {
    std::vector<ProbeResult> results;
    for (const auto& [cat, probes] : probe_results) {
        for (const auto& [id, m] : probes) results.push_back({id, cat, m});
    }
    return make_report(run_id, std::move(results));
}

RunLog build_run_log(std::string run_id, std::string base_hash, RunLogConfig config, const TrainingTrace& trace,
                     const ProbeReport* report, RunStatus status) {
    RunLog log;
    log.run_id = std::move(run_id);
    log.base_hash = std::move(base_hash);
    log.config = std::move(config);
    log.config.beta = quantize9(log.config.beta);
    log.config.lr = quantize9(log.config.lr);
    log.status = status;
    for (const auto& s : trace.steps) {
        log.margin_raw.push_back(quantize9(s.margin_raw));
        log.margin_scaled.push_back(quantize9(s.margin_scaled));
    }
    if (report) {
        for (const auto& p : report->probes) log.probe_results[p.category][p.id] = quantize9(p.margin);
        for (const auto& [cat, v] : aggregates_of(log.probe_results)) log.category_aggregates[cat] = quantize9(v);
    }
    if (status == RunStatus::kOk && !log.margin_scaled.empty()) {
        log.final_margin = quantize9(final_margin(std::span<const double>(log.margin_scaled)));
        if (log.margin_scaled.size() >= 2) log.roughness = quantize9(roughness(log.margin_scaled));
    }
    return log;
}

std::vector<std::string> validate_run_log(const RunLog& log) {
    std::vector<std::string> bad;
    if (log.run_id.empty()) bad.push_back("run_id");
    if (!is_hex64(log.base_hash)) bad.push_back("base_hash");
    if (log.adapter_hash && !is_hex64(*log.adapter_hash)) bad.push_back("adapter_hash");
    if (log.initial_adapter_hash && !is_hex64(*log.initial_adapter_hash)) bad.push_back("initial_adapter_hash");
    const auto& c = log.config;
    if (!(c.beta > 0.0) || !std::isfinite(c.beta)) bad.push_back("config.beta");
    if (!(c.lr > 0.0) || !std::isfinite(c.lr)) bad.push_back("config.lr");
    if (c.steps < 1) bad.push_back("config.steps");
    if (c.batch_size < 1) bad.push_back("config.batch_size");

    const auto& raw = log.margin_raw;
    const auto& scaled = log.margin_scaled;
    if (raw.size() != scaled.size()) {
        bad.push_back("margin_trace");
    } else {
        for (std::size_t i = 0; i < raw.size(); ++i) {
            if (!std::isfinite(raw[i]) || !close(scaled[i], c.beta * raw[i])) {
                bad.push_back("margin_trace.scaled");
                break;
            }
        }
    }
    if (log.ok() && scaled.size() != static_cast<std::size_t>(c.steps)) bad.push_back("margin_trace");

    const bool derivable = log.ok() && !scaled.empty();
    if (log.final_margin) {
        if (scaled.empty() || !close(*log.final_margin, final_margin(std::span<const double>(scaled)))) {
            bad.push_back("final_margin");
        }
    } else if (derivable) {
        bad.push_back("final_margin");
    }
    if (log.roughness) {
        if (scaled.size() < 2 || !close(*log.roughness, roughness(scaled))) bad.push_back("roughness");
    } else if (derivable && scaled.size() >= 2) {
        bad.push_back("roughness");
    }

    const auto expected = aggregates_of(log.probe_results);
    bool agg_ok = expected.size() == log.category_aggregates.size();
    for (const auto& [cat, v] : expected) {
        const auto it = log.category_aggregates.find(cat);
        if (it == log.category_aggregates.end() || !close(it->second, v)) agg_ok = false;
    }
    if (!agg_ok) bad.push_back("category_aggregates");
    if (log.ok()) {
        if (log.probe_results.empty()) bad.push_back("probe_results");
        if (!log.adapter_hash) bad.push_back("adapter_hash");
    } else if (!log.error) {
        bad.push_back("error");
    }
    return bad;
}

json run_log_to_json(const RunLog& log) {
    const auto& c = log.config;
    json targets = json::array();
    for (auto t : c.adapter.targets) targets.push_back(std::string(target_name(t)));
    json config{{"beta", num(c.beta)},
                {"seed", c.seed},
                {"lr", num(c.lr)},
                {"steps", c.steps},
                {"batch_size", c.batch_size},
                {"adapter",
                 {{"rank", c.adapter.rank},
                  {"alpha", num(c.adapter.alpha)},
                  {"dropout", num(c.adapter.dropout)},
                  {"targets", targets}}},
                {"optimizer",
                 {{"kind", std::string(optimizer_name(c.optimizer.kind))},
                  {"beta1", num(c.optimizer.beta1)},
                  {"beta2", num(c.optimizer.beta2)},
                  {"eps", num(c.optimizer.eps)},
                  {"weight_decay", num(c.optimizer.weight_decay)},
                  {"reset_between_stages", c.optimizer_reset}}},
                {"schedule_tag", c.schedule_tag},
                {"path_label", std::string(path_label_name(c.path_label))},
                {"probe_pack", c.probe_pack},
                {"preference",
                 {{"pool_size", c.preference.pool_size},
                  {"seed", c.preference.seed},
                  {"conflict_fraction", num(c.preference.conflict_fraction)}}}};

    json raw = json::array();
    json scaled = json::array();
    for (double v : log.margin_raw) raw.push_back(num(v));
    for (double v : log.margin_scaled) scaled.push_back(num(v));

    json probes = json::object();
    for (const auto& [cat, items] : log.probe_results) {
        json inner = json::object();
        for (const auto& [id, m] : items) inner[id] = num(m);
        probes[std::string(category_name(cat))] = inner;
    }
    json aggregates = json::object();
    for (const auto& [cat, v] : log.category_aggregates) aggregates[std::string(category_name(cat))] = num(v);

    return json{{"run_id", log.run_id},
                {"base_hash", log.base_hash},
                {"initial_adapter_hash", opt_str(log.initial_adapter_hash)},
                {"adapter_hash", opt_str(log.adapter_hash)},
                {"stream_key", log.stream_key},
                {"config", config},
                {"margin_trace", {{"raw", raw}, {"scaled", scaled}}},
                {"final_margin", opt_num(log.final_margin)},
                {"roughness", opt_num(log.roughness)},
                {"probe_results", probes},
                {"category_aggregates", aggregates},
                {"status", std::string(status_name(log.status))},
                {"error", opt_str(log.error)},
                {"timestamps", {{"started", opt_str(log.started_at)}, {"finished", opt_str(log.finished_at)}}}};
}

RunLog run_log_from_json(const json& j) {
    Reader r;
    RunLog log;
    if (!j.is_object()) throw RunLogError("run log: top level is not an object", {"<root>"});
    log.run_id = r.get<std::string>(j, "run_id", "run_id");
    log.base_hash = r.get<std::string>(j, "base_hash", "base_hash");
    log.initial_adapter_hash = r.opt_string(j, "initial_adapter_hash", "initial_adapter_hash");
    log.adapter_hash = r.opt_string(j, "adapter_hash", "adapter_hash");
    log.stream_key = r.get<std::string>(j, "stream_key", "stream_key");

    if (const json* cj = r.field(j, "config", "config")) {
        auto& c = log.config;
        c.beta = r.get<double>(*cj, "beta", "config.beta");
        c.seed = r.get<std::int64_t>(*cj, "seed", "config.seed");
        c.lr = r.get<double>(*cj, "lr", "config.lr");
        c.steps = r.get<int>(*cj, "steps", "config.steps");
        c.batch_size = r.get<int>(*cj, "batch_size", "config.batch_size");
        c.schedule_tag = r.get<std::string>(*cj, "schedule_tag", "config.schedule_tag");
        c.probe_pack = r.get<std::string>(*cj, "probe_pack", "config.probe_pack");
        try {
            c.path_label = path_label_from_name(r.get<std::string>(*cj, "path_label", "config.path_label", "fresh"));
        } catch (const std::invalid_argument&) {
            r.errors.push_back("config.path_label");
        }
        if (const json* a = r.field(*cj, "adapter", "config.adapter")) {
            c.adapter.rank = r.get<int>(*a, "rank", "config.adapter.rank");
            c.adapter.alpha = r.get<double>(*a, "alpha", "config.adapter.alpha");
            c.adapter.dropout = r.get<double>(*a, "dropout", "config.adapter.dropout");
            c.adapter.targets.clear();
            try {
                for (const auto& t : r.get<std::vector<std::string>>(*a, "targets", "config.adapter.targets")) {
                    c.adapter.targets.push_back(target_from_name(t));
                }
            } catch (const std::invalid_argument&) {
                r.errors.push_back("config.adapter.targets");
            }
        }
        if (const json* o = r.field(*cj, "optimizer", "config.optimizer")) {
            try {
                c.optimizer.kind = optimizer_from_name(r.get<std::string>(*o, "kind", "config.optimizer.kind", "adamw"));
            } catch (const std::invalid_argument&) {
                r.errors.push_back("config.optimizer.kind");
            }
            c.optimizer.beta1 = r.get<double>(*o, "beta1", "config.optimizer.beta1");
            c.optimizer.beta2 = r.get<double>(*o, "beta2", "config.optimizer.beta2");
            c.optimizer.eps = r.get<double>(*o, "eps", "config.optimizer.eps");
            c.optimizer.weight_decay = r.get<double>(*o, "weight_decay", "config.optimizer.weight_decay");
            c.optimizer_reset = r.get<bool>(*o, "reset_between_stages", "config.optimizer.reset_between_stages");
        }
        if (const json* p = r.field(*cj, "preference", "config.preference")) {
            c.preference.pool_size = r.get<std::size_t>(*p, "pool_size", "config.preference.pool_size");
            c.preference.seed = r.get<std::uint64_t>(*p, "seed", "config.preference.seed");
            c.preference.conflict_fraction = r.get<double>(*p, "conflict_fraction", "config.preference.conflict_fraction");
        }
    }

    if (const json* mt = r.field(j, "margin_trace", "margin_trace")) {
        log.margin_raw = r.doubles(*mt, "raw", "margin_trace.raw");
        log.margin_scaled = r.doubles(*mt, "scaled", "margin_trace.scaled");
    }
    log.final_margin = r.opt_double(j, "final_margin", "final_margin");
    log.roughness = r.opt_double(j, "roughness", "roughness");

    if (const json* pr = r.field(j, "probe_results", "probe_results")) {
        if (!pr->is_object()) r.errors.push_back("probe_results");
        for (const auto& [cat_name, items] : (pr->is_object() ? *pr : kEmptyObject).items()) {
            try {
                const Category cat = category_from_name(cat_name);
                for (const auto& [id, m] : items.items()) {
                    log.probe_results[cat][id] = m.is_null() ? std::nan("") : m.get<double>();
                }
            } catch (const std::exception&) {
                r.errors.push_back("probe_results." + cat_name);
            }
        }
    }
    if (const json* ag = r.field(j, "category_aggregates", "category_aggregates")) {
        for (const auto& [cat_name, v] : (ag->is_object() ? *ag : kEmptyObject).items()) {
            try {
                log.category_aggregates[category_from_name(cat_name)] = v.is_null() ? std::nan("") : v.get<double>();
            } catch (const std::exception&) {
                r.errors.push_back("category_aggregates." + cat_name);
            }
        }
    }
    const auto status = r.get<std::string>(j, "status", "status");
    if (status == "ok") {
        log.status = RunStatus::kOk;
    } else if (status == "failed") {
        log.status = RunStatus::kFailed;
    } else if (!status.empty()) {
        r.errors.push_back("status");
    }
    log.error = r.opt_string(j, "error", "error");
    if (const json* ts = r.field(j, "timestamps", "timestamps")) {
        log.started_at = r.opt_string(*ts, "started", "timestamps.started");
        log.finished_at = r.opt_string(*ts, "finished", "timestamps.finished");
    }

    if (r.errors.empty()) r.errors = validate_run_log(log);
    if (!r.errors.empty()) {
        std::string what = "run log '" + log.run_id + "' invalid fields:";
        for (const auto& f : r.errors) what += " " + f;
        throw RunLogError(what, r.errors);
    }
    return log;
}

std::string serialize_run_log(const RunLog& log) { return run_log_to_json(log).dump(2) + "\n"; }

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::filesystem::path write_run_log(const RunLog& log, const std::filesystem::path& dir) {
    const auto bad = validate_run_log(log);
    if (!bad.empty()) {
        std::string what = "refusing to write invalid run log '" + log.run_id + "':";
        for (const auto& f : bad) what += " " + f;
        throw RunLogError(what, bad);
    }
    std::filesystem::create_directories(dir);
    const auto path = dir / (log.run_id + ".json");
    write_text_file(path, serialize_run_log(log));
    return path;
}

RunLog read_run_log(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw RunLogError(path.string() + ": not valid JSON (" + e.what() + ")", {"<root>"});
    }
    return run_log_from_json(j);
}

}  // namespace phaselab
