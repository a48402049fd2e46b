#include "phaselab/commands.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "phaselab/checkpoint.hpp"
#include "phaselab/report.hpp"

namespace phaselab {
namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, const std::string& prefix, std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
    const std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw ConfigError(prefix.empty() ? key : prefix + "." + key, "unknown key");
    }
}

template <typename T>
T read(const json& j, const std::string& key, const std::string& path) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path, "wrong type");
    }
}

template <typename T>
void read_into(const json& j, const std::string& key, const std::string& prefix, T& target) {
    if (j.contains(key)) target = read<T>(j, key, prefix.empty() ? key : prefix + "." + key);
}

AdapterConfig parse_adapter(const json& j) {
    reject_unknown(j, "adapter", {"rank", "alpha", "dropout", "targets"});
    AdapterConfig a;
    read_into(j, "rank", "adapter", a.rank);
    read_into(j, "alpha", "adapter", a.alpha);
    read_into(j, "dropout", "adapter", a.dropout);
    if (j.contains("targets")) {
        a.targets.clear();
        for (const auto& name : read<std::vector<std::string>>(j, "targets", "adapter.targets")) {
            try {
                a.targets.push_back(target_from_name(name));
            } catch (const std::invalid_argument& e) {
                throw ConfigError("adapter.targets", e.what());
            }
        }
    }
    try {
        a.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("adapter", e.what());
    }
    return a;
}

OptimizerConfig parse_optimizer(const json& j) {
    OptimizerConfig o;
    if (j.is_string()) {
        try {
            o.kind = optimizer_from_name(j.get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ConfigError("optimizer", e.what());
        }
        return o;
    }
    reject_unknown(j, "optimizer", {"kind", "beta1", "beta2", "eps", "weight_decay"});
    if (j.contains("kind")) {
        try {
            o.kind = optimizer_from_name(read<std::string>(j, "kind", "optimizer.kind"));
        } catch (const std::invalid_argument& e) {
            throw ConfigError("optimizer.kind", e.what());
        }
    }
    read_into(j, "beta1", "optimizer", o.beta1);
    read_into(j, "beta2", "optimizer", o.beta2);
    read_into(j, "eps", "optimizer", o.eps);
    read_into(j, "weight_decay", "optimizer", o.weight_decay);
    return o;
}

BaseSpec parse_base(const json& j) {
    reject_unknown(j, "base", {"checkpoint", "pretrain", "model"});
    BaseSpec b;
    if (j.contains("checkpoint")) b.checkpoint = read<std::string>(j, "checkpoint", "base.checkpoint");
    if (j.contains("pretrain")) {
        const auto& p = j.at("pretrain");
        reject_unknown(p, "base.pretrain", {"steps", "lr", "seed", "batch_size", "corpus_size"});
        read_into(p, "steps", "base.pretrain", b.pretrain.steps);
        read_into(p, "lr", "base.pretrain", b.pretrain.lr);
        read_into(p, "seed", "base.pretrain", b.pretrain.seed);
        read_into(p, "batch_size", "base.pretrain", b.pretrain.batch_size);
        read_into(p, "corpus_size", "base.pretrain", b.corpus_size);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        reject_unknown(m, "base.model", {"vocab_size", "context_len", "d_model", "n_layers", "n_heads"});
        read_into(m, "vocab_size", "base.model", b.model.vocab_size);
        read_into(m, "context_len", "base.model", b.model.context_len);
        read_into(m, "d_model", "base.model", b.model.d_model);
        read_into(m, "n_layers", "base.model", b.model.n_layers);
        read_into(m, "n_heads", "base.model", b.model.n_heads);
        try {
            b.model.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError("base.model", e.what());
        }
    }
    return b;
}

// Keys shared by sweep, stress and hysteresis configs.
void parse_training(const json& j, TrainingSettings& t) {
    if (j.contains("schedule")) {
        try {
            t.schedule = schedule_from_name(read<std::string>(j, "schedule", "schedule"));
        } catch (const std::invalid_argument& e) {
            throw ConfigError("schedule", e.what());
        }
    }
    if (j.contains("steps")) t.steps = read<int>(j, "steps", "steps");
    read_into(j, "batch_size", "", t.batch_size);
    read_into(j, "probe_pack", "", t.probe_pack);
    read_into(j, "preference_pool", "", t.preference.pool_size);
    read_into(j, "preference_seed", "", t.preference.seed);
    read_into(j, "conflict_fraction", "", t.preference.conflict_fraction);
    read_into(j, "record_timestamps", "", t.record_timestamps);
    if (j.contains("adapter")) t.adapter = parse_adapter(j.at("adapter"));
    if (j.contains("optimizer")) t.optimizer = parse_optimizer(j.at("optimizer"));
}

void check_training(const TrainingSettings& t) {
    if (t.steps && *t.steps < 1) throw ConfigError("steps", "must be >= 1");
    if (t.batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
    if (t.preference.pool_size < 1) throw ConfigError("preference_pool", "must be >= 1");
    if (!(t.preference.conflict_fraction >= 0.0 && t.preference.conflict_fraction <= 1.0)) {
        throw ConfigError("conflict_fraction", "must lie in [0, 1]");
    }
    try {
        (void)resolve_probe_pack(t.probe_pack);
    } catch (const UnknownProbePack& e) {
        throw ConfigError("probe_pack", e.what());
    }
}

#define PHASELAB_COMMON_KEYS                                                                                        \
    "schedule", "steps", "batch_size", "probe_pack", "preference_pool", "preference_seed", "conflict_fraction",      \
        "record_timestamps", "adapter", "optimizer", "base", "output_dir", "workers", "seeds"

SweepJob parse_grid_config(const json& j, SweepPlan plan) {
    reject_unknown(j, "", {PHASELAB_COMMON_KEYS, "sweep_id", "beta_grid", "lr_grid"});
    SweepJob job;
    read_into(j, "sweep_id", "", plan.sweep_id);
    read_into(j, "beta_grid", "", plan.beta_grid);
    read_into(j, "seeds", "", plan.seeds);
    read_into(j, "lr_grid", "", plan.lr_grid);
    parse_training(j, plan.training);
    if (j.contains("base")) job.base = parse_base(j.at("base"));
    if (j.contains("output_dir")) job.output_dir = read<std::string>(j, "output_dir", "output_dir");
    read_into(j, "workers", "", job.workers);
    job.plan = std::move(plan);
    return job;
}

void check_sweep_job(const SweepJob& job) {
    const auto& p = job.plan;
    if (p.sweep_id.empty() || p.sweep_id.find('/') != std::string::npos) throw ConfigError("sweep_id", "must be a plain name");
    if (p.beta_grid.empty()) throw ConfigError("beta_grid", "must be non-empty");
    for (std::size_t i = 0; i < p.beta_grid.size(); ++i) {
        if (!(p.beta_grid[i] > 0.0) || (i > 0 && !(p.beta_grid[i] > p.beta_grid[i - 1]))) {
            throw ConfigError("beta_grid", "must be positive and strictly increasing");
        }
    }
    if (p.seeds.empty()) throw ConfigError("seeds", "must be non-empty");
    if (std::set<std::int64_t>(p.seeds.begin(), p.seeds.end()).size() != p.seeds.size()) {
        throw ConfigError("seeds", "must not repeat");
    }
    for (double lr : p.lr_grid) {
        if (!(lr > 0.0)) throw ConfigError("lr_grid", "rates must be positive");
    }
    if (job.workers < 1) throw ConfigError("workers", "must be >= 1");
    check_training(p.training);
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("<plan>", e.what());
    }
}

json load_config(const CommandOptions& options) {
    if (!options.config) return json::object();
    std::ifstream f(*options.config);
    if (!f) throw ConfigError("--config", "cannot open " + options.config->string());
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
    }
}

void apply_overrides(const CommandOptions& o, TrainingSettings& t, std::vector<std::int64_t>& seeds,
                     std::filesystem::path& output_dir, std::size_t& workers) {
    if (o.out) output_dir = *o.out;
    if (o.workers) workers = *o.workers;
    if (o.seeds) seeds = *o.seeds;
    if (o.probe_pack) t.probe_pack = *o.probe_pack;
    if (o.schedule) {
        try {
            t.schedule = schedule_from_name(*o.schedule);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("--schedule", e.what());
        }
    }
}

int run_grid(SweepJob job, std::ostream& out, std::ostream& err) {
    check_sweep_job(job);
    const auto dir = job.output_dir / job.plan.sweep_id;
    std::filesystem::create_directories(dir);
    RegisteredBase base;
    try {
        base = prepare_base(job.base);
    } catch (const CheckpointError& e) {
        throw ConfigError("base.checkpoint", e.what());
    }
    if (!job.base.checkpoint) write_checkpoint_file(dir / "base.ckpt", *base.params, nullptr);
    out << "base " << base.hash << "\n";
    const auto points = job.plan.points();
    out << "running " << points.size() << " run(s) on " << job.workers << " worker(s) into " << dir.string() << "\n";
    const SweepResult result = run_sweep(job.plan, base, {job.workers, dir});
    write_text_file(dir / "manifest.json", sweep_manifest(job.plan, result).dump(2) + "\n");
    for (const auto& e : result.entries) {
        if (!e.log.ok()) err << "run " << e.log.run_id << " failed: " << e.log.error.value_or("unknown") << "\n";
    }
    out << result.entries.size() - result.failed_count() << "/" << result.entries.size() << " run(s) ok\n";
    return result.failed_count() > 0 ? kExitPartialFailure : kExitOk;
}

template <typename F>
int guarded(std::ostream& err, F body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const UnknownProbePack& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfigError;
    }
}

}  // namespace

std::vector<std::int64_t> parse_seed_list(const std::string& text) {
    std::vector<std::int64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            seeds.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("--seeds", "not an integer list: " + text);
        }
    }
    if (seeds.empty()) throw ConfigError("--seeds", "empty seed list");
    return seeds;
}

SweepJob parse_sweep_config(const json& j) {
    SweepJob job = parse_grid_config(j, SweepPlan{});
    check_sweep_job(job);
    return job;
}

SweepJob parse_stress_config(const json& j) {
    SweepPlan defaults = stress_grid();
    SweepJob job = parse_grid_config(j, defaults);
    check_sweep_job(job);
    return job;
}

HysteresisJob parse_hysteresis_config(const json& j) {
    reject_unknown(j, "", {PHASELAB_COMMON_KEYS, "hysteresis_id", "beta_high", "beta_final", "stage_steps", "lr"});
    if (j.contains("steps")) throw ConfigError("steps", "use stage_steps for hysteresis plans");
    HysteresisJob job;
    auto& p = job.plan;
    read_into(j, "hysteresis_id", "", p.hysteresis_id);
    read_into(j, "beta_high", "", p.beta_high);
    read_into(j, "beta_final", "", p.beta_final);
    read_into(j, "stage_steps", "", p.stage_steps);
    read_into(j, "seeds", "", p.seeds);
    if (j.contains("lr")) p.lr = read<double>(j, "lr", "lr");
    parse_training(j, p.training);
    if (j.contains("base")) job.base = parse_base(j.at("base"));
    if (j.contains("output_dir")) job.output_dir = read<std::string>(j, "output_dir", "output_dir");
    read_into(j, "workers", "", job.workers);
    return job;
}

namespace {

void check_hysteresis_job(const HysteresisJob& job) {
    const auto& p = job.plan;
    if (!(p.beta_final > 0.0)) throw ConfigError("beta_final", "must be > 0");
    if (!(p.beta_high > p.beta_final)) throw ConfigError("beta_high", "must exceed beta_final");
    if (p.stage_steps < 1) throw ConfigError("stage_steps", "must be >= 1");
    if (p.seeds.empty()) throw ConfigError("seeds", "must be non-empty");
    if (p.lr && !(*p.lr > 0.0)) throw ConfigError("lr", "must be > 0");
    if (job.workers < 1) throw ConfigError("workers", "must be >= 1");
    check_training(p.training);
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("<plan>", e.what());
    }
}

}  // namespace

int cmd_sweep(const CommandOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        SweepJob job = parse_grid_config(load_config(options), SweepPlan{});
        apply_overrides(options, job.plan.training, job.plan.seeds, job.output_dir, job.workers);
        return run_grid(std::move(job), out, err);
    });
}

int cmd_stress(const CommandOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        SweepJob job = parse_grid_config(load_config(options), stress_grid());
        apply_overrides(options, job.plan.training, job.plan.seeds, job.output_dir, job.workers);
        return run_grid(std::move(job), out, err);
    });
}

int cmd_hysteresis(const CommandOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        HysteresisJob job = parse_hysteresis_config(load_config(options));
        apply_overrides(options, job.plan.training, job.plan.seeds, job.output_dir, job.workers);
        check_hysteresis_job(job);
        const auto dir = job.output_dir / job.plan.hysteresis_id;
        std::filesystem::create_directories(dir);
        RegisteredBase base;
        try {
            base = prepare_base(job.base);
        } catch (const CheckpointError& e) {
            throw ConfigError("base.checkpoint", e.what());
        }
        if (!job.base.checkpoint) write_checkpoint_file(dir / "base.ckpt", *base.params, nullptr);
        out << "base " << base.hash << "\n";
        out << "hysteresis over " << job.plan.seeds.size() << " seed(s) into " << dir.string() << "\n";
        const HysteresisResult result = run_hysteresis(job.plan, base, {job.workers, dir});
        const json summary = hysteresis_summary_json(result);
        write_text_file(dir / "hysteresis_summary.json", summary.dump(2) + "\n");
        write_text_file(dir / "hysteresis_summary.csv", hysteresis_summary_csv(result));
        json manifest{{"hysteresis_id", job.plan.hysteresis_id},
                      {"base_hash", base.hash},
                      {"beta_high", job.plan.beta_high},
                      {"beta_final", job.plan.beta_final},
                      {"stage_steps", job.plan.stage_steps},
                      {"seeds", job.plan.seeds},
                      {"lr", job.plan.effective_lr()},
                      {"schedule", std::string(schedule_name(job.plan.training.schedule))},
                      {"probe_pack", job.plan.training.probe_pack}};
        write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
        out << hysteresis_summary_csv(result);
        for (const auto& s : result.seeds) {
            if (!s.complete()) err << "seed " << s.seed << ": hysteresis pair incomplete\n";
        }
        return result.any_failed() ? kExitPartialFailure : kExitOk;
    });
}

int cmd_analyze(const std::filesystem::path& log_dir, const CommandOptions& options, std::ostream& out, std::ostream& err) {
    SweepResult sweep;
    try {
        sweep = load_sweep_directory(log_dir);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfigError;
    }
    const ReportBundle bundle = build_report(sweep);
    const auto dir = options.out ? *options.out : log_dir / "analysis";
    for (const auto& p : write_report(bundle, dir)) out << "wrote " << p.string() << "\n";
    for (const auto& w : bundle.warnings) err << "warning: " << w << "\n";
    out << bundle.files.at("phase_table.txt");
    return kExitOk;
}

int cmd_probes(const std::string& action, const CommandOptions& options, std::ostream& out, std::ostream& err) {
    return guarded(err, [&]() -> int {
        const std::string pack = options.probe_pack.value_or(std::string(kBuiltinPack));
        const auto probes = resolve_probe_pack(pack);
        if (action == "list") {
            for (const auto& p : probes) {
                out << p.id << "\t" << category_name(p.category) << "\t" << render_tokens(p.prompt) << "\t=> "
                    << render_tokens(p.correct) << " | " << render_tokens(p.incorrect) << "\n";
            }
            return kExitOk;
        }
        if (action == "dump") {
            const std::string text = probe_pack_to_json(pack, probes).dump(2) + "\n";
            if (options.out) {
                write_text_file(*options.out, text);
            } else {
                out << text;
            }
            return kExitOk;
        }
        throw ConfigError("probes", "unknown action '" + action + "' (expected list or dump)");
    });
}

}  // namespace phaselab
