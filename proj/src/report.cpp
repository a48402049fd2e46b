#include "phaselab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <tuple>

#include "phaselab/metrics.hpp"
#include "phaselab/svg.hpp"

namespace phaselab {
namespace {

using json = nlohmann::json;

constexpr const char* kFailedCell = "—";

std::string signed9(double v) {
    if (!std::isfinite(v)) return {};
    char buf[40];
    std::snprintf(buf, sizeof buf, "%+.9g", v);
    return buf;
}

std::string signed_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%+.4f", v);
    return buf;
}

std::string pad(const std::string& s, std::size_t width) {
    // "—" is one column but three bytes.
    const std::size_t cols = s == kFailedCell ? 1 : s.size();
    return cols >= width ? s : s + std::string(width - cols, ' ');
}

std::vector<Category> categories_of(const SweepResult& sweep) {
    std::set<Category> cats;
    for (const auto& e : sweep.entries) {
        for (const auto& [c, v] : e.log.category_aggregates) cats.insert(c);
    }
    return {cats.begin(), cats.end()};
}

std::optional<double> aggregate_of(const RunLog& log, Category c) {
    if (!log.ok()) return std::nullopt;
    const auto it = log.category_aggregates.find(c);
    if (it == log.category_aggregates.end()) return std::nullopt;
    return it->second;
}

bool in_slice(const SweepEntry& e, const Slice& s) { return e.point.lr == s.lr && e.point.seed == s.seed; }

// Ok runs of a slice in ascending beta.
std::vector<const SweepEntry*> slice_entries(const SweepResult& sweep, const Slice& s) {
    std::vector<const SweepEntry*> out;
    for (const auto& e : sweep.entries) {
        if (in_slice(e, s) && e.log.ok()) out.push_back(&e);
    }
    std::sort(out.begin(), out.end(), [](const SweepEntry* a, const SweepEntry* b) { return a->point.beta < b->point.beta; });
    return out;
}

template <typename F>
std::pair<std::vector<double>, std::vector<double>> slice_values(const std::vector<const SweepEntry*>& entries, F value_of) {
    std::vector<double> betas, values;
    for (const auto* e : entries) {
        const std::optional<double> v = value_of(e->log);
        if (!v || !std::isfinite(*v)) continue;
        betas.push_back(e->point.beta);
        values.push_back(*v);
    }
    return {betas, values};
}

json slice_json(const Slice& s) { return json{{"lr", s.lr}, {"seed", s.seed}}; }

json pocket_json(const std::vector<double>& betas, const std::vector<double>& values) {
    try {
        const PocketReport p = detect_pocket(PhaseSeries(betas, values));
        json band = p.band ? json::array({p.band->first, p.band->second}) : json(nullptr);
        return json{{"positive_points", p.positive_points}, {"band", band}, {"contiguous", p.contiguous}};
    } catch (const StatsError& e) {
        return json{{"error", e.what()}};
    }
}

std::string slice_label(const Slice& s) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "lr %g, seed %lld", s.lr, static_cast<long long>(s.seed));
    return buf;
}

std::string csv_row(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
    }
    return out + "\n";
}

struct ProbeKey {
    Category category;
    std::string id;
    auto operator<=>(const ProbeKey&) const = default;
};

}  // namespace

std::vector<Slice> slices_of(const SweepResult& sweep) {
    std::vector<Slice> out;
    for (double lr : sweep.lrs()) {
        for (auto seed : sweep.seeds()) out.push_back({lr, seed});
    }
    return out;
}

std::string phase_table_csv(const SweepResult& sweep) {
    const auto cats = categories_of(sweep);
    std::vector<std::string> header{"beta", "lr", "seed"};
    for (auto c : cats) header.emplace_back(category_name(c));
    for (const char* h : {"final_margin", "roughness", "status", "pocket", "run_id"}) header.emplace_back(h);
    std::string out = csv_row(header);
    auto rows = sweep.entries;
    std::stable_sort(rows.begin(), rows.end(), [](const SweepEntry& a, const SweepEntry& b) {
        return std::tie(a.point.beta, a.point.lr, a.point.seed) < std::tie(b.point.beta, b.point.lr, b.point.seed);
    });
    for (const auto& e : rows) {
        std::vector<std::string> cells{format9(e.point.beta), format9(e.point.lr), std::to_string(e.point.seed)};
        const auto& log = e.log;
        for (auto c : cats) {
            const auto v = aggregate_of(log, c);
            cells.push_back(v ? signed9(*v) : kFailedCell);
        }
        cells.push_back(log.ok() && log.final_margin ? signed9(*log.final_margin) : kFailedCell);
        cells.push_back(log.ok() && log.roughness ? format9(*log.roughness) : kFailedCell);
        cells.emplace_back(status_name(log.status));
        const auto logic = aggregate_of(log, Category::kLogic);
        cells.push_back(logic && *logic > 0.0 ? "*" : "");
        cells.push_back(log.run_id);
        out += csv_row(cells);
    }
    return out;
}

std::string phase_table_text(const SweepResult& sweep) {
    const auto cats = categories_of(sweep);
    const bool multi = sweep.seeds().size() > 1 || sweep.lrs().size() > 1;
    std::string out = pad("beta", 10);
    if (multi) out += pad("lr", 10) + pad("seed", 6);
    for (auto c : cats) out += pad(std::string(category_name(c)), 10);
    out += pad("margin", 11) + pad("roughness", 11) + "pocket\n";
    auto rows = sweep.entries;
    std::stable_sort(rows.begin(), rows.end(), [](const SweepEntry& a, const SweepEntry& b) {
        return std::tie(a.point.beta, a.point.lr, a.point.seed) < std::tie(b.point.beta, b.point.lr, b.point.seed);
    });
    for (const auto& e : rows) {
        const auto& log = e.log;
        char b[32];
        std::snprintf(b, sizeof b, "%g", e.point.beta);
        std::string line = pad(b, 10);
        if (multi) {
            std::snprintf(b, sizeof b, "%g", e.point.lr);
            line += pad(b, 10) + pad(std::to_string(e.point.seed), 6);
        }
        for (auto c : cats) {
            const auto v = aggregate_of(log, c);
            line += pad(v ? signed_short(*v) : kFailedCell, 10);
        }
        line += pad(log.ok() && log.final_margin ? signed_short(*log.final_margin) : kFailedCell, 11);
        if (log.ok() && log.roughness) {
            std::snprintf(b, sizeof b, "%.4f", *log.roughness);
            line += pad(b, 11);
        } else {
            line += pad(kFailedCell, 11);
        }
        const auto logic = aggregate_of(log, Category::kLogic);
        line += logic && *logic > 0.0 ? "*" : "";
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + "\n";
    }
    return out;
}

ReportBundle build_report(const SweepResult& sweep) {
    if (sweep.entries.empty()) throw std::invalid_argument("analyze: no runs");
    ReportBundle bundle;
    const auto cats = categories_of(sweep);
    const auto slices = slices_of(sweep);
    const Slice primary = slices.front();
    const auto seeds = sweep.seeds();

    bundle.files["phase_table.csv"] = phase_table_csv(sweep);
    bundle.files["phase_table.txt"] = phase_table_text(sweep);

    // Pockets per slice and category.
    json pocket_slices = json::array();
    std::optional<std::pair<double, double>> primary_band;
    bool primary_pocket = false;
    for (const auto& s : slices) {
        const auto entries = slice_entries(sweep, s);
        json by_cat = json::object();
        for (auto c : cats) {
            const auto [betas, values] = slice_values(entries, [c](const RunLog& l) { return aggregate_of(l, c); });
            by_cat[std::string(category_name(c))] = pocket_json(betas, values);
        }
        const auto [mb, mv] = slice_values(entries, [](const RunLog& l) { return l.final_margin; });
        json item = slice_json(s);
        item["categories"] = by_cat;
        item["final_margin"] = pocket_json(mb, mv);
        if (s.lr == primary.lr && s.seed == primary.seed && by_cat.contains("logic")) {
            const auto& lp = by_cat["logic"];
            if (lp.contains("band") && !lp["band"].is_null()) {
                primary_band = std::make_pair(lp["band"][0].get<double>(), lp["band"][1].get<double>());
                primary_pocket = true;
            }
        }
        pocket_slices.push_back(item);
    }
    bundle.files["pockets.json"] =
        json{{"primary_slice", slice_json(primary)}, {"category", "logic"}, {"slices", pocket_slices}}.dump(2) + "\n";

    // Roughness collapse per slice.
    json collapse_slices = json::array();
    std::optional<CollapseReport> primary_collapse;
    std::vector<std::pair<double, double>> primary_roughness;
    for (const auto& s : slices) {
        const auto entries = slice_entries(sweep, s);
        const auto [betas, values] = slice_values(entries, [](const RunLog& l) { return l.roughness; });
        json series = json::array();
        for (std::size_t i = 0; i < betas.size(); ++i) series.push_back(json::array({betas[i], values[i]}));
        json item = slice_json(s);
        item["roughness"] = series;
        try {
            const CollapseReport c = detect_collapse(PhaseSeries(betas, values));
            const double drop = quantize9(c.relative_drop);
            item["collapse"] = json{{"beta_from", c.beta_from},
                                    {"beta_to", c.beta_to},
                                    {"relative_drop", drop},
                                    {"is_collapse", c.is_collapse}};
            if (s.lr == primary.lr && s.seed == primary.seed) {
                primary_collapse = c;
                primary_collapse->relative_drop = drop;
            }
        } catch (const StatsError& e) {
            item["collapse"] = nullptr;
            item["error"] = e.what();
        }
        if (s.lr == primary.lr && s.seed == primary.seed) {
            for (std::size_t i = 0; i < betas.size(); ++i) primary_roughness.emplace_back(betas[i], values[i]);
        }
        collapse_slices.push_back(item);
    }
    bundle.files["collapse.json"] = json{{"primary_slice", slice_json(primary)}, {"slices", collapse_slices}}.dump(2) + "\n";

    // Seed variance per (lr, beta), multi-seed only.
    std::vector<PlotSeries> variance_series;
    if (seeds.size() >= 2) {
        std::vector<std::string> header{"lr", "beta", "n_seeds"};
        for (auto c : cats) header.emplace_back(category_name(c));
        header.emplace_back("final_margin");
        std::string csv = csv_row(header);
        for (auto c : cats) variance_series.push_back({std::string(category_name(c)), {}});
        for (double lr : sweep.lrs()) {
            for (double beta : sweep.betas()) {
                std::vector<const RunLog*> logs;
                for (const auto& e : sweep.entries) {
                    if (e.point.lr == lr && e.point.beta == beta && e.log.ok()) logs.push_back(&e.log);
                }
                std::vector<std::string> cells{format9(lr), format9(beta), std::to_string(logs.size())};
                auto variance_cell = [&](auto value_of) -> std::optional<double> {
                    std::vector<double> xs;
                    for (const auto* l : logs) {
                        const std::optional<double> v = value_of(*l);
                        if (v) xs.push_back(*v);
                    }
                    if (xs.size() < 2) return std::nullopt;
                    return quantize9(seed_variance(xs));
                };
                for (std::size_t ci = 0; ci < cats.size(); ++ci) {
                    const Category c = cats[ci];
                    const auto v = variance_cell([c](const RunLog& l) { return aggregate_of(l, c); });
                    cells.push_back(v ? format9(*v) : "");
                    if (v && lr == primary.lr) variance_series[ci].points.emplace_back(beta, *v);
                }
                const auto vm = variance_cell([](const RunLog& l) { return l.final_margin; });
                cells.push_back(vm ? format9(*vm) : "");
                csv += csv_row(cells);
            }
        }
        bundle.files["variance.csv"] = csv;
    } else {
        bundle.notes.push_back("variance.csv omitted: seed variance needs at least 2 seeds, found 1");
    }

    // Correlations: final margin vs each category, then every probe pair.
    std::string corr = csv_row({"lr", "seed", "x", "y", "n", "r", "p", "note"});
    std::optional<Correlation> primary_margin_logic;
    for (const auto& s : slices) {
        const auto entries = slice_entries(sweep, s);
        auto emit = [&](const std::string& xname, const std::string& yname, auto xv, auto yv) -> std::optional<Correlation> {
            std::vector<double> xs, ys;
            for (const auto* e : entries) {
                const std::optional<double> a = xv(e->log);
                const std::optional<double> b = yv(e->log);
                if (!a || !b || !std::isfinite(*a) || !std::isfinite(*b)) continue;
                xs.push_back(*a);
                ys.push_back(*b);
            }
            try {
                const Correlation c = pearson(xs, ys);
                corr += csv_row({format9(s.lr), std::to_string(s.seed), xname, yname, std::to_string(c.n),
                                 format9(quantize9(c.r)), format9(quantize9(c.p)), ""});
                return c;
            } catch (const StatsError& e) {
                std::string note = e.what();
                for (auto& ch : note) {
                    if (ch == ',') ch = ';';
                }
                corr += csv_row({format9(s.lr), std::to_string(s.seed), xname, yname, std::to_string(xs.size()), "", "", note});
                return std::nullopt;
            }
        };
        const auto margin = [](const RunLog& l) { return l.final_margin; };
        for (auto c : cats) {
            const auto r = emit("final_margin", std::string(category_name(c)), margin,
                                [c](const RunLog& l) { return aggregate_of(l, c); });
            if (c == Category::kLogic && s.lr == primary.lr && s.seed == primary.seed) primary_margin_logic = r;
        }
        std::set<ProbeKey> probe_keys;
        for (const auto* e : entries) {
            for (const auto& [c, items] : e->log.probe_results) {
                for (const auto& [id, m] : items) probe_keys.insert({c, id});
            }
        }
        const std::vector<ProbeKey> keys(probe_keys.begin(), probe_keys.end());
        auto probe_value = [](const ProbeKey& k) {
            return [k](const RunLog& l) -> std::optional<double> {
                const auto ci = l.probe_results.find(k.category);
                if (ci == l.probe_results.end()) return std::nullopt;
                const auto pi = ci->second.find(k.id);
                if (pi == ci->second.end()) return std::nullopt;
                return pi->second;
            };
        };
        for (std::size_t i = 0; i < keys.size(); ++i) {
            for (std::size_t j = i + 1; j < keys.size(); ++j) {
                emit("probe:" + keys[i].id, "probe:" + keys[j].id, probe_value(keys[i]), probe_value(keys[j]));
            }
        }
    }
    bundle.files["correlations.csv"] = corr;

    // Annotations shared by the SVGs and bundle.json.
    std::vector<PlotAnnotation> pocket_notes;
    if (primary_band) {
        pocket_notes.push_back({"pocket_lo", primary_band->first, "logic pocket from beta " + format9(primary_band->first)});
        pocket_notes.push_back({"pocket_hi", primary_band->second, "logic pocket to beta " + format9(primary_band->second)});
    }
    std::vector<PlotAnnotation> collapse_notes;
    if (primary_collapse) {
        char pct[32];
        std::snprintf(pct, sizeof pct, "%.1f%%", 100.0 * primary_collapse->relative_drop);
        collapse_notes.push_back({"collapse_from", primary_collapse->beta_from, "collapse from beta " + format9(primary_collapse->beta_from)});
        collapse_notes.push_back({"collapse_to", primary_collapse->beta_to, "collapse to beta " + format9(primary_collapse->beta_to)});
        collapse_notes.push_back({"collapse_drop", primary_collapse->relative_drop, std::string("largest drop ") + pct});
    }
    for (const auto& a : pocket_notes) bundle.annotations[a.key] = a.value;
    for (const auto& a : collapse_notes) bundle.annotations[a.key] = a.value;

    const auto primary_entries = slice_entries(sweep, primary);
    PlotSpec margin_plot;
    margin_plot.title = "Probe margin vs beta (" + slice_label(primary) + ")";
    margin_plot.y_label = "category margin";
    margin_plot.band = primary_band;
    margin_plot.annotations = pocket_notes;
    for (auto c : cats) {
        PlotSeries s{std::string(category_name(c)), {}};
        const auto [betas, values] = slice_values(primary_entries, [c](const RunLog& l) { return aggregate_of(l, c); });
        for (std::size_t i = 0; i < betas.size(); ++i) s.points.emplace_back(betas[i], values[i]);
        margin_plot.series.push_back(std::move(s));
    }
    bundle.files["margin_vs_beta.svg"] = render_plot(margin_plot);

    PlotSpec rough_plot;
    rough_plot.title = "Training roughness vs beta (" + slice_label(primary) + ")";
    rough_plot.y_label = "roughness";
    rough_plot.band = primary_band;
    rough_plot.annotations = collapse_notes;
    rough_plot.series.push_back({"roughness", primary_roughness});
    bundle.files["roughness_vs_beta.svg"] = render_plot(rough_plot);

    PlotSpec var_plot;
    var_plot.title = "Seed variance vs beta";
    var_plot.y_label = "sample variance across seeds";
    var_plot.band = primary_band;
    var_plot.series = variance_series;
    if (seeds.size() < 2) var_plot.notes.push_back("single seed: seed variance needs at least 2 seeds");
    bundle.files["seed_variance_vs_beta.svg"] = render_plot(var_plot);

    // Practitioner warnings.
    std::set<std::string> hashes;
    for (const auto& e : sweep.entries) hashes.insert(e.log.base_hash);
    if (hashes.size() > 1) {
        bundle.warnings.push_back("mixed base hashes: " + std::to_string(hashes.size()) +
                                  " distinct base checkpoints; runs are not a frozen-configuration sweep");
    }
    if (sweep.failed_count() > 0) {
        bundle.warnings.push_back(std::to_string(sweep.failed_count()) + " failed run(s) rendered as gaps");
    }
    if (primary_pocket && seeds.size() < 3) {
        bundle.warnings.push_back("pocket is seed-sensitive: n seeds " + std::to_string(seeds.size()) + " < 3");
    }
    if (primary_margin_logic && primary_margin_logic->r < 0.0 && primary_margin_logic->p < 0.05) {
        bundle.warnings.push_back("final margin anticorrelates with logic (r = " + format9(quantize9(primary_margin_logic->r)) +
                                  "); do not select beta by margin alone");
    }

    json artifacts = json::array();
    for (const auto& [name, text] : bundle.files) artifacts.push_back(name);
    artifacts.push_back("bundle.json");
    json lrs = json::array();
    for (double lr : sweep.lrs()) lrs.push_back(lr);
    bundle.files["bundle.json"] = json{{"sweep_id", sweep.sweep_id},
                                       {"n_runs", sweep.entries.size()},
                                       {"n_failed", sweep.failed_count()},
                                       {"base_hashes", std::vector<std::string>(hashes.begin(), hashes.end())},
                                       {"seeds", seeds},
                                       {"lr_grid", lrs},
                                       {"primary_slice", slice_json(primary)},
                                       {"artifacts", artifacts},
                                       {"annotations", bundle.annotations},
                                       {"warnings", bundle.warnings},
                                       {"notes", bundle.notes}}
                                      .dump(2) +
                                  "\n";
    return bundle;
}

std::vector<std::filesystem::path> write_report(const ReportBundle& bundle, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    for (const auto& [name, text] : bundle.files) {
        const auto path = out_dir / name;
        write_text_file(path, text);
        written.push_back(path);
    }
    return written;
}

}  // namespace phaselab
