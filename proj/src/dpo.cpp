#include "phaselab/dpo.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace phaselab {

double neg_log_sigmoid(double x) {
    // softplus(−x) = max(−x, 0) + log1p(exp(−|x|))
    return std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

namespace {

// σ(−x) without overflow.
double sigmoid_neg(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(x));
}

}  // namespace

DpoTerms dpo_loss(double logp_theta_w, double logp_ref_w, double logp_theta_l, double logp_ref_l, double beta) {
    DpoTerms out;
    out.margin_raw = (logp_theta_w - logp_ref_w) - (logp_theta_l - logp_ref_l);
    out.margin_scaled = beta * out.margin_raw;
    out.loss = neg_log_sigmoid(out.margin_scaled);
    out.dloss_dmargin = -beta * sigmoid_neg(out.margin_scaled);
    return out;
}

std::string_view schedule_name(Schedule s) { return s == Schedule::kCanonical ? "canonical" : "fast"; }

Schedule schedule_from_name(std::string_view name) {
    if (name == "canonical") return Schedule::kCanonical;
    if (name == "fast") return Schedule::kFast;
    throw std::invalid_argument("unknown schedule '" + std::string(name) + "'");
}

RunConfig RunConfig::for_schedule(Schedule schedule, double beta, std::int64_t seed) {
    RunConfig c;
    c.beta = beta;
    c.seed = seed;
    c.schedule = schedule;
    if (schedule == Schedule::kFast) {
        c.steps = 100;
        c.lr = 2e-4;
    }
    return c;
}

void RunConfig::validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("run config: beta must be > 0");
    if (steps < 1) throw std::invalid_argument("run config: steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("run config: batch_size must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("run config: lr must be > 0");
    adapter.validate();
}

std::vector<double> TrainingTrace::scaled_margins() const {
    std::vector<double> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.margin_scaled);
    return out;
}

std::vector<double> TrainingTrace::raw_margins() const {
    std::vector<double> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.margin_raw);
    return out;
}

double final_margin(std::span<const double> scaled) {
    if (scaled.empty()) throw std::invalid_argument("final_margin: empty trace");
    const std::size_t window = std::max<std::size_t>(1, scaled.size() / 10);
    double sum = 0.0;
    for (std::size_t i = scaled.size() - window; i < scaled.size(); ++i) sum += scaled[i];
    return sum / static_cast<double>(window);
}

double final_margin(const TrainingTrace& trace) {
    const auto m = trace.scaled_margins();
    return final_margin(std::span<const double>(m));
}

TrainResult train_run(std::shared_ptr<const ParameterSet> base, const RunConfig& config,
                      std::span<const PreferencePair> pool, const TrainOptions& options) {
    config.validate();
    if (!base) throw std::invalid_argument("train_run: missing base checkpoint");
    if (pool.empty()) throw std::invalid_argument("train_run: empty preference pool");

    CounterRng rng(options.stream_key);
    PolicyPair policy;
    policy.reference = base;
    if (options.initial_adapters) {
        policy.adapters = *options.initial_adapters;
    } else {
        policy.adapters = init_adapters(base->config, config.adapter, rng);
    }
    const Policy theta = policy.theta();
    const Policy ref = policy.ref();

    struct RefScores {
        bool ready = false;
        double chosen = 0.0;
        double rejected = 0.0;
    };
    std::vector<RefScores> ref_cache(pool.size());

    Optimizer opt(config.optimizer);
    const auto tensors = policy.adapters.tensors();
    TrainingTrace trace;
    trace.steps.reserve(static_cast<std::size_t>(config.steps));
    const double inv_batch = 1.0 / static_cast<double>(config.batch_size);

    for (int step = 0; step < config.steps; ++step) {
        std::vector<ScoredSequence> scored;
        scored.reserve(2 * static_cast<std::size_t>(config.batch_size));
        std::vector<double> upstream;
        double loss = 0.0;
        double margin_sum = 0.0;
        for (int b = 0; b < config.batch_size; ++b) {
            const std::size_t idx = rng.uniform_index(pool.size());
            const auto& item = pool[idx];
            auto& rc = ref_cache[idx];
            if (!rc.ready) {
                rc.chosen = completion_logprob(ref, item.prompt, item.chosen);
                rc.rejected = completion_logprob(ref, item.prompt, item.rejected);
                rc.ready = true;
            }
            auto w = score_completion(theta, item.prompt, item.chosen, &rng);
            auto l = score_completion(theta, item.prompt, item.rejected, &rng);
            const DpoTerms terms = dpo_loss(w.logprob, rc.chosen, l.logprob, rc.rejected, config.beta);
            loss += terms.loss * inv_batch;
            margin_sum += terms.margin_raw;
            upstream.push_back(terms.dloss_dmargin * inv_batch);
            upstream.push_back(-terms.dloss_dmargin * inv_batch);
            scored.push_back(std::move(w));
            scored.push_back(std::move(l));
        }
        TrainingStep rec;
        rec.step = step + 1;
        rec.loss = loss;
        rec.margin_raw = margin_sum * inv_batch;
        rec.margin_scaled = config.beta * rec.margin_raw;
        if (!std::isfinite(loss) || !std::isfinite(rec.margin_raw)) {
            throw TrainingAborted("non-finite DPO loss at step " + std::to_string(step + 1), std::move(trace));
        }
        trace.steps.push_back(rec);

        std::vector<LossTerm> terms;
        terms.reserve(scored.size());
        for (std::size_t i = 0; i < scored.size(); ++i) terms.push_back({&scored[i], upstream[i]});
        GradientSet grads;
        try {
            grads = compute_gradients(theta, terms);
        } catch (const NonFiniteError& e) {
            throw TrainingAborted(std::string(e.what()) + " at step " + std::to_string(step + 1), std::move(trace));
        }
        scored.clear();
        opt.step(tensors, grads.adapter, config.lr);
        if (!policy.adapters.all_finite()) {
            throw TrainingAborted("non-finite adapter weight after step " + std::to_string(step + 1), std::move(trace));
        }
    }
    return {std::move(policy.adapters), std::move(trace)};
}

}  // namespace phaselab
