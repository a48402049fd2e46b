#include "phaselab/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "phaselab/checkpoint.hpp"
#include "phaselab/optimizer.hpp"

namespace phaselab {

namespace detail {

constexpr double kLnEps = 1e-5;
constexpr int kTargetCount = 6;

struct LayerNormCache {
    std::vector<double> xhat;
    std::vector<double> rstd;
};

struct AdapterCache {
    int pair = -1;
    std::vector<double> mask;   // empty in eval mode
    std::vector<double> xdrop;  // adapter input after dropout
    std::vector<double> u;      // A * xdrop, [T, rank]
};

struct LayerCache {
    std::vector<double> x_in, a1, q, k, v, att, ctx, x_mid, a2, fc_pre, fc_act;
    LayerNormCache ln1, ln2;
    std::array<AdapterCache, kTargetCount> adapters;
};

}  // namespace detail

struct ForwardTape {
    TokenSeq tokens;
    int seq_len = 0;
    int first_scored = 0;  // position t predicts tokens[t + 1] for t in [first_scored, seq_len - 2]
    std::vector<detail::LayerCache> layers;
    std::vector<double> x_final;
    detail::LayerNormCache lnf;
    std::vector<double> zf;
    std::vector<double> probs;  // [scored positions, vocab]
};

namespace {

using detail::AdapterCache;
using detail::kLnEps;
using detail::LayerNormCache;

void layernorm_forward(const double* x, int T, int d, const float* g, const float* b, double* y, LayerNormCache& c) {
    c.xhat.assign(static_cast<std::size_t>(T) * d, 0.0);
    c.rstd.assign(T, 0.0);
    for (int t = 0; t < T; ++t) {
        const double* xt = x + static_cast<std::ptrdiff_t>(t) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xt[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (xt[j] - mean) * (xt[j] - mean);
        var /= d;
        const double rstd = 1.0 / std::sqrt(var + kLnEps);
        c.rstd[t] = rstd;
        for (int j = 0; j < d; ++j) {
            const double xh = (xt[j] - mean) * rstd;
            c.xhat[static_cast<std::size_t>(t) * d + j] = xh;
            y[static_cast<std::ptrdiff_t>(t) * d + j] = xh * g[j] + b[j];
        }
    }
}

// Accumulates into dx, dg, db (dg/db may be null).
void layernorm_backward(const double* dy, int T, int d, const float* g, const LayerNormCache& c, double* dx, double* dg,
                        double* db) {
    std::vector<double> dxhat(d);
    for (int t = 0; t < T; ++t) {
        const double* dyt = dy + static_cast<std::ptrdiff_t>(t) * d;
        const double* xh = c.xhat.data() + static_cast<std::ptrdiff_t>(t) * d;
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (int j = 0; j < d; ++j) {
            dxhat[j] = dyt[j] * g[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
            if (dg) dg[j] += dyt[j] * xh[j];
            if (db) db[j] += dyt[j];
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        for (int j = 0; j < d; ++j) {
            dx[static_cast<std::ptrdiff_t>(t) * d + j] += c.rstd[t] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

// y[t] = W x[t], W is [dout, din].
void linear_forward(const Tensor& w, const double* x, int T, int din, int dout, double* y) {
    const float* W = w.data.data();
    for (int t = 0; t < T; ++t) {
        const double* xt = x + static_cast<std::ptrdiff_t>(t) * din;
        double* yt = y + static_cast<std::ptrdiff_t>(t) * dout;
        for (int i = 0; i < dout; ++i) {
            const float* row = W + static_cast<std::ptrdiff_t>(i) * din;
            double acc = 0.0;
            for (int j = 0; j < din; ++j) acc += static_cast<double>(row[j]) * xt[j];
            yt[i] = acc;
        }
    }
}

void linear_backward(const Tensor& w, const double* x, const double* dy, int T, int din, int dout, double* dx,
                     double* dw) {
    const float* W = w.data.data();
    for (int t = 0; t < T; ++t) {
        const double* xt = x + static_cast<std::ptrdiff_t>(t) * din;
        const double* dyt = dy + static_cast<std::ptrdiff_t>(t) * dout;
        double* dxt = dx + static_cast<std::ptrdiff_t>(t) * din;
        for (int i = 0; i < dout; ++i) {
            const double gi = dyt[i];
            if (gi == 0.0) continue;
            const float* row = W + static_cast<std::ptrdiff_t>(i) * din;
            for (int j = 0; j < din; ++j) dxt[j] += static_cast<double>(row[j]) * gi;
            if (dw) {
                double* drow = dw + static_cast<std::ptrdiff_t>(i) * din;
                for (int j = 0; j < din; ++j) drow[j] += gi * xt[j];
            }
        }
    }
}

// y += scale * B (A dropout(x)).
void adapter_forward(const AdapterPair& p, double scale, double dropout_p, CounterRng* rng, const double* x, int T,
                     int din, int dout, double* y, AdapterCache& c) {
    const int r = p.a.shape[0];
    const std::size_t n_in = static_cast<std::size_t>(T) * din;
    c.xdrop.assign(x, x + n_in);
    c.mask.clear();
    if (rng != nullptr && dropout_p > 0.0) {
        c.mask.resize(n_in);
        const double keep_scale = 1.0 / (1.0 - dropout_p);
        for (std::size_t i = 0; i < n_in; ++i) {
            c.mask[i] = rng->uniform() < dropout_p ? 0.0 : keep_scale;
            c.xdrop[i] *= c.mask[i];
        }
    }
    c.u.assign(static_cast<std::size_t>(T) * r, 0.0);
    linear_forward(p.a, c.xdrop.data(), T, din, r, c.u.data());
    std::vector<double> delta(static_cast<std::size_t>(T) * dout);
    linear_forward(p.b, c.u.data(), T, r, dout, delta.data());
    for (std::size_t i = 0; i < delta.size(); ++i) y[i] += scale * delta[i];
}

void adapter_backward(const AdapterPair& p, double scale, const double* dy, int T, int din, int dout,
                      const AdapterCache& c, double* dx, double* da, double* db) {
    const int r = p.a.shape[0];
    std::vector<double> scaled_dy(dy, dy + static_cast<std::ptrdiff_t>(T) * dout);
    for (double& g : scaled_dy) g *= scale;
    std::vector<double> du(static_cast<std::size_t>(T) * r, 0.0);
    linear_backward(p.b, c.u.data(), scaled_dy.data(), T, r, dout, du.data(), db);
    std::vector<double> dxdrop(static_cast<std::size_t>(T) * din, 0.0);
    linear_backward(p.a, c.xdrop.data(), du.data(), T, din, r, dxdrop.data(), da);
    for (std::size_t i = 0; i < dxdrop.size(); ++i) dx[i] += c.mask.empty() ? dxdrop[i] : c.mask[i] * dxdrop[i];
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); }

double gelu_grad(double x) {
    const double th = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

std::pair<int, int> target_dims(const ModelConfig& cfg, AdapterTarget t) {
    switch (t) {
        case AdapterTarget::kMlpUp: return {cfg.d_ff(), cfg.d_model};
        case AdapterTarget::kMlpDown: return {cfg.d_model, cfg.d_ff()};
        default: return {cfg.d_model, cfg.d_model};
    }
}

// adapter pair index per (layer, target), -1 when absent.
std::vector<std::array<int, detail::kTargetCount>> adapter_index(const ModelConfig& cfg, const AdapterSet* adapters) {
    std::vector<std::array<int, detail::kTargetCount>> idx(cfg.n_layers);
    for (auto& row : idx) row.fill(-1);
    if (adapters == nullptr) return idx;
    for (std::size_t i = 0; i < adapters->pairs.size(); ++i) {
        const auto& p = adapters->pairs[i];
        if (p.layer < 0 || p.layer >= cfg.n_layers) throw std::invalid_argument("adapter layer out of range");
        idx[p.layer][static_cast<int>(p.target)] = static_cast<int>(i);
    }
    return idx;
}


}  // namespace

// ---------------------------------------------------------------------------
// Types

void ModelConfig::validate() const {
    if (vocab_size < 1 || context_len < 1 || d_model < 1 || n_layers < 1 || n_heads < 1) {
        throw std::invalid_argument("model config: all counts must be >= 1");
    }
    if (d_model % n_heads != 0) throw std::invalid_argument("model config: d_model must be divisible by n_heads");
}

Tensor::Tensor(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
    std::size_t count = 1;
    for (int dim : shape) count *= static_cast<std::size_t>(dim);
    data.assign(count, 0.0F);
}

std::string ParameterSet::content_hash() const { return to_hex(checkpoint_digest(*this, nullptr)); }

const Tensor& ParameterSet::at(std::string_view name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw std::out_of_range("no tensor named '" + std::string(name) + "'");
}

namespace {
bool finite_tensor(const Tensor& t) {
    return std::all_of(t.data.begin(), t.data.end(), [](float v) { return std::isfinite(v); });
}
}  // namespace

bool ParameterSet::all_finite() const { return std::all_of(tensors.begin(), tensors.end(), finite_tensor); }

std::string_view target_name(AdapterTarget t) {
    switch (t) {
        case AdapterTarget::kQuery: return "q";
        case AdapterTarget::kKey: return "k";
        case AdapterTarget::kValue: return "v";
        case AdapterTarget::kOutput: return "o";
        case AdapterTarget::kMlpUp: return "fc";
        case AdapterTarget::kMlpDown: return "proj";
    }
    return "?";
}

AdapterTarget target_from_name(std::string_view name) {
    for (int i = 0; i < detail::kTargetCount; ++i) {
        const auto t = static_cast<AdapterTarget>(i);
        if (target_name(t) == name) return t;
    }
    throw std::invalid_argument("unknown adapter target '" + std::string(name) + "'");
}

void AdapterConfig::validate() const {
    if (rank < 1) throw std::invalid_argument("adapter rank must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("adapter dropout must be in [0, 1)");
    if (!std::isfinite(alpha)) throw std::invalid_argument("adapter alpha must be finite");
    if (targets.empty()) throw std::invalid_argument("adapter targets must be non-empty");
}

std::vector<Tensor*> AdapterSet::tensors() {
    std::vector<Tensor*> out;
    for (auto& p : pairs) {
        out.push_back(&p.a);
        out.push_back(&p.b);
    }
    return out;
}

std::vector<const Tensor*> AdapterSet::tensors() const {
    std::vector<const Tensor*> out;
    for (const auto& p : pairs) {
        out.push_back(&p.a);
        out.push_back(&p.b);
    }
    return out;
}

bool AdapterSet::all_finite() const {
    return std::all_of(pairs.begin(), pairs.end(),
                       [](const AdapterPair& p) { return finite_tensor(p.a) && finite_tensor(p.b); });
}

// ---------------------------------------------------------------------------
// Initialization

ParameterSet init_base(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const int d = config.d_model;
    const int V = config.vocab_size;
    const ParamLayout layout{config.n_layers};
    ParameterSet p;
    p.config = config;
    p.tensors.resize(layout.count());
    p.tensors[layout.tok_emb()] = Tensor("tok_emb", {V, d});
    p.tensors[layout.pos_emb()] = Tensor("pos_emb", {config.context_len, d});
    for (int l = 0; l < config.n_layers; ++l) {
        const std::string pre = "layers." + std::to_string(l) + ".";
        p.tensors[layout.layer(l, ParamLayout::kLn1Gain)] = Tensor(pre + "ln1.gain", {d});
        p.tensors[layout.layer(l, ParamLayout::kLn1Bias)] = Tensor(pre + "ln1.bias", {d});
        p.tensors[layout.layer(l, ParamLayout::kWq)] = Tensor(pre + "attn.wq", {d, d});
        p.tensors[layout.layer(l, ParamLayout::kWk)] = Tensor(pre + "attn.wk", {d, d});
        p.tensors[layout.layer(l, ParamLayout::kWv)] = Tensor(pre + "attn.wv", {d, d});
        p.tensors[layout.layer(l, ParamLayout::kWo)] = Tensor(pre + "attn.wo", {d, d});
        p.tensors[layout.layer(l, ParamLayout::kLn2Gain)] = Tensor(pre + "ln2.gain", {d});
        p.tensors[layout.layer(l, ParamLayout::kLn2Bias)] = Tensor(pre + "ln2.bias", {d});
        p.tensors[layout.layer(l, ParamLayout::kWfc)] = Tensor(pre + "mlp.w_fc", {config.d_ff(), d});
        p.tensors[layout.layer(l, ParamLayout::kWproj)] = Tensor(pre + "mlp.w_proj", {d, config.d_ff()});
    }
    p.tensors[layout.lnf_gain()] = Tensor("lnf.gain", {d});
    p.tensors[layout.lnf_bias()] = Tensor("lnf.bias", {d});
    p.tensors[layout.w_out()] = Tensor("w_out", {V, d});

    CounterRng rng(CounterRng::mix64(seed) ^ 0xBA5EULL);
    const double std_dev = 0.02;
    const double resid_std = std_dev / std::sqrt(2.0 * config.n_layers);
    for (auto& t : p.tensors) {
        const bool is_gain = t.name.ends_with(".gain");
        const bool is_bias = t.name.ends_with(".bias");
        const bool is_resid = t.name.ends_with("attn.wo") || t.name.ends_with("mlp.w_proj");
        for (float& v : t.data) {
            if (is_gain) {
                v = 1.0F;
            } else if (is_bias) {
                v = 0.0F;
            } else {
                v = static_cast<float>(rng.normal() * (is_resid ? resid_std : std_dev));
            }
        }
    }
    return p;
}

AdapterSet init_adapters(const ModelConfig& config, const AdapterConfig& adapter, CounterRng& rng) {
    config.validate();
    adapter.validate();
    AdapterSet s;
    s.config = adapter;
    for (int l = 0; l < config.n_layers; ++l) {
        for (AdapterTarget target : adapter.targets) {
            const auto [dout, din] = target_dims(config, target);
            const std::string pre = "adapter.layers." + std::to_string(l) + "." + std::string(target_name(target));
            AdapterPair pair;
            pair.layer = l;
            pair.target = target;
            pair.a = Tensor(pre + ".A", {adapter.rank, din});
            pair.b = Tensor(pre + ".B", {dout, adapter.rank});
            const double bound = 1.0 / std::sqrt(static_cast<double>(din));
            for (float& v : pair.a.data) v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
            s.pairs.push_back(std::move(pair));
        }
    }
    return s;
}

PolicyPair make_policy_pair(std::shared_ptr<const ParameterSet> base, const AdapterConfig& adapter, CounterRng& rng) {
    if (!base) throw std::invalid_argument("make_policy_pair: null base");
    PolicyPair pair;
    pair.adapters = init_adapters(base->config, adapter, rng);
    pair.reference = std::move(base);
    return pair;
}

// ---------------------------------------------------------------------------
// Forward

ScoredSequence score_completion(const Policy& policy, std::span<const Token> prompt, std::span<const Token> completion,
                                CounterRng* dropout) {
    if (policy.base == nullptr) throw std::invalid_argument("score_completion: policy without base weights");
    const ParameterSet& P = *policy.base;
    const ModelConfig& cfg = P.config;
    const ParamLayout layout{cfg.n_layers};
    if (prompt.empty()) throw SequenceError("prompt must contain at least one token");
    std::size_t clen = completion.size();
    for (std::size_t i = 0; i < completion.size(); ++i) {
        if (completion[i] == tok::kEnd) {
            clen = i + 1;
            break;
        }
    }
    if (clen == 0) throw SequenceError("completion must be non-empty");
    const std::size_t total = prompt.size() + clen;
    if (total > static_cast<std::size_t>(cfg.context_len)) {
        throw SequenceError("sequence of " + std::to_string(total) + " tokens overflows context_len " +
                            std::to_string(cfg.context_len));
    }

    auto tape = std::make_shared<ForwardTape>();
    tape->tokens.assign(prompt.begin(), prompt.end());
    tape->tokens.insert(tape->tokens.end(), completion.begin(), completion.begin() + static_cast<std::ptrdiff_t>(clen));
    for (Token t : tape->tokens) {
        if (t < 0 || t >= cfg.vocab_size) throw SequenceError("token " + std::to_string(t) + " outside vocabulary");
    }
    const int T = static_cast<int>(total);
    const int d = cfg.d_model;
    const int F = cfg.d_ff();
    const int H = cfg.n_heads;
    const int dh = cfg.head_dim();
    const int V = cfg.vocab_size;
    tape->seq_len = T;
    tape->first_scored = static_cast<int>(prompt.size()) - 1;

    const auto aidx = adapter_index(cfg, policy.adapters);
    const double scale = policy.adapters ? policy.adapters->config.scale() : 0.0;
    const double dropout_p = policy.adapters ? policy.adapters->config.dropout : 0.0;

    auto with_adapter = [&](int l, AdapterTarget target, const double* x, int din, int dout, double* y,
                            detail::LayerCache& lc) {
        const int ti = static_cast<int>(target);
        const int pi = aidx[l][ti];
        lc.adapters[ti].pair = pi;
        if (pi < 0) return;
        adapter_forward(policy.adapters->pairs[pi], scale, dropout_p, dropout, x, T, din, dout, y, lc.adapters[ti]);
    };

    std::vector<double> x(static_cast<std::size_t>(T) * d);
    const auto& tok_emb = P.tensors[layout.tok_emb()].data;
    const auto& pos_emb = P.tensors[layout.pos_emb()].data;
    for (int t = 0; t < T; ++t) {
        const auto tk = static_cast<std::size_t>(tape->tokens[t]);
        for (int j = 0; j < d; ++j) {
            x[static_cast<std::size_t>(t) * d + j] =
                static_cast<double>(tok_emb[tk * d + j]) + static_cast<double>(pos_emb[static_cast<std::size_t>(t) * d + j]);
        }
    }

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    tape->layers.resize(cfg.n_layers);
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& lc = tape->layers[l];
        auto W = [&](ParamLayout::LayerSlot s) -> const Tensor& { return P.tensors[layout.layer(l, s)]; };
        const std::size_t Td = static_cast<std::size_t>(T) * d;
        lc.x_in = x;
        lc.a1.assign(Td, 0.0);
        layernorm_forward(x.data(), T, d, W(ParamLayout::kLn1Gain).data.data(), W(ParamLayout::kLn1Bias).data.data(),
                          lc.a1.data(), lc.ln1);
        lc.q.assign(Td, 0.0);
        lc.k.assign(Td, 0.0);
        lc.v.assign(Td, 0.0);
        linear_forward(W(ParamLayout::kWq), lc.a1.data(), T, d, d, lc.q.data());
        with_adapter(l, AdapterTarget::kQuery, lc.a1.data(), d, d, lc.q.data(), lc);
        linear_forward(W(ParamLayout::kWk), lc.a1.data(), T, d, d, lc.k.data());
        with_adapter(l, AdapterTarget::kKey, lc.a1.data(), d, d, lc.k.data(), lc);
        linear_forward(W(ParamLayout::kWv), lc.a1.data(), T, d, d, lc.v.data());
        with_adapter(l, AdapterTarget::kValue, lc.a1.data(), d, d, lc.v.data(), lc);

        lc.att.assign(static_cast<std::size_t>(H) * T * T, 0.0);
        lc.ctx.assign(Td, 0.0);
        for (int h = 0; h < H; ++h) {
            for (int t = 0; t < T; ++t) {
                double* row = lc.att.data() + (static_cast<std::size_t>(h) * T + t) * T;
                const double* qt = lc.q.data() + static_cast<std::size_t>(t) * d + h * dh;
                double mx = -std::numeric_limits<double>::infinity();
                for (int s = 0; s <= t; ++s) {
                    const double* ks = lc.k.data() + static_cast<std::size_t>(s) * d + h * dh;
                    double dot = 0.0;
                    for (int e = 0; e < dh; ++e) dot += qt[e] * ks[e];
                    row[s] = dot * inv_sqrt_dh;
                    mx = std::max(mx, row[s]);
                }
                double sum = 0.0;
                for (int s = 0; s <= t; ++s) {
                    row[s] = std::exp(row[s] - mx);
                    sum += row[s];
                }
                double* ct = lc.ctx.data() + static_cast<std::size_t>(t) * d + h * dh;
                for (int s = 0; s <= t; ++s) {
                    row[s] /= sum;
                    const double* vs = lc.v.data() + static_cast<std::size_t>(s) * d + h * dh;
                    for (int e = 0; e < dh; ++e) ct[e] += row[s] * vs[e];
                }
            }
        }

        std::vector<double> attn_out(Td, 0.0);
        linear_forward(W(ParamLayout::kWo), lc.ctx.data(), T, d, d, attn_out.data());
        with_adapter(l, AdapterTarget::kOutput, lc.ctx.data(), d, d, attn_out.data(), lc);
        lc.x_mid.resize(Td);
        for (std::size_t i = 0; i < Td; ++i) lc.x_mid[i] = x[i] + attn_out[i];

        lc.a2.assign(Td, 0.0);
        layernorm_forward(lc.x_mid.data(), T, d, W(ParamLayout::kLn2Gain).data.data(),
                          W(ParamLayout::kLn2Bias).data.data(), lc.a2.data(), lc.ln2);
        const std::size_t TF = static_cast<std::size_t>(T) * F;
        lc.fc_pre.assign(TF, 0.0);
        linear_forward(W(ParamLayout::kWfc), lc.a2.data(), T, d, F, lc.fc_pre.data());
        with_adapter(l, AdapterTarget::kMlpUp, lc.a2.data(), d, F, lc.fc_pre.data(), lc);
        lc.fc_act.resize(TF);
        for (std::size_t i = 0; i < TF; ++i) lc.fc_act[i] = gelu(lc.fc_pre[i]);
        std::vector<double> mlp_out(Td, 0.0);
        linear_forward(W(ParamLayout::kWproj), lc.fc_act.data(), T, F, d, mlp_out.data());
        with_adapter(l, AdapterTarget::kMlpDown, lc.fc_act.data(), F, d, mlp_out.data(), lc);
        for (std::size_t i = 0; i < Td; ++i) x[i] = lc.x_mid[i] + mlp_out[i];
    }

    tape->x_final = x;
    tape->zf.assign(x.size(), 0.0);
    layernorm_forward(x.data(), T, d, P.tensors[layout.lnf_gain()].data.data(), P.tensors[layout.lnf_bias()].data.data(),
                      tape->zf.data(), tape->lnf);

    const Tensor& w_out = P.tensors[layout.w_out()];
    const int n_scored = T - 1 - tape->first_scored;
    tape->probs.assign(static_cast<std::size_t>(n_scored) * V, 0.0);
    double logprob = 0.0;
    for (int i = 0; i < n_scored; ++i) {
        const int t = tape->first_scored + i;
        double* pr = tape->probs.data() + static_cast<std::size_t>(i) * V;
        linear_forward(w_out, tape->zf.data() + static_cast<std::size_t>(t) * d, 1, d, V, pr);
        const double mx = *std::max_element(pr, pr + V);
        const Token target = tape->tokens[t + 1];
        const double target_logit = pr[target] - mx;
        double sum = 0.0;
        for (int v = 0; v < V; ++v) {
            pr[v] = std::exp(pr[v] - mx);
            sum += pr[v];
        }
        for (int v = 0; v < V; ++v) pr[v] /= sum;
        logprob += target_logit - std::log(sum);
    }

    ScoredSequence out;
    out.logprob = logprob;
    out.completion_tokens = static_cast<int>(clen);
    out.tape = std::move(tape);
    return out;
}

double completion_logprob(const Policy& policy, std::span<const Token> prompt, std::span<const Token> completion) {
    const double lp = score_completion(policy, prompt, completion, nullptr).logprob;
    if (!std::isfinite(lp)) throw NonFiniteError("completion log-probability is not finite");
    return lp;
}

// ---------------------------------------------------------------------------
// Backward

GradientSet GradientSet::for_adapters(const AdapterSet& adapters) {
    GradientSet g;
    for (const Tensor* t : adapters.tensors()) g.adapter.emplace_back(t->numel(), 0.0);
    return g;
}

GradientSet GradientSet::for_base(const ParameterSet& params) {
    GradientSet g;
    for (const auto& t : params.tensors) g.base.emplace_back(t.numel(), 0.0);
    return g;
}

void GradientSet::zero() {
    for (auto& v : base) std::fill(v.begin(), v.end(), 0.0);
    for (auto& v : adapter) std::fill(v.begin(), v.end(), 0.0);
}

bool GradientSet::all_finite() const {
    auto ok = [](const std::vector<std::vector<double>>& side) {
        for (const auto& v : side) {
            for (double x : v) {
                if (!std::isfinite(x)) return false;
            }
        }
        return true;
    };
    return ok(base) && ok(adapter);
}

void backward(const Policy& policy, const ScoredSequence& scored, double upstream, GradientSet& grads) {
    if (!scored.tape) throw std::invalid_argument("backward: sequence has no tape");
    const ForwardTape& tp = *scored.tape;
    const ParameterSet& P = *policy.base;
    const ModelConfig& cfg = P.config;
    const ParamLayout layout{cfg.n_layers};
    const int T = tp.seq_len;
    const int d = cfg.d_model;
    const int F = cfg.d_ff();
    const int H = cfg.n_heads;
    const int dh = cfg.head_dim();
    const int V = cfg.vocab_size;
    const bool want_base = !grads.base.empty();
    const bool want_adapter = !grads.adapter.empty();
    if (want_base && grads.base.size() != P.tensors.size()) throw std::invalid_argument("backward: base grad layout");
    if (want_adapter && (policy.adapters == nullptr || grads.adapter.size() != policy.adapters->pairs.size() * 2)) {
        throw std::invalid_argument("backward: adapter grad layout");
    }
    const double scale = policy.adapters ? policy.adapters->config.scale() : 0.0;
    auto base_grad = [&](int idx) -> double* { return want_base ? grads.base[idx].data() : nullptr; };

    const std::size_t Td = static_cast<std::size_t>(T) * d;
    std::vector<double> dzf(Td, 0.0);
    const Tensor& w_out = P.tensors[layout.w_out()];
    const int n_scored = T - 1 - tp.first_scored;
    std::vector<double> dlogit(V);
    for (int i = 0; i < n_scored; ++i) {
        const int t = tp.first_scored + i;
        const double* pr = tp.probs.data() + static_cast<std::size_t>(i) * V;
        const Token target = tp.tokens[t + 1];
        for (int v = 0; v < V; ++v) dlogit[v] = upstream * ((v == target ? 1.0 : 0.0) - pr[v]);
        linear_backward(w_out, tp.zf.data() + static_cast<std::size_t>(t) * d, dlogit.data(), 1, d, V,
                        dzf.data() + static_cast<std::size_t>(t) * d, base_grad(layout.w_out()));
    }

    std::vector<double> dx(Td, 0.0);
    layernorm_backward(dzf.data(), T, d, P.tensors[layout.lnf_gain()].data.data(), tp.lnf, dx.data(),
                       base_grad(layout.lnf_gain()), base_grad(layout.lnf_bias()));

    auto adapter_bwd = [&](int l, AdapterTarget target, const double* dy, int din, int dout, double* dxin) {
        const auto& ac = tp.layers[l].adapters[static_cast<int>(target)];
        if (ac.pair < 0) return;
        const auto& pair = policy.adapters->pairs[ac.pair];
        double* da = want_adapter ? grads.adapter[2 * ac.pair].data() : nullptr;
        double* db = want_adapter ? grads.adapter[2 * ac.pair + 1].data() : nullptr;
        adapter_backward(pair, scale, dy, T, din, dout, ac, dxin, da, db);
    };

    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& lc = tp.layers[l];
        auto W = [&](ParamLayout::LayerSlot s) -> const Tensor& { return P.tensors[layout.layer(l, s)]; };
        auto G = [&](ParamLayout::LayerSlot s) { return base_grad(layout.layer(l, s)); };
        const std::size_t TF = static_cast<std::size_t>(T) * F;

        // MLP branch: x_out = x_mid + proj(gelu(fc(ln2(x_mid))))
        std::vector<double> dfc(TF, 0.0);
        linear_backward(W(ParamLayout::kWproj), lc.fc_act.data(), dx.data(), T, F, d, dfc.data(), G(ParamLayout::kWproj));
        adapter_bwd(l, AdapterTarget::kMlpDown, dx.data(), F, d, dfc.data());
        for (std::size_t i = 0; i < TF; ++i) dfc[i] *= gelu_grad(lc.fc_pre[i]);
        std::vector<double> da2(Td, 0.0);
        linear_backward(W(ParamLayout::kWfc), lc.a2.data(), dfc.data(), T, d, F, da2.data(), G(ParamLayout::kWfc));
        adapter_bwd(l, AdapterTarget::kMlpUp, dfc.data(), d, F, da2.data());
        std::vector<double> dx_mid = dx;
        layernorm_backward(da2.data(), T, d, W(ParamLayout::kLn2Gain).data.data(), lc.ln2, dx_mid.data(),
                           G(ParamLayout::kLn2Gain), G(ParamLayout::kLn2Bias));

        // Attention branch: x_mid = x_in + o(attn(ln1(x_in)))
        std::vector<double> dctx(Td, 0.0);
        linear_backward(W(ParamLayout::kWo), lc.ctx.data(), dx_mid.data(), T, d, d, dctx.data(), G(ParamLayout::kWo));
        adapter_bwd(l, AdapterTarget::kOutput, dx_mid.data(), d, d, dctx.data());

        std::vector<double> dq(Td, 0.0), dk(Td, 0.0), dv(Td, 0.0);
        std::vector<double> datt(T);
        for (int h = 0; h < H; ++h) {
            for (int t = 0; t < T; ++t) {
                const double* row = lc.att.data() + (static_cast<std::size_t>(h) * T + t) * T;
                const double* dct = dctx.data() + static_cast<std::size_t>(t) * d + h * dh;
                double dot = 0.0;
                for (int s = 0; s <= t; ++s) {
                    const double* vs = lc.v.data() + static_cast<std::size_t>(s) * d + h * dh;
                    double* dvs = dv.data() + static_cast<std::size_t>(s) * d + h * dh;
                    double acc = 0.0;
                    for (int e = 0; e < dh; ++e) {
                        acc += dct[e] * vs[e];
                        dvs[e] += row[s] * dct[e];
                    }
                    datt[s] = acc;
                    dot += row[s] * acc;
                }
                const double* qt = lc.q.data() + static_cast<std::size_t>(t) * d + h * dh;
                double* dqt = dq.data() + static_cast<std::size_t>(t) * d + h * dh;
                for (int s = 0; s <= t; ++s) {
                    const double ds = row[s] * (datt[s] - dot) * inv_sqrt_dh;
                    const double* ks = lc.k.data() + static_cast<std::size_t>(s) * d + h * dh;
                    double* dks = dk.data() + static_cast<std::size_t>(s) * d + h * dh;
                    for (int e = 0; e < dh; ++e) {
                        dqt[e] += ds * ks[e];
                        dks[e] += ds * qt[e];
                    }
                }
            }
        }

        std::vector<double> da1(Td, 0.0);
        linear_backward(W(ParamLayout::kWq), lc.a1.data(), dq.data(), T, d, d, da1.data(), G(ParamLayout::kWq));
        adapter_bwd(l, AdapterTarget::kQuery, dq.data(), d, d, da1.data());
        linear_backward(W(ParamLayout::kWk), lc.a1.data(), dk.data(), T, d, d, da1.data(), G(ParamLayout::kWk));
        adapter_bwd(l, AdapterTarget::kKey, dk.data(), d, d, da1.data());
        linear_backward(W(ParamLayout::kWv), lc.a1.data(), dv.data(), T, d, d, da1.data(), G(ParamLayout::kWv));
        adapter_bwd(l, AdapterTarget::kValue, dv.data(), d, d, da1.data());
        dx = std::move(dx_mid);
        layernorm_backward(da1.data(), T, d, W(ParamLayout::kLn1Gain).data.data(), lc.ln1, dx.data(),
                           G(ParamLayout::kLn1Gain), G(ParamLayout::kLn1Bias));
    }

    if (want_base) {
        double* dtok = grads.base[layout.tok_emb()].data();
        double* dpos = grads.base[layout.pos_emb()].data();
        for (int t = 0; t < T; ++t) {
            const auto tk = static_cast<std::size_t>(tp.tokens[t]);
            for (int j = 0; j < d; ++j) {
                dtok[tk * d + j] += dx[static_cast<std::size_t>(t) * d + j];
                dpos[static_cast<std::size_t>(t) * d + j] += dx[static_cast<std::size_t>(t) * d + j];
            }
        }
    }
}

GradientSet compute_gradients(const Policy& policy, std::span<const LossTerm> loss) {
    if (policy.adapters == nullptr) throw std::invalid_argument("compute_gradients: policy has no adapters");
    GradientSet g = GradientSet::for_adapters(*policy.adapters);
    for (const auto& term : loss) backward(policy, *term.scored, term.upstream, g);
    if (!g.all_finite()) throw NonFiniteError("non-finite adapter gradient");
    return g;
}

// ---------------------------------------------------------------------------
// Pretraining

double corpus_cross_entropy(const ParameterSet& params, std::span<const TokenSeq> corpus) {
    double nll = 0.0;
    std::size_t count = 0;
    const Policy policy{&params, nullptr};
    for (const auto& seq : corpus) {
        if (seq.size() < 2) continue;
        const std::span<const Token> s(seq);
        const auto scored = score_completion(policy, s.first(1), s.subspan(1));
        nll -= scored.logprob;
        count += static_cast<std::size_t>(scored.tape->seq_len - 1);
    }
    if (count == 0) throw std::invalid_argument("corpus_cross_entropy: no scorable tokens");
    return nll / static_cast<double>(count);
}

ParameterSet pretrain_base(const ParameterSet& params, std::span<const TokenSeq> corpus, const PretrainOptions& options) {
    ParameterSet out = params;
    if (options.steps == 0) return out;
    if (corpus.empty()) throw std::invalid_argument("pretrain_base: empty corpus");
    for (const auto& seq : corpus) {
        if (seq.size() < 2 || seq.size() > static_cast<std::size_t>(params.config.context_len)) {
            throw SequenceError("pretrain_base: corpus sequence of length " + std::to_string(seq.size()) +
                                " does not fit context_len " + std::to_string(params.config.context_len));
        }
    }
    OptimizerConfig oc;
    oc.weight_decay = 0.0;
    Optimizer opt(oc);
    std::vector<Tensor*> tensors;
    for (auto& t : out.tensors) tensors.push_back(&t);
    CounterRng rng(CounterRng::mix64(options.seed) ^ 0x9E7A1ULL);
    GradientSet grads = GradientSet::for_base(out);
    const Policy policy{&out, nullptr};
    for (std::size_t step = 0; step < options.steps; ++step) {
        grads.zero();
        double loss = 0.0;
        for (std::size_t b = 0; b < options.batch_size; ++b) {
            const auto& seq = corpus[rng.uniform_index(corpus.size())];
            const std::span<const Token> s(seq);
            const auto scored = score_completion(policy, s.first(1), s.subspan(1));
            const double n_tok = static_cast<double>(scored.tape->seq_len - 1);
            const double weight = 1.0 / (n_tok * static_cast<double>(options.batch_size));
            loss -= scored.logprob * weight;
            backward(policy, scored, -weight, grads);
        }
        if (!std::isfinite(loss)) {
            throw NonFiniteError("pretrain_base: non-finite loss at step " + std::to_string(step));
        }
        if (!grads.all_finite()) {
            throw NonFiniteError("pretrain_base: non-finite gradient at step " + std::to_string(step));
        }
        opt.step(tensors, grads.base, options.lr);
    }
    return out;
}

}  // namespace phaselab
