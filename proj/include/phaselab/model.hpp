#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "phaselab/micro_language.hpp"
#include "phaselab/rng.hpp"

namespace phaselab {

// Raised whenever a loss or gradient stops being finite. Callers that own a
// run (trainer, orchestrator) convert it into a failed-run status.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SequenceError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
    int vocab_size = 64;
    int context_len = 32;
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 2;

    int d_ff() const { return 4 * d_model; }
    int head_dim() const { return d_model / n_heads; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct Tensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::string n, std::vector<int> s);

    std::size_t numel() const { return data.size(); }
    bool operator==(const Tensor&) const = default;
};

// Base-model weights. Matrices are stored [d_out, d_in], row-major.
// Tensor order is fixed by `ParamLayout` and is part of the checkpoint format.
struct ParameterSet {
    ModelConfig config;
    std::vector<Tensor> tensors;

    // Hex SHA-256 of the canonical checkpoint encoding (header + payload).
    std::string content_hash() const;
    const Tensor& at(std::string_view name) const;
    bool all_finite() const;
    bool operator==(const ParameterSet&) const = default;
};

struct ParamLayout {
    static constexpr int kPerLayer = 10;
    enum LayerSlot { kLn1Gain, kLn1Bias, kWq, kWk, kWv, kWo, kLn2Gain, kLn2Bias, kWfc, kWproj };

    int n_layers;
    int tok_emb() const { return 0; }
    int pos_emb() const { return 1; }
    int layer(int l, LayerSlot slot) const { return 2 + l * kPerLayer + slot; }
    int lnf_gain() const { return 2 + n_layers * kPerLayer; }
    int lnf_bias() const { return lnf_gain() + 1; }
    int w_out() const { return lnf_gain() + 2; }
    int count() const { return w_out() + 1; }
};

// Matrices an adapter can attach to.
enum class AdapterTarget { kQuery, kKey, kValue, kOutput, kMlpUp, kMlpDown };

std::string_view target_name(AdapterTarget t);
AdapterTarget target_from_name(std::string_view name);

struct AdapterConfig {
    int rank = 8;
    double alpha = 16.0;
    double dropout = 0.05;
    std::vector<AdapterTarget> targets{AdapterTarget::kQuery, AdapterTarget::kValue};

    double scale() const { return alpha / rank; }
    void validate() const;
    bool operator==(const AdapterConfig&) const = default;
};

// Low-rank pair for one matrix: delta W = scale * B * A, A is [rank, d_in], B is [d_out, rank].
struct AdapterPair {
    int layer = 0;
    AdapterTarget target = AdapterTarget::kQuery;
    Tensor a;
    Tensor b;
    bool operator==(const AdapterPair&) const = default;
};

struct AdapterSet {
    AdapterConfig config;
    std::vector<AdapterPair> pairs;

    // Flat view in (A, B) order per pair; optimizer and gradients share this order.
    std::vector<Tensor*> tensors();
    std::vector<const Tensor*> tensors() const;
    bool all_finite() const;
    bool operator==(const AdapterSet&) const = default;
};

// Read-only view of a scorable policy: base weights plus optional adapters.
struct Policy {
    const ParameterSet* base = nullptr;
    const AdapterSet* adapters = nullptr;
};

// Trainable adapters over a frozen, shared base. The base doubles as the
// reference policy, so the two can never diverge.
struct PolicyPair {
    std::shared_ptr<const ParameterSet> reference;
    AdapterSet adapters;

    Policy theta() const { return {reference.get(), &adapters}; }
    Policy ref() const { return {reference.get(), nullptr}; }
};

ParameterSet init_base(const ModelConfig& config, std::uint64_t seed);
AdapterSet init_adapters(const ModelConfig& config, const AdapterConfig& adapter, CounterRng& rng);
PolicyPair make_policy_pair(std::shared_ptr<const ParameterSet> base, const AdapterConfig& adapter, CounterRng& rng);

struct ForwardTape;

// Result of scoring prompt ++ completion. The tape keeps every activation the
// backward pass needs; it is only valid while the policy it came from is alive
// and unmodified.
struct ScoredSequence {
    double logprob = 0.0;
    int completion_tokens = 0;  // after <end> masking
    std::shared_ptr<const ForwardTape> tape;
};

// Teacher-forced sum of completion log-probabilities. Completion tokens after
// the first <end> are masked out. `dropout` non-null enables adapter dropout
// with masks drawn from it in a fixed order.
ScoredSequence score_completion(const Policy& policy, std::span<const Token> prompt, std::span<const Token> completion,
                                CounterRng* dropout = nullptr);

double completion_logprob(const Policy& policy, std::span<const Token> prompt, std::span<const Token> completion);

// Gradients aligned with ParameterSet::tensors (base) and AdapterSet::tensors()
// (adapter). An empty side is not computed.
struct GradientSet {
    std::vector<std::vector<double>> base;
    std::vector<std::vector<double>> adapter;

    static GradientSet for_adapters(const AdapterSet& adapters);
    static GradientSet for_base(const ParameterSet& params);
    void zero();
    bool all_finite() const;
};

// One term of a scalar loss: loss += f(logprob) with dloss/dlogprob = `upstream`.
struct LossTerm {
    const ScoredSequence* scored;
    double upstream;
};

// Reverse-mode pass accumulating into `grads`.
void backward(const Policy& policy, const ScoredSequence& scored, double upstream, GradientSet& grads);

// Gradient of a loss over adapter tensors only. Throws NonFiniteError.
GradientSet compute_gradients(const Policy& policy, std::span<const LossTerm> loss);

// Mean per-token next-token cross-entropy (nats) over the corpus; the first
// token of each sequence is context only.
double corpus_cross_entropy(const ParameterSet& params, std::span<const TokenSeq> corpus);

struct PretrainOptions {
    std::size_t steps = 500;
    double lr = 3e-3;
    std::uint64_t seed = 1;
    std::size_t batch_size = 8;
};

// Full-parameter AdamW on next-token cross-entropy. 0 steps is the identity.
ParameterSet pretrain_base(const ParameterSet& params, std::span<const TokenSeq> corpus, const PretrainOptions& options);

}  // namespace phaselab
