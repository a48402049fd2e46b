#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "phaselab/model.hpp"

namespace phaselab {

enum class OptimizerKind { kAdamW, kSgd };

std::string_view optimizer_name(OptimizerKind k);
OptimizerKind optimizer_from_name(std::string_view name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::kAdamW;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    bool operator==(const OptimizerConfig&) const = default;
};

// Updates float32 master weights from double gradients; moments are kept in double.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config) : config_(config) {}

    void step(std::span<Tensor* const> params, const std::vector<std::vector<double>>& grads, double lr);
    long steps_taken() const { return t_; }

private:
    OptimizerConfig config_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    long t_ = 0;
};

}  // namespace phaselab
