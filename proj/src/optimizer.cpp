#include "phaselab/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace phaselab {

std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::kAdamW ? "adamw" : "sgd"; }

OptimizerKind optimizer_from_name(std::string_view name) {
    if (name == "adamw") return OptimizerKind::kAdamW;
    if (name == "sgd") return OptimizerKind::kSgd;
    throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

void Optimizer::step(std::span<Tensor* const> params, const std::vector<std::vector<double>>& grads, double lr) {
    if (params.size() != grads.size()) throw std::invalid_argument("optimizer: params/grads size mismatch");
    ++t_;
    if (config_.kind == OptimizerKind::kSgd) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& w = params[i]->data;
            for (std::size_t j = 0; j < w.size(); ++j) {
                w[j] = static_cast<float>(static_cast<double>(w[j]) - lr * grads[i][j]);
            }
        }
        return;
    }
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i]->numel(), 0.0);
            v_[i].assign(params[i]->numel(), 0.0);
        }
    }
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = params[i]->data;
        auto& m = m_[i];
        auto& v = v_[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            double p = static_cast<double>(w[j]);
            p -= lr * config_.weight_decay * p;
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p -= lr * mhat / (std::sqrt(vhat) + config_.eps);
            w[j] = static_cast<float>(p);
        }
    }
}

}  // namespace phaselab
