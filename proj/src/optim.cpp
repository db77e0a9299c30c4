#include "tsbn/optim.hpp"

#include <cmath>

namespace tsbn {

void validate_sgd_config(const SGDConfig& cfg) {
    detail::require(cfg.learning_rate > 0.0f, "sgd learning_rate must be > 0");
    detail::require(cfg.momentum >= 0.0f && cfg.momentum < 1.0f, "sgd momentum must be in [0,1)");
    detail::require(cfg.weight_decay >= 0.0f, "sgd weight_decay must be >= 0");
    detail::require(cfg.decay_factor > 0.0f && cfg.decay_factor < 1.0f,
                    "sgd decay_factor must be in (0,1)");
    for (size_t i = 1; i < cfg.milestones.size(); ++i) {
        detail::require(cfg.milestones[i] > cfg.milestones[i - 1],
                        "sgd milestones must be strictly increasing");
    }
}

double scheduled_lr(const SGDConfig& cfg, int epoch) {
    int drops = 0;
    for (int m : cfg.milestones) {
        if (m <= epoch) ++drops;
    }
    return static_cast<double>(cfg.learning_rate) * std::pow(static_cast<double>(cfg.decay_factor), drops);
}

SgdOptimizer::SgdOptimizer(SGDConfig cfg) : cfg_(std::move(cfg)) {
    validate_sgd_config(cfg_);
}

void SgdOptimizer::add_param(Parameter* p, bool apply_weight_decay) {
    entries_.push_back({p, Tensor(p->value.shape), apply_weight_decay});
}

void SgdOptimizer::step(int epoch) {
    const float lr = static_cast<float>(scheduled_lr(cfg_, epoch));
    for (Entry& e : entries_) {
        if (!e.param->trainable) continue;
        const float wd = e.decay ? cfg_.weight_decay : 0.0f;
        Tensor& v = e.velocity;
        Tensor& val = e.param->value;
        const Tensor& g = e.param->grad;
        for (int64_t i = 0; i < val.numel(); ++i) {
            v[i] = cfg_.momentum * v[i] + g[i] + wd * val[i];
            val[i] -= lr * v[i];
        }
    }
}

void SgdOptimizer::zero_grad() {
    for (Entry& e : entries_) e.param->zero_grad();
}

}  // namespace tsbn
