#pragma once

#include <vector>

#include "tsbn/tensor.hpp"

namespace tsbn {

struct SGDConfig {
    float learning_rate = 0.01f;
    float momentum = 0.9f;
    float weight_decay = 0.0f;
    std::vector<int> milestones;  // strictly increasing epoch indices
    float decay_factor = 0.1f;
};

void validate_sgd_config(const SGDConfig& cfg);

// lr(epoch) = base * decay_factor ^ (number of milestones <= epoch)
double scheduled_lr(const SGDConfig& cfg, int epoch);

// Momentum SGD over registered parameters:
//   v <- momentum * v + grad + weight_decay * value
//   value <- value - lr(epoch) * v
// Parameters with trainable == false are never modified. Weight decay applies
// only to parameters registered with apply_weight_decay (conv/linear weights;
// never BN gamma/beta or biases).
class SgdOptimizer {
public:
    explicit SgdOptimizer(SGDConfig cfg);

    void add_param(Parameter* p, bool apply_weight_decay);
    void step(int epoch);
    void zero_grad();
    const SGDConfig& config() const { return cfg_; }

private:
    struct Entry {
        Parameter* param;
        Tensor velocity;
        bool decay;
    };
    SGDConfig cfg_;
    std::vector<Entry> entries_;
};

}  // namespace tsbn
