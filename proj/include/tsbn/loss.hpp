#pragma once

#include <vector>

#include "tsbn/tensor.hpp"

namespace tsbn {

// Row-wise stabilized softmax in double precision.
std::vector<double> softmax_row(const float* logits, int k);

struct CrossEntropyResult {
    double loss = 0.0;
    Tensor logit_grad;  // (softmax - onehot) / N
};

// logits: N x K, targets: N class indices in [0, K).
// loss = mean over the batch of -log softmax(logits)[target].
CrossEntropyResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets);

}  // namespace tsbn
