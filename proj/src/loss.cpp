#include "tsbn/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tsbn {

std::vector<double> softmax_row(const float* logits, int k) {
    double mx = logits[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
    std::vector<double> p(static_cast<size_t>(k));
    double denom = 0.0;
    for (int j = 0; j < k; ++j) {
        p[static_cast<size_t>(j)] = std::exp(static_cast<double>(logits[j]) - mx);
        denom += p[static_cast<size_t>(j)];
    }
    for (int j = 0; j < k; ++j) p[static_cast<size_t>(j)] /= denom;
    return p;
}

CrossEntropyResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    detail::require(logits.rank() == 2,
                    "cross entropy expects N x K logits, got " + shape_str(logits.shape));
    const int n_batch = logits.dim(0), k = logits.dim(1);
    detail::require(static_cast<int>(targets.size()) == n_batch,
                    "cross entropy target count " + std::to_string(targets.size()) +
                        " does not match batch size " + std::to_string(n_batch));

    CrossEntropyResult r;
    r.logit_grad = Tensor(logits.shape);
    double total = 0.0;
    for (int n = 0; n < n_batch; ++n) {
        const int t = targets[static_cast<size_t>(n)];
        if (t < 0 || t >= k) {
            throw std::out_of_range("cross entropy target " + std::to_string(t) +
                                    " out of range [0," + std::to_string(k) + ")");
        }
        const std::vector<double> p = softmax_row(&logits.data[static_cast<size_t>(n) * k], k);
        total += -std::log(std::max(p[static_cast<size_t>(t)], 1e-300));
        for (int j = 0; j < k; ++j) {
            const double grad = (p[static_cast<size_t>(j)] - (j == t ? 1.0 : 0.0)) / n_batch;
            r.logit_grad.at2(n, j) = static_cast<float>(grad);
        }
    }
    r.loss = total / n_batch;
    return r;
}

}  // namespace tsbn
