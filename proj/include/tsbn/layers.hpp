#pragma once

#include <vector>

#include "tsbn/tensor.hpp"

namespace tsbn {

// ---------------------------------------------------------------- conv2d

struct Conv2dCache {
    Tensor input;
    int stride = 1;
    int pad = 0;
};

// input: N x Cin x H x W, kernels: Cout x Cin x K x K (no bias; a BN site
// or an explicit bias layer follows every conv in the supported specs).
Tensor conv2d_forward(const Tensor& input, const Parameter& kernels, int stride, int pad,
                      Conv2dCache* cache = nullptr);

// Returns the input gradient. Kernel gradients are accumulated into
// kernels.grad only when kernels.trainable is set.
Tensor conv2d_backward(const Tensor& upstream, const Conv2dCache& cache, Parameter& kernels);

// ---------------------------------------------------------------- batchnorm

enum class BnMode { Train, Eval };

struct BatchNormState {
    Parameter gamma;
    Parameter beta;
    Tensor running_mean;
    Tensor running_var;
    float epsilon = 1e-5f;
    float momentum = 0.1f;
    BnMode mode = BnMode::Train;

    BatchNormState() = default;
    explicit BatchNormState(int channels);
    int channels() const { return gamma.value.dim(0); }
};

struct BatchNormCache {
    Tensor x_hat;                  // normalized values before gamma/beta
    std::vector<float> inv_std;    // per channel, 1/sqrt(var + eps)
    bool from_train_mode = false;
};

// Train mode: normalize with batch statistics over all N*H*W elements per
// channel (population variance) and update running stats as
// running <- (1 - momentum) * running + momentum * batch_stat.
// Eval mode: normalize with running stats, no state mutation.
Tensor batchnorm_forward(const Tensor& batch, BatchNormState& state, BatchNormCache* cache = nullptr);

struct BatchNormBackwardResult {
    Tensor input_grad;
    Tensor gamma_grad;
    Tensor beta_grad;
};

BatchNormBackwardResult batchnorm_backward(const Tensor& upstream, const BatchNormCache& cache,
                                           const BatchNormState& state);

// ---------------------------------------------------------------- relu

Tensor relu_forward(const Tensor& x, Tensor* mask_cache = nullptr);
Tensor relu_backward(const Tensor& upstream, const Tensor& mask);

// ---------------------------------------------------------------- maxpool

struct MaxPoolCache {
    std::vector<int64_t> argmax;  // flat input index of each output element
    std::vector<int> in_shape;
};

Tensor maxpool_forward(const Tensor& x, int ksize, int stride, int pad = 0,
                       MaxPoolCache* cache = nullptr);
Tensor maxpool_backward(const Tensor& upstream, const MaxPoolCache& cache);

// ---------------------------------------------------------------- global average pool

// N x C x H x W -> N x C
Tensor global_avgpool_forward(const Tensor& x, std::vector<int>* in_shape_cache = nullptr);
Tensor global_avgpool_backward(const Tensor& upstream, const std::vector<int>& in_shape);

// ---------------------------------------------------------------- linear

struct LinearCache {
    Tensor input;
};

// x: N x d, weight: K x d, bias: K  ->  N x K
Tensor linear_forward(const Tensor& x, const Parameter& weight, const Parameter& bias,
                      LinearCache* cache = nullptr);
Tensor linear_backward(const Tensor& upstream, const LinearCache& cache, Parameter& weight,
                       Parameter& bias);

}  // namespace tsbn
