#include "tsbn/layers.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace tsbn {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

namespace {

int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Unrolls the input batch into a (Cin*K*K) x (N*Ho*Wo) matrix; column
// index is n*Ho*Wo + ho*Wo + wo.
void im2col(const Tensor& input, int k, int stride, int pad, int ho, int wo, MatrixRM& cols) {
    const int n_batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    cols.setZero(cin * k * k, static_cast<Eigen::Index>(n_batch) * ho * wo);
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < cin; ++c) {
            for (int kh = 0; kh < k; ++kh) {
                for (int kw = 0; kw < k; ++kw) {
                    const int row = (c * k + kh) * k + kw;
                    for (int oh = 0; oh < ho; ++oh) {
                        const int ih = oh * stride + kh - pad;
                        if (ih < 0 || ih >= h) continue;
                        for (int ow = 0; ow < wo; ++ow) {
                            const int iw = ow * stride + kw - pad;
                            if (iw < 0 || iw >= w) continue;
                            cols(row, static_cast<Eigen::Index>(n) * ho * wo + oh * wo + ow) =
                                input.at4(n, c, ih, iw);
                        }
                    }
                }
            }
        }
    }
}

void col2im_accumulate(const MatrixRM& cols, int k, int stride, int pad, int ho, int wo,
                       Tensor& out) {
    const int n_batch = out.dim(0), cin = out.dim(1), h = out.dim(2), w = out.dim(3);
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < cin; ++c) {
            for (int kh = 0; kh < k; ++kh) {
                for (int kw = 0; kw < k; ++kw) {
                    const int row = (c * k + kh) * k + kw;
                    for (int oh = 0; oh < ho; ++oh) {
                        const int ih = oh * stride + kh - pad;
                        if (ih < 0 || ih >= h) continue;
                        for (int ow = 0; ow < wo; ++ow) {
                            const int iw = ow * stride + kw - pad;
                            if (iw < 0 || iw >= w) continue;
                            out.at4(n, c, ih, iw) +=
                                cols(row, static_cast<Eigen::Index>(n) * ho * wo + oh * wo + ow);
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Parameter& kernels, int stride, int pad,
                      Conv2dCache* cache) {
    detail::require(input.rank() == 4, "conv2d expects NCHW input, got shape " + shape_str(input.shape));
    detail::require(kernels.value.rank() == 4,
                    "conv2d expects Cout x Cin x K x K kernels, got shape " + shape_str(kernels.value.shape));
    const int cout = kernels.value.dim(0), cin = kernels.value.dim(1), k = kernels.value.dim(2);
    detail::require(kernels.value.dim(3) == k, "conv2d kernels must be square");
    detail::require(input.dim(1) == cin,
                    "conv2d channel mismatch: input has " + std::to_string(input.dim(1)) +
                        " channels, kernels expect " + std::to_string(cin));
    detail::require(stride >= 1 && pad >= 0, "conv2d stride must be >= 1 and padding >= 0");
    const int n_batch = input.dim(0);
    const int ho = conv_out_dim(input.dim(2), k, stride, pad);
    const int wo = conv_out_dim(input.dim(3), k, stride, pad);
    detail::require(ho >= 1 && wo >= 1, "conv2d kernel larger than padded input");

    MatrixRM cols;
    im2col(input, k, stride, pad, ho, wo, cols);
    ConstMapRM weights(kernels.value.data.data(), cout, cin * k * k);
    MatrixRM prod = weights * cols;  // cout x (N*Ho*Wo)

    Tensor out({n_batch, cout, ho, wo});
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < cout; ++c) {
            const float* src = prod.row(c).data() + static_cast<int64_t>(n) * ho * wo;
            float* dst = &out.at4(n, c, 0, 0);
            std::copy(src, src + static_cast<int64_t>(ho) * wo, dst);
        }
    }
    if (cache) {
        cache->input = input;
        cache->stride = stride;
        cache->pad = pad;
    }
    return out;
}

Tensor conv2d_backward(const Tensor& upstream, const Conv2dCache& cache, Parameter& kernels) {
    const Tensor& input = cache.input;
    const int cout = kernels.value.dim(0), cin = kernels.value.dim(1), k = kernels.value.dim(2);
    const int n_batch = input.dim(0);
    const int ho = upstream.dim(2), wo = upstream.dim(3);
    detail::require(upstream.dim(0) == n_batch && upstream.dim(1) == cout,
                    "conv2d backward shape mismatch for upstream " + shape_str(upstream.shape));

    MatrixRM up(cout, static_cast<Eigen::Index>(n_batch) * ho * wo);
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < cout; ++c) {
            const float* src = &upstream.at4(n, c, 0, 0);
            std::copy(src, src + static_cast<int64_t>(ho) * wo,
                      up.row(c).data() + static_cast<int64_t>(n) * ho * wo);
        }
    }

    MatrixRM cols;
    im2col(input, k, cache.stride, cache.pad, ho, wo, cols);

    if (kernels.trainable) {
        MapRM kgrad(kernels.grad.data.data(), cout, cin * k * k);
        kgrad.noalias() += up * cols.transpose();
    }

    ConstMapRM weights(kernels.value.data.data(), cout, cin * k * k);
    MatrixRM dcols = weights.transpose() * up;

    Tensor input_grad(input.shape);
    col2im_accumulate(dcols, k, cache.stride, cache.pad, ho, wo, input_grad);
    return input_grad;
}

// ---------------------------------------------------------------- batchnorm

BatchNormState::BatchNormState(int channels) {
    detail::require(channels > 0, "batchnorm channel count must be positive");
    gamma = Parameter(Tensor::full({channels}, 1.0f));
    beta = Parameter(Tensor({channels}));
    running_mean = Tensor({channels});
    running_var = Tensor::full({channels}, 1.0f);
}

Tensor batchnorm_forward(const Tensor& batch, BatchNormState& state, BatchNormCache* cache) {
    detail::require(batch.rank() == 4, "batchnorm expects NCHW input, got " + shape_str(batch.shape));
    const int n_batch = batch.dim(0), channels = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    detail::require(channels == state.channels(),
                    "batchnorm channel mismatch: input has " + std::to_string(channels) +
                        ", state has " + std::to_string(state.channels()));
    const int64_t per_channel = static_cast<int64_t>(n_batch) * h * w;
    const int64_t spatial = static_cast<int64_t>(h) * w;

    Tensor out(batch.shape);
    const float* gamma = state.gamma.value.data.data();
    const float* beta = state.beta.value.data.data();

    if (state.mode == BnMode::Eval) {
        for (int c = 0; c < channels; ++c) {
            const float inv = 1.0f / std::sqrt(state.running_var[c] + state.epsilon);
            const float mean = state.running_mean[c];
            for (int n = 0; n < n_batch; ++n) {
                const float* src = &batch.at4(n, c, 0, 0);
                float* dst = &out.at4(n, c, 0, 0);
                for (int64_t i = 0; i < spatial; ++i) {
                    dst[i] = gamma[c] * (src[i] - mean) * inv + beta[c];
                }
            }
        }
        if (cache) {
            cache->from_train_mode = false;
            cache->x_hat = Tensor();
            cache->inv_std.clear();
        }
        return out;
    }

    detail::require(per_channel >= 2,
                    "batchnorm train mode needs at least 2 elements per channel for a defined "
                    "variance, got " + std::to_string(per_channel));

    Tensor x_hat(batch.shape);
    std::vector<float> inv_std(static_cast<size_t>(channels));
    for (int c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (int n = 0; n < n_batch; ++n) {
            const float* src = &batch.at4(n, c, 0, 0);
            for (int64_t i = 0; i < spatial; ++i) sum += src[i];
        }
        const double mean = sum / static_cast<double>(per_channel);
        double sq = 0.0;
        for (int n = 0; n < n_batch; ++n) {
            const float* src = &batch.at4(n, c, 0, 0);
            for (int64_t i = 0; i < spatial; ++i) {
                const double d = src[i] - mean;
                sq += d * d;
            }
        }
        const double var = sq / static_cast<double>(per_channel);  // population variance
        const float inv = static_cast<float>(1.0 / std::sqrt(var + state.epsilon));
        inv_std[static_cast<size_t>(c)] = inv;
        const float meanf = static_cast<float>(mean);
        for (int n = 0; n < n_batch; ++n) {
            const float* src = &batch.at4(n, c, 0, 0);
            float* xh = &x_hat.at4(n, c, 0, 0);
            float* dst = &out.at4(n, c, 0, 0);
            for (int64_t i = 0; i < spatial; ++i) {
                xh[i] = (src[i] - meanf) * inv;
                dst[i] = gamma[c] * xh[i] + beta[c];
            }
        }
        state.running_mean[c] =
            (1.0f - state.momentum) * state.running_mean[c] + state.momentum * meanf;
        state.running_var[c] =
            (1.0f - state.momentum) * state.running_var[c] + state.momentum * static_cast<float>(var);
    }
    if (cache) {
        cache->from_train_mode = true;
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

BatchNormBackwardResult batchnorm_backward(const Tensor& upstream, const BatchNormCache& cache,
                                           const BatchNormState& state) {
    detail::require(cache.from_train_mode,
                    "batchnorm backward requires a cache from a train-mode forward");
    detail::require(upstream.same_shape(cache.x_hat),
                    "batchnorm backward shape mismatch for upstream " + shape_str(upstream.shape));
    const int n_batch = upstream.dim(0), channels = upstream.dim(1), h = upstream.dim(2),
              w = upstream.dim(3);
    const int64_t per_channel = static_cast<int64_t>(n_batch) * h * w;
    const int64_t spatial = static_cast<int64_t>(h) * w;

    BatchNormBackwardResult r;
    r.input_grad = Tensor(upstream.shape);
    r.gamma_grad = Tensor({channels});
    r.beta_grad = Tensor({channels});

    for (int c = 0; c < channels; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < n_batch; ++n) {
            const float* dy = &upstream.at4(n, c, 0, 0);
            const float* xh = &cache.x_hat.at4(n, c, 0, 0);
            for (int64_t i = 0; i < spatial; ++i) {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xh[i];
            }
        }
        r.beta_grad[c] = static_cast<float>(sum_dy);
        r.gamma_grad[c] = static_cast<float>(sum_dy_xhat);

        const float g = state.gamma.value[c];
        const float inv = cache.inv_std[static_cast<size_t>(c)];
        const float m = static_cast<float>(per_channel);
        const float mean_dy = static_cast<float>(sum_dy) / m;
        const float mean_dy_xhat = static_cast<float>(sum_dy_xhat) / m;
        for (int n = 0; n < n_batch; ++n) {
            const float* dy = &upstream.at4(n, c, 0, 0);
            const float* xh = &cache.x_hat.at4(n, c, 0, 0);
            float* dx = &r.input_grad.at4(n, c, 0, 0);
            for (int64_t i = 0; i < spatial; ++i) {
                dx[i] = g * inv * (dy[i] - mean_dy - xh[i] * mean_dy_xhat);
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------- relu

Tensor relu_forward(const Tensor& x, Tensor* mask_cache) {
    Tensor out(x.shape);
    Tensor mask(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) {
        if (x[i] > 0.0f) {
            out[i] = x[i];
            mask[i] = 1.0f;
        }
    }
    if (mask_cache) *mask_cache = std::move(mask);
    return out;
}

Tensor relu_backward(const Tensor& upstream, const Tensor& mask) {
    detail::require(upstream.same_shape(mask), "relu backward shape mismatch");
    Tensor out(upstream.shape);
    for (int64_t i = 0; i < upstream.numel(); ++i) out[i] = upstream[i] * mask[i];
    return out;
}

// ---------------------------------------------------------------- maxpool

Tensor maxpool_forward(const Tensor& x, int ksize, int stride, int pad, MaxPoolCache* cache) {
    detail::require(x.rank() == 4, "maxpool expects NCHW input, got " + shape_str(x.shape));
    detail::require(ksize >= 1 && stride >= 1 && pad >= 0 && pad < ksize,
                    "maxpool needs ksize >= 1, stride >= 1, 0 <= pad < ksize");
    const int n_batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = (h + 2 * pad - ksize) / stride + 1;
    const int wo = (w + 2 * pad - ksize) / stride + 1;
    detail::require(ho >= 1 && wo >= 1, "maxpool window larger than padded input");

    Tensor out({n_batch, channels, ho, wo});
    std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));
    int64_t oi = 0;
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            for (int oh = 0; oh < ho; ++oh) {
                for (int ow = 0; ow < wo; ++ow, ++oi) {
                    float best = -std::numeric_limits<float>::infinity();
                    int64_t best_idx = -1;
                    for (int kh = 0; kh < ksize; ++kh) {
                        const int ih = oh * stride + kh - pad;
                        if (ih < 0 || ih >= h) continue;
                        for (int kw = 0; kw < ksize; ++kw) {
                            const int iw = ow * stride + kw - pad;
                            if (iw < 0 || iw >= w) continue;
                            const float v = x.at4(n, c, ih, iw);
                            if (v > best) {
                                best = v;
                                best_idx = ((static_cast<int64_t>(n) * channels + c) * h + ih) * w + iw;
                            }
                        }
                    }
                    out[oi] = best;
                    argmax[static_cast<size_t>(oi)] = best_idx;
                }
            }
        }
    }
    if (cache) {
        cache->argmax = std::move(argmax);
        cache->in_shape = x.shape;
    }
    return out;
}

Tensor maxpool_backward(const Tensor& upstream, const MaxPoolCache& cache) {
    detail::require(upstream.numel() == static_cast<int64_t>(cache.argmax.size()),
                    "maxpool backward cache mismatch");
    Tensor out(cache.in_shape);
    for (int64_t i = 0; i < upstream.numel(); ++i) {
        out[cache.argmax[static_cast<size_t>(i)]] += upstream[i];
    }
    return out;
}

// ---------------------------------------------------------------- global average pool

Tensor global_avgpool_forward(const Tensor& x, std::vector<int>* in_shape_cache) {
    detail::require(x.rank() == 4, "global_avgpool expects NCHW input, got " + shape_str(x.shape));
    const int n_batch = x.dim(0), channels = x.dim(1);
    const int64_t spatial = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    Tensor out({n_batch, channels});
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            double sum = 0.0;
            const float* src = &x.at4(n, c, 0, 0);
            for (int64_t i = 0; i < spatial; ++i) sum += src[i];
            out.at2(n, c) = static_cast<float>(sum / static_cast<double>(spatial));
        }
    }
    if (in_shape_cache) *in_shape_cache = x.shape;
    return out;
}

Tensor global_avgpool_backward(const Tensor& upstream, const std::vector<int>& in_shape) {
    detail::require(upstream.rank() == 2, "global_avgpool backward expects N x C upstream");
    Tensor out(in_shape);
    const int n_batch = in_shape[0], channels = in_shape[1];
    const int64_t spatial = static_cast<int64_t>(in_shape[2]) * in_shape[3];
    const float scale = 1.0f / static_cast<float>(spatial);
    for (int n = 0; n < n_batch; ++n) {
        for (int c = 0; c < channels; ++c) {
            const float g = upstream.at2(n, c) * scale;
            float* dst = &out.at4(n, c, 0, 0);
            for (int64_t i = 0; i < spatial; ++i) dst[i] = g;
        }
    }
    return out;
}

// ---------------------------------------------------------------- linear

Tensor linear_forward(const Tensor& x, const Parameter& weight, const Parameter& bias,
                      LinearCache* cache) {
    detail::require(x.rank() == 2, "linear expects N x d input, got " + shape_str(x.shape));
    const int n_batch = x.dim(0), d = x.dim(1);
    const int k = weight.value.dim(0);
    detail::require(weight.value.rank() == 2 && weight.value.dim(1) == d,
                    "linear weight shape " + shape_str(weight.value.shape) +
                        " incompatible with input " + shape_str(x.shape));
    detail::require(bias.value.rank() == 1 && bias.value.dim(0) == k,
                    "linear bias shape " + shape_str(bias.value.shape) + " must be (" +
                        std::to_string(k) + ")");

    ConstMapRM xm(x.data.data(), n_batch, d);
    ConstMapRM wm(weight.value.data.data(), k, d);
    Tensor out({n_batch, k});
    MapRM om(out.data.data(), n_batch, k);
    om.noalias() = xm * wm.transpose();
    for (int n = 0; n < n_batch; ++n) {
        for (int j = 0; j < k; ++j) out.at2(n, j) += bias.value[j];
    }
    if (cache) cache->input = x;
    return out;
}

Tensor linear_backward(const Tensor& upstream, const LinearCache& cache, Parameter& weight,
                       Parameter& bias) {
    const Tensor& x = cache.input;
    const int n_batch = x.dim(0), d = x.dim(1);
    const int k = weight.value.dim(0);
    detail::require(upstream.rank() == 2 && upstream.dim(0) == n_batch && upstream.dim(1) == k,
                    "linear backward shape mismatch for upstream " + shape_str(upstream.shape));

    ConstMapRM um(upstream.data.data(), n_batch, k);
    ConstMapRM xm(x.data.data(), n_batch, d);
    if (weight.trainable) {
        MapRM wg(weight.grad.data.data(), k, d);
        wg.noalias() += um.transpose() * xm;
    }
    if (bias.trainable) {
        for (int n = 0; n < n_batch; ++n) {
            for (int j = 0; j < k; ++j) bias.grad[j] += upstream.at2(n, j);
        }
    }
    ConstMapRM wm(weight.value.data.data(), k, d);
    Tensor input_grad({n_batch, d});
    MapRM ig(input_grad.data.data(), n_batch, d);
    ig.noalias() = um * wm;
    return input_grad;
}

}  // namespace tsbn
