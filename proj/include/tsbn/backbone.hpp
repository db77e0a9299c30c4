#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsbn/layers.hpp"
#include "tsbn/tensor.hpp"

namespace tsbn {

// A backbone is a straight-line program over one "current" activation plus
// numbered slots. Save/Restore/Add express residual blocks:
//   identity block: save(0) conv bn relu conv bn add(0) relu
//   downsample:     save(0) conv bn relu conv bn save(1) restore(0)
//                   conv1x1 bn add(1) relu
enum class LayerKind { Conv, BatchNorm, ReLU, MaxPool, GlobalAvgPool, Save, Restore, Add };

struct LayerSpec {
    LayerKind kind = LayerKind::ReLU;
    int out_channels = 0, ksize = 0, stride = 1, pad = 0;  // Conv
    int pool_size = 0, pool_stride = 1, pool_pad = 0;      // MaxPool
    int slot = 0;                                          // Save / Restore / Add

    static LayerSpec conv(int out_ch, int k, int s = 1, int p = 0);
    static LayerSpec batchnorm();
    static LayerSpec relu();
    static LayerSpec maxpool(int k, int s, int p = 0);
    static LayerSpec global_avgpool();
    static LayerSpec save(int slot);
    static LayerSpec restore(int slot);
    static LayerSpec add(int slot);
};

struct BackboneSpec {
    std::string name;
    int input_channels = 3;
    std::vector<LayerSpec> layers;
};

// conv3x3 -> BN -> ReLU -> maxpool blocks, final block ends in global
// average pooling. channels.back() is the feature dimension.
BackboneSpec desk_cnn_spec(const std::vector<int>& channels = {16, 32, 64, 64});
BackboneSpec resnet18_spec();
BackboneSpec backbone_spec_by_name(const std::string& name);

struct BackboneTrace {
    struct Step {
        int layer_index = -1;
        int in_reg = -1, out_reg = -1, aux_reg = -1;
        int conv_index = -1, site_index = -1;
        Conv2dCache conv;
        BatchNormCache bn;
        Tensor relu_mask;
        MaxPoolCache pool;
        std::vector<int> gap_in_shape;
    };
    std::vector<Tensor> regs;
    std::vector<Step> steps;
    int output_reg = -1;
};

// Shared convolution kernels plus the pretrained batch-norm template that
// seeds every per-task bank.
class Backbone {
public:
    Backbone() = default;
    Backbone(BackboneSpec spec, uint64_t init_seed);

    const BackboneSpec& spec() const { return spec_; }
    int num_bn_sites() const { return static_cast<int>(site_channels_.size()); }
    const std::vector<int>& bn_site_channels() const { return site_channels_; }
    int feature_dim() const { return feature_dim_; }
    bool frozen() const { return frozen_; }
    void freeze();

    std::vector<Parameter>& conv_params() { return conv_params_; }
    const std::vector<Parameter>& conv_params() const { return conv_params_; }
    std::vector<BatchNormState>& template_bn() { return template_bn_; }
    const std::vector<BatchNormState>& template_bn() const { return template_bn_; }

    int64_t conv_param_count() const;
    int64_t bn_trainable_count() const;  // 2 * sum of site channels

    // Runs the program with BN sites bound to the given states. Their mode
    // fields decide train vs eval behavior. Returns N x feature_dim.
    Tensor forward(const Tensor& input, std::vector<BatchNormState>& sites,
                   BackboneTrace* trace = nullptr) const;

    // Accumulates gradients into trainable conv kernels and the bound BN
    // parameters; returns the input gradient.
    Tensor backward(const Tensor& feature_grad, const BackboneTrace& trace,
                    std::vector<BatchNormState>& sites);

private:
    BackboneSpec spec_;
    std::vector<Parameter> conv_params_;
    std::vector<BatchNormState> template_bn_;
    std::vector<int> site_channels_;
    int feature_dim_ = 0;
    bool frozen_ = false;
};

void set_bn_mode(std::vector<BatchNormState>& sites, BnMode mode);
uint64_t hash_bn_states(const std::vector<BatchNormState>& sites);
uint64_t hash_conv_params(const std::vector<Parameter>& params);

}  // namespace tsbn
