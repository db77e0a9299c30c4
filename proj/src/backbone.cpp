#include "tsbn/backbone.hpp"

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

namespace tsbn {

LayerSpec LayerSpec::conv(int out_ch, int k, int s, int p) {
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.out_channels = out_ch;
    l.ksize = k;
    l.stride = s;
    l.pad = p;
    return l;
}
LayerSpec LayerSpec::batchnorm() {
    LayerSpec l;
    l.kind = LayerKind::BatchNorm;
    return l;
}
LayerSpec LayerSpec::relu() {
    LayerSpec l;
    l.kind = LayerKind::ReLU;
    return l;
}
LayerSpec LayerSpec::maxpool(int k, int s, int p) {
    LayerSpec l;
    l.kind = LayerKind::MaxPool;
    l.pool_size = k;
    l.pool_stride = s;
    l.pool_pad = p;
    return l;
}
LayerSpec LayerSpec::global_avgpool() {
    LayerSpec l;
    l.kind = LayerKind::GlobalAvgPool;
    return l;
}
LayerSpec LayerSpec::save(int slot) {
    LayerSpec l;
    l.kind = LayerKind::Save;
    l.slot = slot;
    return l;
}
LayerSpec LayerSpec::restore(int slot) {
    LayerSpec l;
    l.kind = LayerKind::Restore;
    l.slot = slot;
    return l;
}
LayerSpec LayerSpec::add(int slot) {
    LayerSpec l;
    l.kind = LayerKind::Add;
    l.slot = slot;
    return l;
}

BackboneSpec desk_cnn_spec(const std::vector<int>& channels) {
    detail::require(!channels.empty(), "desk_cnn_spec needs at least one channel count");
    BackboneSpec spec;
    spec.name = "desk_cnn";
    spec.input_channels = 3;
    for (size_t i = 0; i < channels.size(); ++i) {
        spec.layers.push_back(LayerSpec::conv(channels[i], 3, 1, 1));
        spec.layers.push_back(LayerSpec::batchnorm());
        spec.layers.push_back(LayerSpec::relu());
        if (i + 1 < channels.size()) {
            spec.layers.push_back(LayerSpec::maxpool(2, 2));
        } else {
            spec.layers.push_back(LayerSpec::global_avgpool());
        }
    }
    return spec;
}

namespace {

void append_basic_block(BackboneSpec& spec, int channels, int stride, bool project) {
    spec.layers.push_back(LayerSpec::save(0));
    spec.layers.push_back(LayerSpec::conv(channels, 3, stride, 1));
    spec.layers.push_back(LayerSpec::batchnorm());
    spec.layers.push_back(LayerSpec::relu());
    spec.layers.push_back(LayerSpec::conv(channels, 3, 1, 1));
    spec.layers.push_back(LayerSpec::batchnorm());
    if (project) {
        spec.layers.push_back(LayerSpec::save(1));
        spec.layers.push_back(LayerSpec::restore(0));
        spec.layers.push_back(LayerSpec::conv(channels, 1, stride, 0));
        spec.layers.push_back(LayerSpec::batchnorm());
        spec.layers.push_back(LayerSpec::add(1));
    } else {
        spec.layers.push_back(LayerSpec::add(0));
    }
    spec.layers.push_back(LayerSpec::relu());
}

}  // namespace

BackboneSpec resnet18_spec() {
    BackboneSpec spec;
    spec.name = "resnet18";
    spec.input_channels = 3;
    spec.layers.push_back(LayerSpec::conv(64, 7, 2, 3));
    spec.layers.push_back(LayerSpec::batchnorm());
    spec.layers.push_back(LayerSpec::relu());
    spec.layers.push_back(LayerSpec::maxpool(3, 2, 1));
    append_basic_block(spec, 64, 1, false);
    append_basic_block(spec, 64, 1, false);
    append_basic_block(spec, 128, 2, true);
    append_basic_block(spec, 128, 1, false);
    append_basic_block(spec, 256, 2, true);
    append_basic_block(spec, 256, 1, false);
    append_basic_block(spec, 512, 2, true);
    append_basic_block(spec, 512, 1, false);
    spec.layers.push_back(LayerSpec::global_avgpool());
    return spec;
}

BackboneSpec backbone_spec_by_name(const std::string& name) {
    if (name == "desk_cnn") return desk_cnn_spec();
    if (name == "resnet18") return resnet18_spec();
    throw std::invalid_argument("unknown backbone '" + name + "' (expected desk_cnn or resnet18)");
}

Backbone::Backbone(BackboneSpec spec, uint64_t init_seed) : spec_(std::move(spec)) {
    std::mt19937 rng(static_cast<uint32_t>(mix_seed(init_seed, 0x6b6b)));
    std::map<int, int> slot_channels;
    int channels = spec_.input_channels;
    bool pooled = false;
    for (const LayerSpec& l : spec_.layers) {
        detail::require(!pooled, "no layers allowed after global_avgpool");
        switch (l.kind) {
            case LayerKind::Conv: {
                detail::require(l.out_channels > 0 && l.ksize > 0, "conv spec needs channels and ksize");
                const int fan_in = channels * l.ksize * l.ksize;
                std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
                Tensor w({l.out_channels, channels, l.ksize, l.ksize});
                for (auto& v : w.data) v = dist(rng);
                conv_params_.emplace_back(std::move(w));
                channels = l.out_channels;
                break;
            }
            case LayerKind::BatchNorm:
                template_bn_.emplace_back(channels);
                site_channels_.push_back(channels);
                break;
            case LayerKind::ReLU:
            case LayerKind::MaxPool:
                break;
            case LayerKind::GlobalAvgPool:
                pooled = true;
                break;
            case LayerKind::Save:
                slot_channels[l.slot] = channels;
                break;
            case LayerKind::Restore: {
                auto it = slot_channels.find(l.slot);
                detail::require(it != slot_channels.end(), "restore from unsaved slot");
                channels = it->second;
                break;
            }
            case LayerKind::Add: {
                auto it = slot_channels.find(l.slot);
                detail::require(it != slot_channels.end(), "add from unsaved slot");
                detail::require(it->second == channels, "residual add channel mismatch");
                break;
            }
        }
    }
    detail::require(pooled, "backbone must end with global_avgpool");
    feature_dim_ = channels;
}

void Backbone::freeze() {
    for (Parameter& p : conv_params_) p.trainable = false;
    frozen_ = true;
}

int64_t Backbone::conv_param_count() const {
    int64_t n = 0;
    for (const Parameter& p : conv_params_) n += p.numel();
    return n;
}

int64_t Backbone::bn_trainable_count() const {
    int64_t n = 0;
    for (int c : site_channels_) n += 2 * c;
    return n;
}

Tensor Backbone::forward(const Tensor& input, std::vector<BatchNormState>& sites,
                         BackboneTrace* trace) const {
    detail::require(static_cast<int>(sites.size()) == num_bn_sites(),
                    "bound BN bank has " + std::to_string(sites.size()) + " sites, backbone has " +
                        std::to_string(num_bn_sites()));
    detail::require(input.rank() == 4 && input.dim(1) == spec_.input_channels,
                    "backbone expects N x " + std::to_string(spec_.input_channels) +
                        " x H x W input, got " + shape_str(input.shape));

    BackboneTrace local;
    BackboneTrace& tr = trace ? *trace : local;
    tr.regs.clear();
    tr.steps.clear();
    tr.regs.push_back(input);
    int cur = 0;
    std::map<int, int> slots;
    int conv_index = 0, site_index = 0;

    for (size_t li = 0; li < spec_.layers.size(); ++li) {
        const LayerSpec& l = spec_.layers[li];
        BackboneTrace::Step step;
        step.layer_index = static_cast<int>(li);
        step.in_reg = cur;
        switch (l.kind) {
            case LayerKind::Conv: {
                step.conv_index = conv_index;
                Tensor out = conv2d_forward(tr.regs[static_cast<size_t>(cur)],
                                            conv_params_[static_cast<size_t>(conv_index)], l.stride,
                                            l.pad, trace ? &step.conv : nullptr);
                ++conv_index;
                tr.regs.push_back(std::move(out));
                cur = static_cast<int>(tr.regs.size()) - 1;
                step.out_reg = cur;
                tr.steps.push_back(std::move(step));
                break;
            }
            case LayerKind::BatchNorm: {
                step.site_index = site_index;
                Tensor out = batchnorm_forward(tr.regs[static_cast<size_t>(cur)],
                                               sites[static_cast<size_t>(site_index)],
                                               trace ? &step.bn : nullptr);
                ++site_index;
                tr.regs.push_back(std::move(out));
                cur = static_cast<int>(tr.regs.size()) - 1;
                step.out_reg = cur;
                tr.steps.push_back(std::move(step));
                break;
            }
            case LayerKind::ReLU: {
                Tensor out = relu_forward(tr.regs[static_cast<size_t>(cur)],
                                          trace ? &step.relu_mask : nullptr);
                tr.regs.push_back(std::move(out));
                cur = static_cast<int>(tr.regs.size()) - 1;
                step.out_reg = cur;
                tr.steps.push_back(std::move(step));
                break;
            }
            case LayerKind::MaxPool: {
                Tensor out = maxpool_forward(tr.regs[static_cast<size_t>(cur)], l.pool_size,
                                             l.pool_stride, l.pool_pad, trace ? &step.pool : nullptr);
                tr.regs.push_back(std::move(out));
                cur = static_cast<int>(tr.regs.size()) - 1;
                step.out_reg = cur;
                tr.steps.push_back(std::move(step));
                break;
            }
            case LayerKind::GlobalAvgPool: {
                Tensor out = global_avgpool_forward(tr.regs[static_cast<size_t>(cur)],
                                                    trace ? &step.gap_in_shape : nullptr);
                tr.regs.push_back(std::move(out));
                cur = static_cast<int>(tr.regs.size()) - 1;
                step.out_reg = cur;
                tr.steps.push_back(std::move(step));
                break;
            }
            case LayerKind::Save:
                slots[l.slot] = cur;
                break;
            case LayerKind::Restore:
                cur = slots.at(l.slot);
                break;
            case LayerKind::Add: {
                step.aux_reg = slots.at(l.slot);
                const Tensor& a = tr.regs[static_cast<size_t>(cur)];
                const Tensor& b = tr.regs[static_cast<size_t>(step.aux_reg)];
                detail::require(a.same_shape(b), "residual add shape mismatch");
                Tensor out(a.shape);
                for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
                tr.regs.push_back(std::move(out));
                cur = static_cast<int>(tr.regs.size()) - 1;
                step.out_reg = cur;
                tr.steps.push_back(std::move(step));
                break;
            }
        }
    }
    tr.output_reg = cur;
    Tensor features = tr.regs[static_cast<size_t>(cur)];
    if (!trace) {
        local.regs.clear();
    }
    return features;
}

Tensor Backbone::backward(const Tensor& feature_grad, const BackboneTrace& trace,
                          std::vector<BatchNormState>& sites) {
    detail::require(trace.output_reg >= 0, "backward requires a trace from forward");
    std::vector<Tensor> grads(trace.regs.size());
    auto grad_of = [&](int reg) -> Tensor& {
        Tensor& g = grads[static_cast<size_t>(reg)];
        if (g.numel() == 0) g = Tensor(trace.regs[static_cast<size_t>(reg)].shape);
        return g;
    };
    grad_of(trace.output_reg) = feature_grad;

    for (auto it = trace.steps.rbegin(); it != trace.steps.rend(); ++it) {
        const BackboneTrace::Step& step = *it;
        const Tensor& up = grad_of(step.out_reg);
        const LayerSpec& l = spec_.layers[static_cast<size_t>(step.layer_index)];
        switch (l.kind) {
            case LayerKind::Conv: {
                Tensor dx = conv2d_backward(up, step.conv,
                                            conv_params_[static_cast<size_t>(step.conv_index)]);
                Tensor& dst = grad_of(step.in_reg);
                for (int64_t i = 0; i < dx.numel(); ++i) dst[i] += dx[i];
                break;
            }
            case LayerKind::BatchNorm: {
                BatchNormState& site = sites[static_cast<size_t>(step.site_index)];
                BatchNormBackwardResult r = batchnorm_backward(up, step.bn, site);
                if (site.gamma.trainable) {
                    for (int64_t i = 0; i < r.gamma_grad.numel(); ++i) site.gamma.grad[i] += r.gamma_grad[i];
                }
                if (site.beta.trainable) {
                    for (int64_t i = 0; i < r.beta_grad.numel(); ++i) site.beta.grad[i] += r.beta_grad[i];
                }
                Tensor& dst = grad_of(step.in_reg);
                for (int64_t i = 0; i < r.input_grad.numel(); ++i) dst[i] += r.input_grad[i];
                break;
            }
            case LayerKind::ReLU: {
                Tensor dx = relu_backward(up, step.relu_mask);
                Tensor& dst = grad_of(step.in_reg);
                for (int64_t i = 0; i < dx.numel(); ++i) dst[i] += dx[i];
                break;
            }
            case LayerKind::MaxPool: {
                Tensor dx = maxpool_backward(up, step.pool);
                Tensor& dst = grad_of(step.in_reg);
                for (int64_t i = 0; i < dx.numel(); ++i) dst[i] += dx[i];
                break;
            }
            case LayerKind::GlobalAvgPool: {
                Tensor dx = global_avgpool_backward(up, step.gap_in_shape);
                Tensor& dst = grad_of(step.in_reg);
                for (int64_t i = 0; i < dx.numel(); ++i) dst[i] += dx[i];
                break;
            }
            case LayerKind::Add: {
                Tensor& lhs = grad_of(step.in_reg);
                for (int64_t i = 0; i < up.numel(); ++i) lhs[i] += up[i];
                Tensor& rhs = grad_of(step.aux_reg);
                for (int64_t i = 0; i < up.numel(); ++i) rhs[i] += up[i];
                break;
            }
            case LayerKind::Save:
            case LayerKind::Restore:
                break;
        }
    }
    return grads[0].numel() ? grads[0] : Tensor(trace.regs[0].shape);
}

void set_bn_mode(std::vector<BatchNormState>& sites, BnMode mode) {
    for (BatchNormState& s : sites) s.mode = mode;
}

uint64_t hash_bn_states(const std::vector<BatchNormState>& sites) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const BatchNormState& s : sites) {
        h = bit_hash_combine(h, s.gamma.value);
        h = bit_hash_combine(h, s.beta.value);
        h = bit_hash_combine(h, s.running_mean);
        h = bit_hash_combine(h, s.running_var);
    }
    return h;
}

uint64_t hash_conv_params(const std::vector<Parameter>& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const Parameter& p : params) h = bit_hash_combine(h, p.value);
    return h;
}

}  // namespace tsbn
