#include "tsbn/model.hpp"

#include <cmath>
#include <stdexcept>

namespace tsbn {

int TaskHead::unknown_index() const {
    detail::require(has_unknown, "head for task " + std::to_string(task_id) + " has no unknown class");
    return known_classes;
}

int LabelMap::add_task(const std::vector<int>& global_classes) {
    detail::require(!global_classes.empty(), "a task needs at least one class");
    const int task = static_cast<int>(groups_.size());
    for (size_t local = 0; local < global_classes.size(); ++local) {
        const int g = global_classes[local];
        detail::require(global_to_local_.find(g) == global_to_local_.end(),
                        "global class " + std::to_string(g) + " already assigned to a task");
        global_to_local_[g] = {task, static_cast<int>(local)};
    }
    groups_.push_back(global_classes);
    return task;
}

int LabelMap::global_class(int task, int local) const {
    detail::require(task >= 0 && task < task_count(), "label map: bad task " + std::to_string(task));
    const auto& g = groups_[static_cast<size_t>(task)];
    detail::require(local >= 0 && local < static_cast<int>(g.size()),
                    "label map: bad local class " + std::to_string(local));
    return g[static_cast<size_t>(local)];
}

int LabelMap::local_class(int global) const {
    auto it = global_to_local_.find(global);
    detail::require(it != global_to_local_.end(), "label map: unseen global class " + std::to_string(global));
    return it->second.second;
}

int LabelMap::task_of(int global) const {
    auto it = global_to_local_.find(global);
    detail::require(it != global_to_local_.end(), "label map: unseen global class " + std::to_string(global));
    return it->second.first;
}

bool LabelMap::contains(int global) const {
    return global_to_local_.find(global) != global_to_local_.end();
}

int LabelMap::classes_in_task(int task) const {
    detail::require(task >= 0 && task < task_count(), "label map: bad task " + std::to_string(task));
    return static_cast<int>(groups_[static_cast<size_t>(task)].size());
}

std::vector<int> LabelMap::classes_seen() const {
    std::vector<int> out;
    for (const auto& g : groups_) out.insert(out.end(), g.begin(), g.end());
    return out;
}

int add_task(IncrementalModel& model, const std::vector<int>& global_classes, std::mt19937& rng) {
    detail::require(!global_classes.empty(), "add_task: class count must be >= 1");
    detail::require(model.backbone.frozen(), "add_task requires a frozen backbone");
    const int task = model.label_map.add_task(global_classes);
    const int c_t = static_cast<int>(global_classes.size());
    const int d = model.backbone.feature_dim();

    BNBank bank;
    bank.task_id = task;
    switch (model.bn_init) {
        case BnInitPolicy::Pretrained:
            bank.sites = model.backbone.template_bn();
            break;
        case BnInitPolicy::Previous:
            bank.sites = model.banks.empty() ? model.backbone.template_bn()
                                             : model.banks.back().sites;
            break;
        case BnInitPolicy::Fresh:
            for (int c : model.backbone.bn_site_channels()) bank.sites.emplace_back(c);
            break;
    }
    for (BatchNormState& s : bank.sites) {
        s.gamma.trainable = true;
        s.beta.trainable = true;
        s.gamma.zero_grad();
        s.beta.zero_grad();
    }
    model.banks.push_back(std::move(bank));

    TaskHead head;
    head.task_id = task;
    head.known_classes = c_t;
    head.has_unknown = model.heads_have_unknown;
    const float bound = 1.0f / std::sqrt(static_cast<float>(d));
    std::uniform_real_distribution<float> dist(-bound, bound);
    Tensor w({head.output_dim(), d});
    for (auto& v : w.data) v = dist(rng);
    head.weight = Parameter(std::move(w));
    head.bias = Parameter(Tensor({head.output_dim()}));
    model.heads.push_back(std::move(head));
    return task;
}

int add_task(IncrementalModel& model, int class_count, std::mt19937& rng) {
    detail::require(class_count >= 1, "add_task: class count must be >= 1");
    int next = 0;
    for (int g : model.label_map.classes_seen()) next = std::max(next, g + 1);
    std::vector<int> ids;
    for (int i = 0; i < class_count; ++i) ids.push_back(next + i);
    return add_task(model, ids, rng);
}

void check_task_id(const IncrementalModel& model, int task) {
    if (task < 0 || task >= model.task_count()) {
        throw std::out_of_range("task id " + std::to_string(task) + " not registered (have " +
                                std::to_string(model.task_count()) + " tasks)");
    }
}

Tensor forward_features(IncrementalModel& model, const Tensor& batch, int task, BnMode mode,
                        BackboneTrace* trace) {
    check_task_id(model, task);
    BNBank& bank = model.banks[static_cast<size_t>(task)];
    set_bn_mode(bank.sites, mode);
    return model.backbone.forward(batch, bank.sites, trace);
}

Tensor forward_logits(IncrementalModel& model, const Tensor& batch, int task, BnMode mode,
                      ModelTrace* trace) {
    Tensor features = forward_features(model, batch, task, mode, trace ? &trace->backbone : nullptr);
    TaskHead& head = model.heads[static_cast<size_t>(task)];
    return linear_forward(features, head.weight, head.bias, trace ? &trace->head : nullptr);
}

ParameterReport parameter_report(const IncrementalModel& model) {
    ParameterReport r;
    r.backbone_frozen = model.backbone.conv_param_count();
    for (int t = 0; t < model.task_count(); ++t) {
        ParameterReport::PerTask p;
        p.task_id = t;
        for (const BatchNormState& s : model.banks[static_cast<size_t>(t)].sites) {
            p.bn_params += s.gamma.numel() + s.beta.numel();
        }
        const TaskHead& h = model.heads[static_cast<size_t>(t)];
        p.head_params = h.weight.numel() + h.bias.numel();
        p.added_trainable = p.bn_params + p.head_params;
        r.total_trainable += p.added_trainable;
        r.per_task.push_back(p);
    }
    r.total_params = r.backbone_frozen + r.total_trainable;
    return r;
}

int64_t analytic_task_addition(const Backbone& backbone, int class_count, bool has_unknown) {
    const int64_t outputs = class_count + (has_unknown ? 1 : 0);
    return backbone.bn_trainable_count() + outputs * backbone.feature_dim() + outputs;
}

uint64_t hash_head(const TaskHead& head) {
    uint64_t h = bit_hash(head.weight.value);
    h = bit_hash_combine(h, head.bias.value);
    return h;
}

uint64_t hash_model(const IncrementalModel& model) {
    uint64_t h = hash_conv_params(model.backbone.conv_params());
    h ^= hash_bn_states(model.backbone.template_bn());
    for (const BNBank& b : model.banks) h = mix_seed(h, hash_bn_states(b.sites));
    for (const TaskHead& head : model.heads) h = mix_seed(h, hash_head(head));
    return h;
}

}  // namespace tsbn
