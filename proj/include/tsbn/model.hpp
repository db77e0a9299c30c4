#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "tsbn/backbone.hpp"

namespace tsbn {

// Per-task batch normalization bank: one state per BN site of the backbone.
struct BNBank {
    int task_id = -1;
    std::vector<BatchNormState> sites;
};

// Per-task affine classifier over the task's known classes. When
// has_unknown is set the last output (index known_classes) is the
// "unknown" class used for task-ID prediction.
struct TaskHead {
    int task_id = -1;
    int known_classes = 0;
    bool has_unknown = true;
    Parameter weight;  // output_dim x d
    Parameter bias;    // output_dim

    int output_dim() const { return known_classes + (has_unknown ? 1 : 0); }
    int unknown_index() const;
};

// Bijection between (task, local class) and global class ids. Task class
// sets are pairwise disjoint.
class LabelMap {
public:
    int add_task(const std::vector<int>& global_classes);
    int global_class(int task, int local) const;
    int local_class(int global) const;
    int task_of(int global) const;
    bool contains(int global) const;
    int task_count() const { return static_cast<int>(groups_.size()); }
    int classes_in_task(int task) const;
    std::vector<int> classes_seen() const;  // concatenated in task order
    const std::vector<std::vector<int>>& groups() const { return groups_; }

private:
    std::vector<std::vector<int>> groups_;
    std::map<int, std::pair<int, int>> global_to_local_;  // global -> (task, local)
};

enum class BnInitPolicy { Pretrained, Previous, Fresh };

struct IncrementalModel {
    Backbone backbone;
    std::vector<BNBank> banks;
    std::vector<TaskHead> heads;
    LabelMap label_map;
    BnInitPolicy bn_init = BnInitPolicy::Pretrained;
    bool heads_have_unknown = true;

    int task_count() const { return static_cast<int>(banks.size()); }
};

// Registers a new task with the given global class ids: a fresh BN bank
// (per bn_init policy), a head with uniform(-1/sqrt(d), 1/sqrt(d)) weights
// and zero bias, and an extended label map. Returns the task id.
int add_task(IncrementalModel& model, const std::vector<int>& global_classes, std::mt19937& rng);
// Convenience overload: assigns the next unused global ids.
int add_task(IncrementalModel& model, int class_count, std::mt19937& rng);

struct ModelTrace {
    BackboneTrace backbone;
    LinearCache head;
};

// Runs the backbone with task t's BN bank in the given mode, then head t.
Tensor forward_logits(IncrementalModel& model, const Tensor& batch, int task, BnMode mode,
                      ModelTrace* trace = nullptr);
// Same, stopping before the head (N x d penultimate features).
Tensor forward_features(IncrementalModel& model, const Tensor& batch, int task, BnMode mode,
                        BackboneTrace* trace = nullptr);

void check_task_id(const IncrementalModel& model, int task);

struct ParameterReport {
    struct PerTask {
        int task_id = 0;
        int64_t bn_params = 0;
        int64_t head_params = 0;
        int64_t added_trainable = 0;  // bn_params + head_params
    };
    std::vector<PerTask> per_task;
    int64_t backbone_frozen = 0;   // conv kernels
    int64_t total_trainable = 0;   // sum of per-task additions
    int64_t total_params = 0;      // frozen + trainable
};

ParameterReport parameter_report(const IncrementalModel& model);

// Expected per-task addition: sum over BN sites of 2*channels, plus
// (C + u) * d weights and (C + u) biases for the head.
int64_t analytic_task_addition(const Backbone& backbone, int class_count, bool has_unknown);

uint64_t hash_model(const IncrementalModel& model);
uint64_t hash_head(const TaskHead& head);

}  // namespace tsbn
