#pragma once

#include <filesystem>
#include <vector>

#include "tsbn/model.hpp"

namespace tsbn {

// Test-time pipeline: task-ID prediction (TP) across heads, then
// within-task prediction (WP) on the selected head's known classes.
struct Prediction {
    int predicted_task = -1;
    int predicted_local_class = -1;
    int predicted_global_class = -1;
    std::vector<double> unknown_probabilities;  // per task; empty when heads lack an unknown class
    std::vector<double> selected_distribution;  // softmax over the selected head's outputs
};

enum class TpRule { MinUnknown, MaxSoftmax };

// Softmax probability of the unknown class under sub-model t (eval mode).
double unknown_probability(IncrementalModel& model, const Tensor& sample, int task);

// argmin over tasks of the unknown probability; ties go to the lower id.
int predict_task(IncrementalModel& model, const Tensor& sample);

// Ablation rule: argmax over tasks of the max known-class softmax.
int predict_task_maxsoftmax(IncrementalModel& model, const Tensor& sample);

// argmax over the known-class logits only; the unknown logit never wins.
int predict_within_task(IncrementalModel& model, const Tensor& sample, int task);

Prediction predict(IncrementalModel& model, const Tensor& sample);

std::vector<Prediction> predict_batch(IncrementalModel& model, const Tensor& batch, TpRule rule);

void write_predictions_csv(const std::filesystem::path& file, const std::vector<Prediction>& preds,
                           const std::vector<int>& sample_ids, const std::vector<int>& true_global,
                           const std::vector<int>& true_task);

}  // namespace tsbn
