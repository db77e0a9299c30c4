#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "tsbn/data.hpp"
#include "tsbn/inference.hpp"
#include "tsbn/memory.hpp"
#include "tsbn/metrics.hpp"
#include "tsbn/model.hpp"
#include "tsbn/optim.hpp"

namespace tsbn {

struct StageAConfig {
    int epochs = 30;
    int batch_new = 32;
    int batch_mem = 32;
    SGDConfig sgd{0.01f, 0.9f, 0.0005f, {15, 24}, 0.1f};
};

struct StageBConfig {
    int epochs = 15;  // 0 disables alignment
    int batch = 32;
    SGDConfig sgd{0.001f, 0.9f, 0.0f, {8, 12}, 0.1f};
};

struct PretrainConfig {
    bool enabled = true;
    int epochs = 20;
    int batch = 32;
    SGDConfig sgd{0.01f, 0.9f, 0.0005f, {12, 17}, 0.1f};
    std::string checkpoint;  // optional: load a frozen backbone instead of training
};

struct AblationFlags {
    bool task_specific_bn = true;
    bool unknown_class = true;
    bool alignment = true;
};

// New-task samples pull toward their own label; replayed old samples pull
// toward the unknown class (last column). Per-part batch means are summed;
// an empty memory part contributes zero (the task-1 case).
double stage_a_loss(const Tensor& new_logits, const std::vector<int>& new_labels,
                    const Tensor& mem_logits);

// Alignment loss over one memory batch: under every stored sub-model j in
// [0, tasks), a sample of task j trains toward its own local label and any
// other sample toward head j's unknown class; normalized by batch * tasks.
// All BN in eval mode.
double stage_b_loss(IncrementalModel& model, const Dataset& train,
                    const std::vector<Exemplar>& batch, int tasks, const Normalization& norm);

struct PretrainResult {
    double train_accuracy = 0.0;
    std::vector<double> epoch_losses;
};

// Trains the backbone plus a throwaway head on the pretrain split, then
// freezes the conv kernels. The resulting BN states become the template
// every task bank is initialized from.
PretrainResult pretrain_backbone(Backbone& backbone, const Dataset& pretrain,
                                 const PretrainConfig& cfg, const Normalization& norm,
                                 AugmentPolicy augment, uint64_t seed);

struct StageResult {
    std::vector<double> epoch_losses;
};

StageResult train_stage_a(IncrementalModel& model, const Dataset& train,
                          const TaskSchedule& schedule, int task, const ExemplarMemory& memory,
                          const StageAConfig& cfg, const Normalization& norm,
                          AugmentPolicy augment, bool task_specific_bn, bool unknown_class,
                          uint64_t seed);

StageResult train_stage_b(IncrementalModel& model, const ExemplarMemory& memory,
                          const Dataset& train, const StageBConfig& cfg,
                          const Normalization& norm, uint64_t seed);

struct PhaseEval {
    std::vector<Prediction> predictions;
    std::vector<int> sample_ids;
    std::vector<int> true_global;
    std::vector<int> true_task;
    PhaseRecord record;  // parameter counts left to the caller
};

PhaseEval evaluate_phase(IncrementalModel& model, const Dataset& test, const TaskSchedule& schedule,
                         int upto_task, const Normalization& norm, TpRule rule, int batch);

struct RunSettings {
    StageAConfig stage_a;
    StageBConfig stage_b;
    AblationFlags flags;
    int memory_budget = 200;
    SelectionPolicy memory_policy = SelectionPolicy::Herding;
    Normalization norm;
    AugmentPolicy augment = AugmentPolicy::None;
    int eval_batch = 128;
    uint64_t seed = 1;
    std::filesystem::path run_dir;  // empty: keep everything in memory
    std::function<void(const std::string&)> log;
};

struct RunOutput {
    MetricLog log;
    PhaseEval final_eval;
};

// The incremental driver: for each task, add_task -> stage A -> memory
// update -> stage B -> evaluate on the union of test sets seen so far.
// The model must hold a frozen backbone and no tasks yet.
RunOutput run_incremental(IncrementalModel& model, const DataBundle& data,
                          const TaskSchedule& schedule, const RunSettings& settings);

}  // namespace tsbn
