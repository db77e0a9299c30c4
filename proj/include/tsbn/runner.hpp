#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "tsbn/config.hpp"
#include "tsbn/trainer.hpp"

namespace tsbn {

DataBundle prepare_data(const ExperimentConfig& cfg);
TaskSchedule build_schedule(const ExperimentConfig& cfg, const DataBundle& data, uint64_t seed);

// Pretrains on the configured split (or loads a frozen checkpoint, or
// freezes a randomly initialized backbone when pretraining is disabled).
Backbone prepare_backbone(const ExperimentConfig& cfg, const DataBundle& data,
                          const std::function<void(const std::string&)>& log);

struct SingleRunResult {
    uint64_t seed = 0;
    MetricLog log;
    double last_mcr = 0.0;
    double avg_mcr = 0.0;
    double final_tp_accuracy = 0.0;
    double tp_task1_fraction = 0.0;  // share of final-phase TP predictions naming task 1
    std::filesystem::path run_dir;
};

// One seed: runs the schedule, writes the config snapshot, metrics,
// predictions, per-phase checkpoints and plots under run_dir.
SingleRunResult execute_single_run(const ExperimentConfig& cfg, uint64_t seed,
                                   const DataBundle& data, const Backbone& backbone,
                                   const std::filesystem::path& run_dir,
                                   const std::function<void(const std::string&)>& log);

struct ExperimentResult {
    std::vector<SingleRunResult> runs;
    std::filesystem::path root;
};

// Runs every configured seed (sub-run per seed) and writes an aggregate
// report with per-metric mean and variance.
ExperimentResult execute_experiment(const ExperimentConfig& cfg,
                                    const std::filesystem::path& out_root,
                                    const std::function<void(const std::string&)>& log);

struct AblationVariant {
    std::string name;
    AblationFlags flags;
};

// The four studied flag combinations, in presentation order.
std::vector<AblationVariant> ablation_variants();

struct AblationResult {
    std::vector<AblationVariant> variants;
    std::vector<ExperimentResult> results;  // parallel to variants
    std::filesystem::path root;
};

// Runs all four variants on identical data, schedules and seeds and emits
// a comparative table (ablation.csv / ablation.md).
AblationResult execute_ablation(const ExperimentConfig& cfg, const std::filesystem::path& out_root,
                                const std::function<void(const std::string&)>& log);

// Resolves the output root: TSBN_RUN_DIR overrides the config value.
std::filesystem::path resolve_output_root(const ExperimentConfig& cfg);

}  // namespace tsbn
