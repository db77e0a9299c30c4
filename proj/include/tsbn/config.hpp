#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tsbn/data.hpp"
#include "tsbn/trainer.hpp"

namespace tsbn {

struct DataConfig {
    std::string source = "synthetic";  // synthetic | directory | raw
    std::string path;                  // directory/raw root
    int image_size = 32;
    SyntheticSpec synthetic;
    Normalization norm;
    std::string augment = "none";
};

struct ScheduleConfig {
    int tasks = 5;
    int classes_per_task = 2;
    std::vector<std::vector<std::string>> named_order;  // verbatim task groups when non-empty
};

struct BackboneConfig {
    std::string arch = "desk_cnn";  // desk_cnn | resnet18
    std::vector<int> channels = {16, 32, 64, 64};
    uint64_t init_seed = 1234;
};

struct ExperimentConfig {
    std::string run_name = "run";
    std::string output_dir = "runs";
    std::vector<uint64_t> seeds = {1};
    DataConfig data;
    ScheduleConfig schedule;
    BackboneConfig backbone;
    PretrainConfig pretrain;
    StageAConfig stage_a;
    StageBConfig stage_b;
    int memory_budget = 200;
    std::string memory_policy = "herding";  // herding | random
    AblationFlags ablation;
    std::string tp_rule = "auto";  // auto | min_unknown | max_softmax
    std::string bn_init = "pretrained";
    int eval_batch = 128;

    TpRule resolved_tp_rule() const;
    BnInitPolicy resolved_bn_init() const;
    SelectionPolicy resolved_memory_policy() const;
    AugmentPolicy resolved_augment() const;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& file);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
void save_experiment_config(const ExperimentConfig& cfg, const std::filesystem::path& file);

// Validates field ranges and cross-field rules (unknown_class=false forces
// the max-softmax TP rule; alignment needs the unknown class; the memory
// budget must cover every class). Throws with the offending field path.
void validate_experiment_config(const ExperimentConfig& cfg);

// Uniformly scales pretrain/stage epochs and their LR milestones.
void apply_epochs_scale(ExperimentConfig& cfg, double scale);

}  // namespace tsbn
