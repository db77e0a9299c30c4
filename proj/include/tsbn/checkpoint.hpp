#pragma once

#include <filesystem>

#include "tsbn/memory.hpp"
#include "tsbn/metrics.hpp"
#include "tsbn/model.hpp"

namespace tsbn {

// Self-describing container: magic, little-endian header length, JSON
// header (layer spec, shapes, task table, label map, section list), then
// raw little-endian float32 payload sections in header order. Round trips
// are bit-exact for parameters and running statistics.
void save_checkpoint(const IncrementalModel& model, const std::filesystem::path& file);
IncrementalModel load_checkpoint(const std::filesystem::path& file);

// Same container with the experiment state (exemplar memory, completed
// phase, metric records) embedded in the header.
void save_experiment_checkpoint(const IncrementalModel& model, const ExemplarMemory& memory,
                                int completed_phase, const MetricLog& log,
                                const std::filesystem::path& file);

struct ExperimentState {
    IncrementalModel model;
    ExemplarMemory memory;
    int completed_phase = -1;
    MetricLog log;
};

ExperimentState load_experiment_checkpoint(const std::filesystem::path& file);

// Frozen-backbone-only convenience used by pretrain reuse.
void save_backbone_checkpoint(const Backbone& backbone, const std::filesystem::path& file);
Backbone load_backbone_checkpoint(const std::filesystem::path& file);

}  // namespace tsbn
