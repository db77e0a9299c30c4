#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tsbn {

// One record per completed task phase.
struct PhaseRecord {
    int phase = 0;  // 1-based task index
    std::map<int, double> class_recalls;
    double mcr = 0.0;
    double tp_accuracy = 0.0;
    double wp_given_tp = 0.0;
    double overall_accuracy = 0.0;
    int64_t trainable_params = 0;
    int64_t total_params = 0;
    std::vector<double> per_task_mcr;  // MCR restricted to each earlier task's classes
};

struct MetricLog {
    std::vector<PhaseRecord> records;
    int schedule_length = 0;
    uint64_t schedule_hash = 0;
};

// Fraction of the samples labeled c that are predicted c.
double class_recall(const std::vector<int>& preds, const std::vector<int>& labels, int c);

// Unweighted mean of per-class recalls over classes_seen (mean over
// classes, not samples). Every listed class must appear in labels.
double mcr(const std::vector<int>& preds, const std::vector<int>& labels,
           const std::vector<int>& classes_seen);

// {Last-MCR, Avg-MCR} of a completed log.
std::pair<double, double> summarize(const MetricLog& log);

struct DecompositionCounts {
    int64_t total = 0;
    int64_t tp_correct = 0;
    int64_t overall_correct = 0;
    int64_t inclusion_violations = 0;  // overall-correct samples with wrong task

    double tp_accuracy() const { return total ? static_cast<double>(tp_correct) / total : 0.0; }
    double wp_given_tp() const {
        return tp_correct ? static_cast<double>(overall_correct) / tp_correct : 0.0;
    }
    double overall() const { return total ? static_cast<double>(overall_correct) / total : 0.0; }
    // overall == tp * wp|tp as exact rationals on the counts.
    bool identity_exact() const;
};

DecompositionCounts decomposition_audit(const std::vector<int>& pred_task,
                                        const std::vector<int>& true_task,
                                        const std::vector<int>& pred_global,
                                        const std::vector<int>& true_global);

// Row t (0-based phase) holds per-task MCR for tasks 0..t.
std::vector<std::vector<double>> accuracy_matrix(const MetricLog& log);

void write_metrics_csv(const MetricLog& log, const std::filesystem::path& file);
void write_metrics_json(const MetricLog& log, const std::filesystem::path& file);
MetricLog read_metrics_csv(const std::filesystem::path& file);

// Fixed-width float formatting shared by all deterministic text outputs.
std::string format_double(double v);

}  // namespace tsbn
