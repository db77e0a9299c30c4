#include "tsbn/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tsbn/tensor.hpp"

using nlohmann::json;

namespace tsbn {

static constexpr char kMetricsSchema[] = "# schema: tsbn.metrics.v1";

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

double class_recall(const std::vector<int>& preds, const std::vector<int>& labels, int c) {
    detail::require(preds.size() == labels.size(), "class_recall: preds/labels length mismatch");
    int64_t n_c = 0, hits = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == c) {
            ++n_c;
            if (preds[i] == c) ++hits;
        }
    }
    detail::require(n_c > 0, "class_recall: class " + std::to_string(c) + " absent from labels");
    return static_cast<double>(hits) / static_cast<double>(n_c);
}

double mcr(const std::vector<int>& preds, const std::vector<int>& labels,
           const std::vector<int>& classes_seen) {
    detail::require(!classes_seen.empty(), "mcr: empty class list");
    std::string missing;
    for (int c : classes_seen) {
        if (std::find(labels.begin(), labels.end(), c) == labels.end()) {
            missing += (missing.empty() ? "" : ", ") + std::to_string(c);
        }
    }
    detail::require(missing.empty(), "mcr: classes missing from labels: " + missing);
    double sum = 0.0;
    for (int c : classes_seen) sum += class_recall(preds, labels, c);
    return sum / static_cast<double>(classes_seen.size());
}

std::pair<double, double> summarize(const MetricLog& log) {
    detail::require(!log.records.empty(), "summarize: empty metric log");
    double sum = 0.0;
    for (const PhaseRecord& r : log.records) sum += r.mcr;
    return {log.records.back().mcr, sum / static_cast<double>(log.records.size())};
}

bool DecompositionCounts::identity_exact() const {
    if (inclusion_violations != 0) return false;
    if (total == 0) return overall_correct == 0 && tp_correct == 0;
    // overall/total == (tp/total) * (overall/tp): exact iff overall-correct
    // implies tp-correct, plus the zero-tp degenerate case.
    if (tp_correct == 0) return overall_correct == 0;
    return overall_correct <= tp_correct;
}

DecompositionCounts decomposition_audit(const std::vector<int>& pred_task,
                                        const std::vector<int>& true_task,
                                        const std::vector<int>& pred_global,
                                        const std::vector<int>& true_global) {
    detail::require(pred_task.size() == true_task.size() && pred_task.size() == pred_global.size() &&
                        pred_task.size() == true_global.size(),
                    "decomposition_audit: column length mismatch");
    DecompositionCounts counts;
    counts.total = static_cast<int64_t>(pred_task.size());
    for (size_t i = 0; i < pred_task.size(); ++i) {
        const bool tp_ok = pred_task[i] == true_task[i];
        const bool overall_ok = pred_global[i] == true_global[i];
        if (tp_ok) ++counts.tp_correct;
        if (overall_ok) {
            ++counts.overall_correct;
            if (!tp_ok) ++counts.inclusion_violations;
        }
    }
    return counts;
}

std::vector<std::vector<double>> accuracy_matrix(const MetricLog& log) {
    std::vector<std::vector<double>> matrix;
    for (const PhaseRecord& r : log.records) matrix.push_back(r.per_task_mcr);
    return matrix;
}

void write_metrics_csv(const MetricLog& log, const std::filesystem::path& file) {
    std::ofstream out(file);
    detail::require(out.good(), "cannot write " + file.string());
    out << kMetricsSchema << "\n";
    out << "phase,mcr,last_flag,tp_acc,wp_given_tp,overall_acc,trainable_params,total_params\n";
    for (size_t i = 0; i < log.records.size(); ++i) {
        const PhaseRecord& r = log.records[i];
        out << r.phase << "," << format_double(r.mcr) << ","
            << (i + 1 == log.records.size() ? 1 : 0) << "," << format_double(r.tp_accuracy) << ","
            << format_double(r.wp_given_tp) << "," << format_double(r.overall_accuracy) << ","
            << r.trainable_params << "," << r.total_params << "\n";
    }
}

void write_metrics_json(const MetricLog& log, const std::filesystem::path& file) {
    json j;
    j["schema"] = "tsbn.metrics.v1";
    j["schedule_length"] = log.schedule_length;
    j["schedule_hash"] = log.schedule_hash;
    json records = json::array();
    for (const PhaseRecord& r : log.records) {
        json rec;
        rec["phase"] = r.phase;
        rec["mcr"] = r.mcr;
        rec["tp_acc"] = r.tp_accuracy;
        rec["wp_given_tp"] = r.wp_given_tp;
        rec["overall_acc"] = r.overall_accuracy;
        rec["trainable_params"] = r.trainable_params;
        rec["total_params"] = r.total_params;
        json recalls = json::object();
        for (const auto& [c, v] : r.class_recalls) recalls[std::to_string(c)] = v;
        rec["class_recalls"] = recalls;
        rec["per_task_mcr"] = r.per_task_mcr;
        records.push_back(rec);
    }
    j["records"] = records;
    if (!log.records.empty()) {
        auto [last, avg] = summarize(log);
        j["last_mcr"] = last;
        j["avg_mcr"] = avg;
    }
    std::ofstream out(file);
    detail::require(out.good(), "cannot write " + file.string());
    out << j.dump(2) << "\n";
}

MetricLog read_metrics_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    detail::require(in.good(), "cannot open " + file.string());
    std::string line;
    std::getline(in, line);
    detail::require(line == kMetricsSchema, file.string() + ": unknown metrics schema '" + line + "'");
    std::getline(in, line);  // column header
    MetricLog log;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        detail::require(cells.size() == 8, file.string() + ": malformed metrics row '" + line + "'");
        PhaseRecord r;
        r.phase = std::stoi(cells[0]);
        r.mcr = std::stod(cells[1]);
        r.tp_accuracy = std::stod(cells[3]);
        r.wp_given_tp = std::stod(cells[4]);
        r.overall_accuracy = std::stod(cells[5]);
        r.trainable_params = std::stoll(cells[6]);
        r.total_params = std::stoll(cells[7]);
        log.records.push_back(r);
    }
    log.schedule_length = static_cast<int>(log.records.size());
    return log;
}

}  // namespace tsbn
