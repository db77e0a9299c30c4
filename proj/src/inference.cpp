#include "tsbn/inference.hpp"

#include <fstream>

#include "tsbn/loss.hpp"
#include "tsbn/metrics.hpp"

namespace tsbn {

namespace {

// Per-task softmax rows for the whole batch: probs[t] is N x output_dim(t).
std::vector<std::vector<std::vector<double>>> batch_head_probs(IncrementalModel& model,
                                                               const Tensor& batch) {
    const int n = batch.dim(0);
    std::vector<std::vector<std::vector<double>>> probs(static_cast<size_t>(model.task_count()));
    for (int t = 0; t < model.task_count(); ++t) {
        Tensor logits = forward_logits(model, batch, t, BnMode::Eval);
        const int k = logits.dim(1);
        probs[static_cast<size_t>(t)].resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            probs[static_cast<size_t>(t)][static_cast<size_t>(i)] =
                softmax_row(&logits.data[static_cast<size_t>(i) * k], k);
        }
    }
    return probs;
}

Prediction prediction_from_probs(const IncrementalModel& model,
                                 const std::vector<std::vector<std::vector<double>>>& probs, int i,
                                 TpRule rule) {
    const int tasks = model.task_count();
    Prediction p;
    const bool has_unknown = model.heads_have_unknown;
    if (has_unknown) {
        p.unknown_probabilities.resize(static_cast<size_t>(tasks));
        for (int t = 0; t < tasks; ++t) {
            const auto& row = probs[static_cast<size_t>(t)][static_cast<size_t>(i)];
            p.unknown_probabilities[static_cast<size_t>(t)] = row.back();
        }
    }
    int best_task = 0;
    if (rule == TpRule::MinUnknown) {
        detail::require(has_unknown, "min-unknown TP rule requires heads with an unknown class");
        for (int t = 1; t < tasks; ++t) {
            if (p.unknown_probabilities[static_cast<size_t>(t)] <
                p.unknown_probabilities[static_cast<size_t>(best_task)]) {
                best_task = t;
            }
        }
    } else {
        double best_score = -1.0;
        for (int t = 0; t < tasks; ++t) {
            const auto& row = probs[static_cast<size_t>(t)][static_cast<size_t>(i)];
            const int known = model.heads[static_cast<size_t>(t)].known_classes;
            double mx = 0.0;
            for (int j = 0; j < known; ++j) mx = std::max(mx, row[static_cast<size_t>(j)]);
            if (mx > best_score) {
                best_score = mx;
                best_task = t;
            }
        }
    }
    p.predicted_task = best_task;

    const auto& row = probs[static_cast<size_t>(best_task)][static_cast<size_t>(i)];
    const int known = model.heads[static_cast<size_t>(best_task)].known_classes;
    int best_local = 0;
    for (int j = 1; j < known; ++j) {
        if (row[static_cast<size_t>(j)] > row[static_cast<size_t>(best_local)]) best_local = j;
    }
    p.predicted_local_class = best_local;
    p.predicted_global_class = model.label_map.global_class(best_task, best_local);
    p.selected_distribution = row;
    return p;
}

}  // namespace

double unknown_probability(IncrementalModel& model, const Tensor& sample, int task) {
    check_task_id(model, task);
    const TaskHead& head = model.heads[static_cast<size_t>(task)];
    Tensor logits = forward_logits(model, sample, task, BnMode::Eval);
    const std::vector<double> p = softmax_row(logits.data.data(), logits.dim(1));
    return p[static_cast<size_t>(head.unknown_index())];
}

int predict_task(IncrementalModel& model, const Tensor& sample) {
    detail::require(model.task_count() >= 1, "predict_task on a model with no tasks");
    auto probs = batch_head_probs(model, sample);
    return prediction_from_probs(model, probs, 0, TpRule::MinUnknown).predicted_task;
}

int predict_task_maxsoftmax(IncrementalModel& model, const Tensor& sample) {
    detail::require(model.task_count() >= 1, "predict_task on a model with no tasks");
    auto probs = batch_head_probs(model, sample);
    return prediction_from_probs(model, probs, 0, TpRule::MaxSoftmax).predicted_task;
}

int predict_within_task(IncrementalModel& model, const Tensor& sample, int task) {
    check_task_id(model, task);
    Tensor logits = forward_logits(model, sample, task, BnMode::Eval);
    const int known = model.heads[static_cast<size_t>(task)].known_classes;
    int best = 0;
    for (int j = 1; j < known; ++j) {
        if (logits.at2(0, j) > logits.at2(0, best)) best = j;
    }
    return best;
}

Prediction predict(IncrementalModel& model, const Tensor& sample) {
    detail::require(model.task_count() >= 1, "predict on a model with no tasks");
    auto probs = batch_head_probs(model, sample);
    return prediction_from_probs(model, probs, 0,
                                 model.heads_have_unknown ? TpRule::MinUnknown : TpRule::MaxSoftmax);
}

std::vector<Prediction> predict_batch(IncrementalModel& model, const Tensor& batch, TpRule rule) {
    detail::require(model.task_count() >= 1, "predict_batch on a model with no tasks");
    auto probs = batch_head_probs(model, batch);
    std::vector<Prediction> out;
    out.reserve(static_cast<size_t>(batch.dim(0)));
    for (int i = 0; i < batch.dim(0); ++i) {
        out.push_back(prediction_from_probs(model, probs, i, rule));
    }
    return out;
}

void write_predictions_csv(const std::filesystem::path& file, const std::vector<Prediction>& preds,
                           const std::vector<int>& sample_ids, const std::vector<int>& true_global,
                           const std::vector<int>& true_task) {
    detail::require(preds.size() == sample_ids.size() && preds.size() == true_global.size() &&
                        preds.size() == true_task.size(),
                    "predictions csv column length mismatch");
    std::ofstream out(file);
    detail::require(out.good(), "cannot write " + file.string());
    out << "# schema: tsbn.predictions.v1\n";
    out << "sample_id,true_global,true_task,pred_task,pred_global,unknown_prob_per_task\n";
    for (size_t i = 0; i < preds.size(); ++i) {
        out << sample_ids[i] << "," << true_global[i] << "," << true_task[i] << ","
            << preds[i].predicted_task << "," << preds[i].predicted_global_class << ",";
        const auto& u = preds[i].unknown_probabilities;
        for (size_t t = 0; t < u.size(); ++t) {
            if (t) out << ";";
            out << format_double(u[t]);
        }
        out << "\n";
    }
}

}  // namespace tsbn
