#include "tsbn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "tsbn/checkpoint.hpp"
#include "tsbn/loss.hpp"

namespace tsbn {

namespace {

std::vector<std::vector<int>> chunk_indices(const std::vector<int>& order, int batch) {
    std::vector<std::vector<int>> out;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch)) {
        const size_t end = std::min(order.size(), start + static_cast<size_t>(batch));
        out.emplace_back(order.begin() + static_cast<int64_t>(start),
                         order.begin() + static_cast<int64_t>(end));
    }
    return out;
}

Tensor vstack(const Tensor& a, const Tensor& b) {
    if (b.numel() == 0) return a;
    std::vector<int> shape = a.shape;
    shape[0] += b.dim(0);
    Tensor out(shape);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.numel());
    return out;
}

double ce_row(const std::vector<double>& p, int target) {
    return -std::log(std::max(p[static_cast<size_t>(target)], 1e-300));
}

}  // namespace

double stage_a_loss(const Tensor& new_logits, const std::vector<int>& new_labels,
                    const Tensor& mem_logits) {
    detail::require(new_logits.rank() == 2, "stage_a_loss expects N x (C+1) new logits");
    const int k = new_logits.dim(1);
    const int known = k - 1;
    for (int y : new_labels) {
        detail::require(y >= 0 && y < known,
                        "stage_a_loss: new-data label " + std::to_string(y) +
                            " outside known classes [0," + std::to_string(known) + ")");
    }
    double loss = 0.0;
    {
        const int n = new_logits.dim(0);
        detail::require(n == static_cast<int>(new_labels.size()), "stage_a_loss: label count mismatch");
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            sum += ce_row(softmax_row(&new_logits.data[static_cast<size_t>(i) * k], k),
                          new_labels[static_cast<size_t>(i)]);
        }
        loss += sum / n;
    }
    if (mem_logits.numel() > 0) {
        detail::require(mem_logits.rank() == 2 && mem_logits.dim(1) == k,
                        "stage_a_loss: memory logits must share the new-data head");
        const int n = mem_logits.dim(0);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            sum += ce_row(softmax_row(&mem_logits.data[static_cast<size_t>(i) * k], k), known);
        }
        loss += sum / n;
    }
    return loss;
}

double stage_b_loss(IncrementalModel& model, const Dataset& train,
                    const std::vector<Exemplar>& batch, int tasks, const Normalization& norm) {
    detail::require(tasks >= 1, "stage_b_loss: needs at least one completed task");
    detail::require(tasks <= model.task_count(), "stage_b_loss: more tasks than the model holds");
    detail::require(!batch.empty(), "stage_b_loss: empty batch");

    std::vector<int> indices;
    for (const Exemplar& e : batch) indices.push_back(e.dataset_index);
    Tensor x = normalize_batch(train.gather(indices), norm);

    double loss = 0.0;
    for (int j = 0; j < tasks; ++j) {
        Tensor logits = forward_logits(model, x, j, BnMode::Eval);
        const int k = logits.dim(1);
        const TaskHead& head = model.heads[static_cast<size_t>(j)];
        for (size_t i = 0; i < batch.size(); ++i) {
            const std::vector<double> p = softmax_row(&logits.data[i * static_cast<size_t>(k)], k);
            const int target = batch[i].task_id == j ? model.label_map.local_class(batch[i].global_class)
                                                     : head.unknown_index();
            loss += ce_row(p, target);
        }
    }
    return loss / (static_cast<double>(batch.size()) * tasks);
}

PretrainResult pretrain_backbone(Backbone& backbone, const Dataset& pretrain,
                                 const PretrainConfig& cfg, const Normalization& norm,
                                 AugmentPolicy augment, uint64_t seed) {
    detail::require(pretrain.size() > 0, "pretrain split is empty");
    detail::require(cfg.epochs >= 1, "pretrain epochs must be >= 1");
    detail::require(!backbone.frozen(), "backbone already frozen");

    const int d = backbone.feature_dim();
    const int classes = pretrain.num_classes();
    std::mt19937 init_rng(static_cast<uint32_t>(mix_seed(seed, 0x9e7e)));
    const float bound = 1.0f / std::sqrt(static_cast<float>(d));
    std::uniform_real_distribution<float> dist(-bound, bound);
    Tensor w({classes, d});
    for (auto& v : w.data) v = dist(init_rng);
    Parameter head_w(std::move(w));
    Parameter head_b(Tensor({classes}));

    SgdOptimizer opt(cfg.sgd);
    for (Parameter& p : backbone.conv_params()) opt.add_param(&p, true);
    for (BatchNormState& s : backbone.template_bn()) {
        opt.add_param(&s.gamma, false);
        opt.add_param(&s.beta, false);
    }
    opt.add_param(&head_w, true);
    opt.add_param(&head_b, false);

    std::vector<int> order(static_cast<size_t>(pretrain.size()));
    std::iota(order.begin(), order.end(), 0);

    PretrainResult result;
    set_bn_mode(backbone.template_bn(), BnMode::Train);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937 rng(static_cast<uint32_t>(mix_seed(seed, 0xb0, static_cast<uint64_t>(epoch))));
        std::shuffle(order.begin(), order.end(), rng);
        std::mt19937 aug_rng(static_cast<uint32_t>(mix_seed(seed, 0xa06, static_cast<uint64_t>(epoch))));
        double epoch_loss = 0.0;
        int steps = 0;
        for (const std::vector<int>& chunk : chunk_indices(order, cfg.batch)) {
            Tensor x = augment_batch(pretrain.gather(chunk), augment, norm, aug_rng, true);
            std::vector<int> y;
            for (int i : chunk) y.push_back(pretrain.labels[static_cast<size_t>(i)]);

            BackboneTrace trace;
            set_bn_mode(backbone.template_bn(), BnMode::Train);
            Tensor features = backbone.forward(x, backbone.template_bn(), &trace);
            LinearCache lc;
            Tensor logits = linear_forward(features, head_w, head_b, &lc);
            CrossEntropyResult ce = softmax_cross_entropy(logits, y);

            opt.zero_grad();
            Tensor feat_grad = linear_backward(ce.logit_grad, lc, head_w, head_b);
            backbone.backward(feat_grad, trace, backbone.template_bn());
            opt.step(epoch);
            epoch_loss += ce.loss;
            ++steps;
        }
        result.epoch_losses.push_back(epoch_loss / std::max(steps, 1));
    }

    // Frozen from here on: conv kernels are fixed, the BN states become the
    // initialization template for every task bank.
    backbone.freeze();
    set_bn_mode(backbone.template_bn(), BnMode::Eval);
    int correct = 0;
    for (const std::vector<int>& chunk : chunk_indices(order, cfg.batch)) {
        Tensor x = normalize_batch(pretrain.gather(chunk), norm);
        Tensor features = backbone.forward(x, backbone.template_bn());
        Tensor logits = linear_forward(features, head_w, head_b);
        for (size_t i = 0; i < chunk.size(); ++i) {
            int best = 0;
            for (int j = 1; j < classes; ++j) {
                if (logits.at2(static_cast<int>(i), j) > logits.at2(static_cast<int>(i), best)) best = j;
            }
            if (best == pretrain.labels[static_cast<size_t>(chunk[i])]) ++correct;
        }
    }
    result.train_accuracy = static_cast<double>(correct) / pretrain.size();
    return result;
}

StageResult train_stage_a(IncrementalModel& model, const Dataset& train,
                          const TaskSchedule& schedule, int task, const ExemplarMemory& memory,
                          const StageAConfig& cfg, const Normalization& norm,
                          AugmentPolicy augment, bool task_specific_bn, bool unknown_class,
                          uint64_t seed) {
    check_task_id(model, task);
    detail::require(cfg.epochs >= 1, "stage A epochs must be >= 1");
    const std::vector<int>& classes = schedule.groups[static_cast<size_t>(task)];

    std::vector<int> sample_indices;
    std::vector<int> local_of_index(static_cast<size_t>(train.size()), -1);
    for (size_t local = 0; local < classes.size(); ++local) {
        for (int i : train.indices_of_class(classes[local])) {
            sample_indices.push_back(i);
            local_of_index[static_cast<size_t>(i)] = static_cast<int>(local);
        }
    }
    detail::require(!sample_indices.empty(),
                    "stage A: task " + std::to_string(task) + " has no training samples");

    BNBank& bank = model.banks[static_cast<size_t>(task)];
    TaskHead& head = model.heads[static_cast<size_t>(task)];
    SgdOptimizer opt(cfg.sgd);
    if (task_specific_bn) {
        for (BatchNormState& s : bank.sites) {
            opt.add_param(&s.gamma, false);
            opt.add_param(&s.beta, false);
        }
    }
    opt.add_param(&head.weight, true);
    opt.add_param(&head.bias, false);

    const bool use_memory = unknown_class && !memory.empty();
    StageResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order = sample_indices;
        std::mt19937 rng(static_cast<uint32_t>(
            mix_seed(seed, 0x5a, static_cast<uint64_t>(task), static_cast<uint64_t>(epoch))));
        std::shuffle(order.begin(), order.end(), rng);
        std::mt19937 aug_rng(static_cast<uint32_t>(
            mix_seed(seed, 0xa09, static_cast<uint64_t>(task), static_cast<uint64_t>(epoch))));
        const auto mem_batches =
            use_memory ? replay_epoch(memory, cfg.batch_mem,
                                      mix_seed(seed, 0x3e, static_cast<uint64_t>(task),
                                               static_cast<uint64_t>(epoch)))
                       : std::vector<std::vector<Exemplar>>{};

        double epoch_loss = 0.0;
        int steps = 0;
        const auto new_chunks = chunk_indices(order, cfg.batch_new);
        for (size_t step = 0; step < new_chunks.size(); ++step) {
            const std::vector<int>& chunk = new_chunks[step];
            const int n_new = static_cast<int>(chunk.size());
            std::vector<int> targets;
            for (int i : chunk) targets.push_back(local_of_index[static_cast<size_t>(i)]);

            std::vector<int> mem_indices;
            if (!mem_batches.empty()) {
                for (const Exemplar& e : mem_batches[step % mem_batches.size()]) {
                    mem_indices.push_back(e.dataset_index);
                }
            }
            const int n_mem = static_cast<int>(mem_indices.size());

            Tensor x_new = augment_batch(train.gather(chunk), augment, norm, aug_rng, true);
            Tensor x = x_new;
            if (n_mem > 0) {
                Tensor x_mem = augment_batch(train.gather(mem_indices), augment, norm, aug_rng, true);
                x = vstack(x_new, x_mem);
            }

            opt.zero_grad();
            if (task_specific_bn) {
                ModelTrace trace;
                Tensor logits = forward_logits(model, x, task, BnMode::Train, &trace);
                const int k = logits.dim(1);
                Tensor grad(logits.shape);
                double loss = 0.0;
                for (int i = 0; i < logits.dim(0); ++i) {
                    const std::vector<double> p = softmax_row(&logits.data[static_cast<size_t>(i) * k], k);
                    const bool is_new = i < n_new;
                    const int target = is_new ? targets[static_cast<size_t>(i)] : head.unknown_index();
                    const double scale = is_new ? 1.0 / n_new : 1.0 / n_mem;
                    loss += ce_row(p, target) * scale;
                    for (int j = 0; j < k; ++j) {
                        grad.at2(i, j) = static_cast<float>(
                            (p[static_cast<size_t>(j)] - (j == target ? 1.0 : 0.0)) * scale);
                    }
                }
                Tensor feat_grad = linear_backward(grad, trace.head, head.weight, head.bias);
                model.backbone.backward(feat_grad, trace.backbone, bank.sites);
                opt.step(epoch);
                epoch_loss += loss;
            } else {
                // Shared-BN ablation: pretrained statistics stay fixed, only
                // the head trains, so the backbone runs in eval mode.
                Tensor features = forward_features(model, x, task, BnMode::Eval);
                LinearCache lc;
                Tensor logits = linear_forward(features, head.weight, head.bias, &lc);
                const int k = logits.dim(1);
                Tensor grad(logits.shape);
                double loss = 0.0;
                for (int i = 0; i < logits.dim(0); ++i) {
                    const std::vector<double> p = softmax_row(&logits.data[static_cast<size_t>(i) * k], k);
                    const bool is_new = i < n_new;
                    const int target = is_new ? targets[static_cast<size_t>(i)]
                                              : head.unknown_index();
                    const double scale = is_new ? 1.0 / n_new : 1.0 / n_mem;
                    loss += ce_row(p, target) * scale;
                    for (int j = 0; j < k; ++j) {
                        grad.at2(i, j) = static_cast<float>(
                            (p[static_cast<size_t>(j)] - (j == target ? 1.0 : 0.0)) * scale);
                    }
                }
                linear_backward(grad, lc, head.weight, head.bias);
                opt.step(epoch);
                epoch_loss += loss;
            }
            ++steps;
        }
        result.epoch_losses.push_back(epoch_loss / std::max(steps, 1));
    }
    return result;
}

StageResult train_stage_b(IncrementalModel& model, const ExemplarMemory& memory,
                          const Dataset& train, const StageBConfig& cfg,
                          const Normalization& norm, uint64_t seed) {
    StageResult result;
    if (cfg.epochs == 0) return result;
    if (memory.empty()) return result;  // degenerate config, nothing to align against

    const int tasks = model.task_count();
    detail::require(tasks >= 1, "stage B requires at least one task");
    const std::vector<Exemplar> exemplars = memory.all();
    const int n = static_cast<int>(exemplars.size());
    const int d = model.backbone.feature_dim();

    // phi and every omega are fixed during alignment, so eval-mode features
    // are constant: compute them once per sub-model.
    std::vector<Tensor> feats;
    {
        std::vector<int> indices;
        for (const Exemplar& e : exemplars) indices.push_back(e.dataset_index);
        for (int j = 0; j < tasks; ++j) {
            Tensor f({n, d});
            constexpr int kBatch = 128;
            for (int start = 0; start < n; start += kBatch) {
                const int end = std::min(n, start + kBatch);
                std::vector<int> chunk(indices.begin() + start, indices.begin() + end);
                Tensor x = normalize_batch(train.gather(chunk), norm);
                Tensor fb = forward_features(model, x, j, BnMode::Eval);
                std::copy(fb.data.begin(), fb.data.end(), f.data.begin() + static_cast<int64_t>(start) * d);
            }
            feats.push_back(std::move(f));
        }
    }

    SgdOptimizer opt(cfg.sgd);
    for (TaskHead& head : model.heads) {
        opt.add_param(&head.weight, true);
        opt.add_param(&head.bias, false);
    }

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937 rng(static_cast<uint32_t>(mix_seed(seed, 0x5b, static_cast<uint64_t>(epoch))));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        int steps = 0;
        for (const std::vector<int>& chunk : chunk_indices(order, cfg.batch)) {
            const int b = static_cast<int>(chunk.size());
            opt.zero_grad();
            double loss = 0.0;
            const double scale = 1.0 / (static_cast<double>(b) * tasks);
            for (int j = 0; j < tasks; ++j) {
                TaskHead& head = model.heads[static_cast<size_t>(j)];
                Tensor rows({b, d});
                for (int i = 0; i < b; ++i) {
                    const float* src = &feats[static_cast<size_t>(j)].data[static_cast<size_t>(chunk[static_cast<size_t>(i)]) * d];
                    std::copy(src, src + d, rows.data.begin() + static_cast<int64_t>(i) * d);
                }
                LinearCache lc;
                Tensor logits = linear_forward(rows, head.weight, head.bias, &lc);
                const int k = logits.dim(1);
                Tensor grad(logits.shape);
                for (int i = 0; i < b; ++i) {
                    const Exemplar& e = exemplars[static_cast<size_t>(chunk[static_cast<size_t>(i)])];
                    const int target = e.task_id == j ? model.label_map.local_class(e.global_class)
                                                      : head.unknown_index();
                    const std::vector<double> p = softmax_row(&logits.data[static_cast<size_t>(i) * k], k);
                    loss += ce_row(p, target) * scale;
                    for (int c = 0; c < k; ++c) {
                        grad.at2(i, c) = static_cast<float>(
                            (p[static_cast<size_t>(c)] - (c == target ? 1.0 : 0.0)) * scale);
                    }
                }
                linear_backward(grad, lc, head.weight, head.bias);
            }
            opt.step(epoch);
            epoch_loss += loss;
            ++steps;
        }
        result.epoch_losses.push_back(epoch_loss / std::max(steps, 1));
    }
    return result;
}

PhaseEval evaluate_phase(IncrementalModel& model, const Dataset& test, const TaskSchedule& schedule,
                         int upto_task, const Normalization& norm, TpRule rule, int batch) {
    PhaseEval eval;
    const std::vector<int> classes = schedule.classes_up_to(upto_task);
    for (int i = 0; i < test.size(); ++i) {
        const int label = test.labels[static_cast<size_t>(i)];
        if (model.label_map.contains(label)) {
            eval.sample_ids.push_back(i);
            eval.true_global.push_back(label);
            eval.true_task.push_back(model.label_map.task_of(label));
        }
    }
    detail::require(!eval.sample_ids.empty(), "evaluation set is empty");

    for (size_t start = 0; start < eval.sample_ids.size(); start += static_cast<size_t>(batch)) {
        const size_t end = std::min(eval.sample_ids.size(), start + static_cast<size_t>(batch));
        std::vector<int> chunk(eval.sample_ids.begin() + static_cast<int64_t>(start),
                               eval.sample_ids.begin() + static_cast<int64_t>(end));
        Tensor x = normalize_batch(test.gather(chunk), norm);
        std::vector<Prediction> preds = predict_batch(model, x, rule);
        eval.predictions.insert(eval.predictions.end(), preds.begin(), preds.end());
    }

    std::vector<int> pred_global, pred_task;
    for (const Prediction& p : eval.predictions) {
        pred_global.push_back(p.predicted_global_class);
        pred_task.push_back(p.predicted_task);
    }

    PhaseRecord& rec = eval.record;
    rec.phase = upto_task + 1;
    for (int c : classes) rec.class_recalls[c] = class_recall(pred_global, eval.true_global, c);
    rec.mcr = mcr(pred_global, eval.true_global, classes);
    const DecompositionCounts dc =
        decomposition_audit(pred_task, eval.true_task, pred_global, eval.true_global);
    rec.tp_accuracy = dc.tp_accuracy();
    rec.wp_given_tp = dc.wp_given_tp();
    rec.overall_accuracy = dc.overall();
    for (int j = 0; j <= upto_task; ++j) {
        rec.per_task_mcr.push_back(mcr(pred_global, eval.true_global,
                                       schedule.groups[static_cast<size_t>(j)]));
    }
    return eval;
}

RunOutput run_incremental(IncrementalModel& model, const DataBundle& data,
                          const TaskSchedule& schedule, const RunSettings& settings) {
    detail::require(model.backbone.frozen(), "run_incremental requires a frozen backbone");
    detail::require(model.task_count() == 0, "run_incremental requires a fresh model");
    detail::require(settings.flags.unknown_class || !settings.flags.alignment,
                    "alignment requires the unknown class");
    model.heads_have_unknown = settings.flags.unknown_class;

    const bool artifacts = !settings.run_dir.empty();
    std::ofstream losses;
    if (artifacts) {
        std::filesystem::create_directories(settings.run_dir / "checkpoints");
        losses.open(settings.run_dir / "losses.csv");
        losses << "# schema: tsbn.losses.v1\nphase,stage,epoch,loss\n";
    }
    auto log_line = [&](const std::string& s) {
        if (settings.log) settings.log(s);
    };

    const TpRule rule = settings.flags.unknown_class ? TpRule::MinUnknown : TpRule::MaxSoftmax;
    ExemplarMemory memory(settings.memory_budget);
    std::mt19937 task_rng(static_cast<uint32_t>(mix_seed(settings.seed, 0xadd)));

    RunOutput out;
    out.log.schedule_length = schedule.task_count();
    out.log.schedule_hash = schedule.hash();

    for (int t = 0; t < schedule.task_count(); ++t) {
        add_task(model, schedule.groups[static_cast<size_t>(t)], task_rng);

        StageResult a = train_stage_a(model, data.train, schedule, t, memory, settings.stage_a,
                                      settings.norm, settings.augment,
                                      settings.flags.task_specific_bn, settings.flags.unknown_class,
                                      mix_seed(settings.seed, 0xaaaa, static_cast<uint64_t>(t)));
        if (artifacts) {
            for (size_t e = 0; e < a.epoch_losses.size(); ++e) {
                losses << (t + 1) << ",A," << e << "," << format_double(a.epoch_losses[e]) << "\n";
            }
        }

        update_memory(memory, model, data.train, schedule, t, settings.norm, 64,
                      settings.memory_policy, mix_seed(settings.seed, 0x3e3e, static_cast<uint64_t>(t)));

        if (settings.flags.alignment && settings.flags.unknown_class) {
            StageResult b = train_stage_b(model, memory, data.train, settings.stage_b, settings.norm,
                                          mix_seed(settings.seed, 0xbbbb, static_cast<uint64_t>(t)));
            if (artifacts) {
                for (size_t e = 0; e < b.epoch_losses.size(); ++e) {
                    losses << (t + 1) << ",B," << e << "," << format_double(b.epoch_losses[e]) << "\n";
                }
            }
        }

        PhaseEval eval = evaluate_phase(model, data.test, schedule, t, settings.norm, rule,
                                        settings.eval_batch);
        const ParameterReport report = parameter_report(model);
        eval.record.trainable_params = report.total_trainable;
        eval.record.total_params = report.total_params;
        out.log.records.push_back(eval.record);
        log_line("phase " + std::to_string(t + 1) + ": mcr=" + format_double(eval.record.mcr) +
                 " tp=" + format_double(eval.record.tp_accuracy));

        if (artifacts) {
            save_experiment_checkpoint(model, memory, t, out.log,
                                       settings.run_dir / "checkpoints" /
                                           ("phase_" + std::to_string(t + 1) + ".ckpt"));
        }
        if (t + 1 == schedule.task_count()) out.final_eval = std::move(eval);
    }

    if (artifacts) {
        write_metrics_csv(out.log, settings.run_dir / "metrics.csv");
        write_metrics_json(out.log, settings.run_dir / "metrics.json");
        write_predictions_csv(settings.run_dir / "predictions.csv", out.final_eval.predictions,
                              out.final_eval.sample_ids, out.final_eval.true_global,
                              out.final_eval.true_task);
    }
    return out;
}

}  // namespace tsbn
