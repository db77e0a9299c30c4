#include "tsbn/runner.hpp"

#include <cstdlib>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "tsbn/checkpoint.hpp"
#include "tsbn/report.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace tsbn {

namespace {

void log_to(const std::function<void(const std::string&)>& log, const std::string& msg) {
    if (log) log(msg);
}

double mean_of(const std::vector<double>& xs) {
    return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
}

// Unbiased sample variance; zero for fewer than two runs.
double variance_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return acc / (static_cast<double>(xs.size()) - 1.0);
}

}  // namespace

DataBundle prepare_data(const ExperimentConfig& cfg) {
    if (cfg.data.source == "synthetic") {
        return synthesize(cfg.data.synthetic);
    }
    if (cfg.data.source == "directory") {
        return load_image_directory(cfg.data.path, cfg.data.image_size);
    }
    DataBundle bundle;
    bundle.train = load_raw_dataset(fs::path(cfg.data.path) / "train.bin");
    bundle.test = load_raw_dataset(fs::path(cfg.data.path) / "test.bin");
    const fs::path pre = fs::path(cfg.data.path) / "pretrain.bin";
    if (fs::exists(pre)) bundle.pretrain = load_raw_dataset(pre);
    return bundle;
}

TaskSchedule build_schedule(const ExperimentConfig& cfg, const DataBundle& data, uint64_t seed) {
    if (!cfg.schedule.named_order.empty()) {
        return split_tasks_named(data.train, cfg.schedule.named_order);
    }
    return split_tasks(data.train.num_classes(), cfg.schedule.tasks, cfg.schedule.classes_per_task,
                       seed);
}

Backbone prepare_backbone(const ExperimentConfig& cfg, const DataBundle& data,
                          const std::function<void(const std::string&)>& log) {
    if (!cfg.pretrain.checkpoint.empty()) {
        log_to(log, "loading backbone checkpoint " + cfg.pretrain.checkpoint);
        return load_backbone_checkpoint(cfg.pretrain.checkpoint);
    }
    BackboneSpec spec = cfg.backbone.arch == "desk_cnn" ? desk_cnn_spec(cfg.backbone.channels)
                                                        : resnet18_spec();
    Backbone backbone(spec, cfg.backbone.init_seed);
    if (!cfg.pretrain.enabled) {
        log_to(log, "pretraining disabled: freezing randomly initialized backbone");
        backbone.freeze();
        return backbone;
    }
    detail::require(data.pretrain.size() > 0,
                    "pretraining enabled but the pretrain split is empty");
    log_to(log, "pretraining backbone on " + std::to_string(data.pretrain.size()) + " samples");
    const PretrainResult r = pretrain_backbone(backbone, data.pretrain, cfg.pretrain, cfg.data.norm,
                                               cfg.resolved_augment(), cfg.backbone.init_seed);
    log_to(log, "pretrain train accuracy: " + format_double(r.train_accuracy));
    return backbone;
}

SingleRunResult execute_single_run(const ExperimentConfig& cfg, uint64_t seed,
                                   const DataBundle& data, const Backbone& backbone,
                                   const fs::path& run_dir,
                                   const std::function<void(const std::string&)>& log) {
    fs::create_directories(run_dir);

    ExperimentConfig snapshot = cfg;
    snapshot.seeds = {seed};
    save_experiment_config(snapshot, run_dir / "config.json");

    const TaskSchedule schedule = build_schedule(cfg, data, seed);

    IncrementalModel model;
    model.backbone = backbone;
    model.bn_init = cfg.resolved_bn_init();
    model.heads_have_unknown = cfg.ablation.unknown_class;

    RunSettings settings;
    settings.stage_a = cfg.stage_a;
    settings.stage_b = cfg.stage_b;
    if (!cfg.ablation.alignment) settings.stage_b.epochs = 0;
    settings.flags = cfg.ablation;
    settings.memory_budget = cfg.memory_budget;
    settings.memory_policy = cfg.resolved_memory_policy();
    settings.norm = cfg.data.norm;
    settings.augment = cfg.resolved_augment();
    settings.eval_batch = cfg.eval_batch;
    settings.seed = seed;
    settings.run_dir = run_dir;
    settings.log = log;

    RunOutput out = run_incremental(model, data, schedule, settings);
    generate_report(run_dir);

    SingleRunResult r;
    r.seed = seed;
    r.log = out.log;
    auto [last, avg] = summarize(out.log);
    r.last_mcr = last;
    r.avg_mcr = avg;
    r.final_tp_accuracy = out.log.records.back().tp_accuracy;
    int task1 = 0;
    for (const Prediction& p : out.final_eval.predictions) {
        if (p.predicted_task == 0) ++task1;
    }
    r.tp_task1_fraction = out.final_eval.predictions.empty()
                              ? 0.0
                              : static_cast<double>(task1) / out.final_eval.predictions.size();
    r.run_dir = run_dir;
    return r;
}

namespace {

void write_aggregate(const std::vector<SingleRunResult>& runs, const fs::path& root) {
    json j;
    j["schema"] = "tsbn.aggregate.v1";
    json per_seed = json::array();
    std::vector<double> lasts, avgs, tps;
    for (const SingleRunResult& r : runs) {
        json s;
        s["seed"] = r.seed;
        s["last_mcr"] = r.last_mcr;
        s["avg_mcr"] = r.avg_mcr;
        s["final_tp_acc"] = r.final_tp_accuracy;
        s["tp_task1_fraction"] = r.tp_task1_fraction;
        per_seed.push_back(s);
        lasts.push_back(r.last_mcr);
        avgs.push_back(r.avg_mcr);
        tps.push_back(r.final_tp_accuracy);
    }
    j["per_seed"] = per_seed;
    j["last_mcr_mean"] = mean_of(lasts);
    j["last_mcr_variance"] = variance_of(lasts);
    j["avg_mcr_mean"] = mean_of(avgs);
    j["avg_mcr_variance"] = variance_of(avgs);
    j["final_tp_acc_mean"] = mean_of(tps);
    j["final_tp_acc_variance"] = variance_of(tps);
    std::ofstream jf(root / "aggregate.json");
    jf << j.dump(2) << "\n";

    std::ofstream cf(root / "aggregate.csv");
    cf << "# schema: tsbn.aggregate.v1\n";
    cf << "metric,mean,variance\n";
    cf << "last_mcr," << format_double(mean_of(lasts)) << "," << format_double(variance_of(lasts)) << "\n";
    cf << "avg_mcr," << format_double(mean_of(avgs)) << "," << format_double(variance_of(avgs)) << "\n";
    cf << "final_tp_acc," << format_double(mean_of(tps)) << "," << format_double(variance_of(tps))
       << "\n";
}

}  // namespace

ExperimentResult execute_experiment(const ExperimentConfig& cfg, const fs::path& out_root,
                                    const std::function<void(const std::string&)>& log) {
    fs::create_directories(out_root);
    save_experiment_config(cfg, out_root / "config.json");

    const DataBundle data = prepare_data(cfg);
    Backbone backbone = prepare_backbone(cfg, data, log);
    // Sub-runs reference the shared frozen backbone through their snapshots.
    const fs::path backbone_file = out_root / "backbone.ckpt";
    save_backbone_checkpoint(backbone, backbone_file);
    ExperimentConfig sub_cfg = cfg;
    sub_cfg.pretrain.checkpoint = backbone_file.string();

    ExperimentResult result;
    result.root = out_root;
    for (uint64_t seed : cfg.seeds) {
        const fs::path run_dir = out_root / ("seed_" + std::to_string(seed));
        log_to(log, "=== seed " + std::to_string(seed) + " -> " + run_dir.string());
        result.runs.push_back(execute_single_run(sub_cfg, seed, data, backbone, run_dir, log));
    }
    write_aggregate(result.runs, out_root);
    return result;
}

std::vector<AblationVariant> ablation_variants() {
    return {
        {"tsbn_only", {true, false, false}},
        {"tsbn_unknown", {true, true, false}},
        {"unknown_alignment", {false, true, true}},
        {"full", {true, true, true}},
    };
}

AblationResult execute_ablation(const ExperimentConfig& cfg, const fs::path& out_root,
                                const std::function<void(const std::string&)>& log) {
    fs::create_directories(out_root);
    save_experiment_config(cfg, out_root / "config.json");

    const DataBundle data = prepare_data(cfg);
    Backbone backbone = prepare_backbone(cfg, data, log);
    const fs::path backbone_file = out_root / "backbone.ckpt";
    save_backbone_checkpoint(backbone, backbone_file);

    AblationResult result;
    result.root = out_root;
    result.variants = ablation_variants();
    for (const AblationVariant& variant : result.variants) {
        ExperimentConfig vcfg = cfg;
        vcfg.run_name = cfg.run_name + "_" + variant.name;
        vcfg.ablation = variant.flags;
        vcfg.pretrain.checkpoint = backbone_file.string();
        if (!variant.flags.unknown_class) vcfg.tp_rule = "max_softmax";
        if (!variant.flags.alignment) vcfg.stage_b.epochs = 0;
        validate_experiment_config(vcfg);

        const fs::path vdir = out_root / variant.name;
        fs::create_directories(vdir);
        ExperimentResult vres;
        vres.root = vdir;
        for (uint64_t seed : cfg.seeds) {
            const fs::path run_dir = vdir / ("seed_" + std::to_string(seed));
            log_to(log, "=== variant " + variant.name + " seed " + std::to_string(seed));
            vres.runs.push_back(execute_single_run(vcfg, seed, data, backbone, run_dir, log));
        }
        write_aggregate(vres.runs, vdir);
        result.results.push_back(std::move(vres));
    }

    // Comparative table, rows in the studied order.
    std::ofstream csv(out_root / "ablation.csv");
    csv << "# schema: tsbn.ablation.v1\n";
    csv << "variant,task_specific_bn,unknown_class,alignment,last_mcr,avg_mcr,final_tp_acc,"
           "tp_task1_fraction,schedule_hash\n";
    std::ofstream md(out_root / "ablation.md");
    md << "# Ablation study\n\n";
    md << "| T.S.BN | Unknown | Alignment | Last-MCR | Avg-MCR |\n";
    md << "|:------:|:-------:|:---------:|---------:|--------:|\n";
    for (size_t v = 0; v < result.variants.size(); ++v) {
        const AblationVariant& variant = result.variants[v];
        std::vector<double> lasts, avgs, tps, fracs;
        uint64_t schedule_hash = 0;
        for (const SingleRunResult& r : result.results[v].runs) {
            lasts.push_back(r.last_mcr);
            avgs.push_back(r.avg_mcr);
            tps.push_back(r.final_tp_accuracy);
            fracs.push_back(r.tp_task1_fraction);
            schedule_hash = r.log.schedule_hash;
        }
        csv << variant.name << "," << variant.flags.task_specific_bn << ","
            << variant.flags.unknown_class << "," << variant.flags.alignment << ","
            << format_double(mean_of(lasts)) << "," << format_double(mean_of(avgs)) << ","
            << format_double(mean_of(tps)) << "," << format_double(mean_of(fracs)) << ","
            << schedule_hash << "\n";
        auto mark = [](bool on) { return on ? "yes" : "-"; };
        md << "| " << mark(variant.flags.task_specific_bn) << " | " << mark(variant.flags.unknown_class)
           << " | " << mark(variant.flags.alignment) << " | " << format_double(mean_of(lasts)) << " | "
           << format_double(mean_of(avgs)) << " |\n";
    }
    return result;
}

fs::path resolve_output_root(const ExperimentConfig& cfg) {
    const char* env = std::getenv("TSBN_RUN_DIR");
    const fs::path base = env && *env ? fs::path(env) : fs::path(cfg.output_dir);
    return base / cfg.run_name;
}

}  // namespace tsbn
