#include "tsbn/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

using nlohmann::json;

namespace tsbn {

namespace {

[[noreturn]] void bad_field(const std::string& path, const std::string& why) {
    throw std::invalid_argument("config error at " + path + ": " + why);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& path) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        bad_field(path + "." + key, e.what());
    }
}

SGDConfig parse_sgd(const json& j, const SGDConfig& defaults, const std::string& path) {
    SGDConfig cfg = defaults;
    cfg.learning_rate = get_or(j, "learning_rate", cfg.learning_rate, path);
    cfg.momentum = get_or(j, "momentum", cfg.momentum, path);
    cfg.weight_decay = get_or(j, "weight_decay", cfg.weight_decay, path);
    cfg.milestones = get_or(j, "milestones", cfg.milestones, path);
    cfg.decay_factor = get_or(j, "decay_factor", cfg.decay_factor, path);
    return cfg;
}

json sgd_to_json(const SGDConfig& cfg) {
    json j;
    j["learning_rate"] = cfg.learning_rate;
    j["momentum"] = cfg.momentum;
    j["weight_decay"] = cfg.weight_decay;
    j["milestones"] = cfg.milestones;
    j["decay_factor"] = cfg.decay_factor;
    return j;
}

void check_sgd(const SGDConfig& cfg, const std::string& path) {
    try {
        validate_sgd_config(cfg);
    } catch (const std::exception& e) {
        bad_field(path, e.what());
    }
}

}  // namespace

TpRule ExperimentConfig::resolved_tp_rule() const {
    if (tp_rule == "max_softmax" || !ablation.unknown_class) return TpRule::MaxSoftmax;
    return TpRule::MinUnknown;
}

BnInitPolicy ExperimentConfig::resolved_bn_init() const {
    if (bn_init == "previous") return BnInitPolicy::Previous;
    if (bn_init == "fresh") return BnInitPolicy::Fresh;
    return BnInitPolicy::Pretrained;
}

SelectionPolicy ExperimentConfig::resolved_memory_policy() const {
    return memory_policy == "random" ? SelectionPolicy::Random : SelectionPolicy::Herding;
}

AugmentPolicy ExperimentConfig::resolved_augment() const {
    return augment_policy_from_string(data.augment);
}

ExperimentConfig parse_experiment_config(const json& j) {
    ExperimentConfig cfg;
    cfg.run_name = get_or<std::string>(j, "run_name", cfg.run_name, "");
    cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir, "");
    cfg.seeds = get_or<std::vector<uint64_t>>(j, "seeds", cfg.seeds, "");

    if (j.contains("data")) {
        const json& d = j.at("data");
        cfg.data.source = get_or<std::string>(d, "source", cfg.data.source, "data");
        cfg.data.path = get_or<std::string>(d, "path", cfg.data.path, "data");
        cfg.data.image_size = get_or(d, "image_size", cfg.data.image_size, "data");
        cfg.data.augment = get_or<std::string>(d, "augment", cfg.data.augment, "data");
        if (d.contains("normalize_mean")) {
            cfg.data.norm.mean = d.at("normalize_mean").get<std::vector<float>>();
        }
        if (d.contains("normalize_std")) {
            cfg.data.norm.std_dev = d.at("normalize_std").get<std::vector<float>>();
        }
        if (d.contains("synthetic")) {
            const json& s = d.at("synthetic");
            SyntheticSpec& spec = cfg.data.synthetic;
            spec.num_classes = get_or(s, "num_classes", spec.num_classes, "data.synthetic");
            spec.pretrain_classes = get_or(s, "pretrain_classes", spec.pretrain_classes, "data.synthetic");
            spec.train_per_class = get_or(s, "train_per_class", spec.train_per_class, "data.synthetic");
            spec.test_per_class = get_or(s, "test_per_class", spec.test_per_class, "data.synthetic");
            spec.pretrain_per_class =
                get_or(s, "pretrain_per_class", spec.pretrain_per_class, "data.synthetic");
            spec.blob_radius = get_or(s, "blob_radius", spec.blob_radius, "data.synthetic");
            spec.noise_sigma = get_or(s, "noise_sigma", spec.noise_sigma, "data.synthetic");
            spec.seed = get_or(s, "seed", spec.seed, "data.synthetic");
            spec.image_size = cfg.data.image_size;
        }
    }
    cfg.data.synthetic.image_size = cfg.data.image_size;

    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        cfg.schedule.tasks = get_or(s, "tasks", cfg.schedule.tasks, "schedule");
        cfg.schedule.classes_per_task =
            get_or(s, "classes_per_task", cfg.schedule.classes_per_task, "schedule");
        cfg.schedule.named_order = get_or<std::vector<std::vector<std::string>>>(
            s, "named_order", cfg.schedule.named_order, "schedule");
        if (!cfg.schedule.named_order.empty()) {
            cfg.schedule.tasks = static_cast<int>(cfg.schedule.named_order.size());
        }
    }

    if (j.contains("backbone")) {
        const json& b = j.at("backbone");
        cfg.backbone.arch = get_or<std::string>(b, "arch", cfg.backbone.arch, "backbone");
        cfg.backbone.channels = get_or(b, "channels", cfg.backbone.channels, "backbone");
        cfg.backbone.init_seed = get_or(b, "init_seed", cfg.backbone.init_seed, "backbone");
    }

    if (j.contains("pretrain")) {
        const json& p = j.at("pretrain");
        cfg.pretrain.enabled = get_or(p, "enabled", cfg.pretrain.enabled, "pretrain");
        cfg.pretrain.epochs = get_or(p, "epochs", cfg.pretrain.epochs, "pretrain");
        cfg.pretrain.batch = get_or(p, "batch", cfg.pretrain.batch, "pretrain");
        cfg.pretrain.checkpoint = get_or<std::string>(p, "checkpoint", cfg.pretrain.checkpoint, "pretrain");
        if (p.contains("sgd")) cfg.pretrain.sgd = parse_sgd(p.at("sgd"), cfg.pretrain.sgd, "pretrain.sgd");
    }

    if (j.contains("stage_a")) {
        const json& a = j.at("stage_a");
        cfg.stage_a.epochs = get_or(a, "epochs", cfg.stage_a.epochs, "stage_a");
        cfg.stage_a.batch_new = get_or(a, "batch_new", cfg.stage_a.batch_new, "stage_a");
        cfg.stage_a.batch_mem = get_or(a, "batch_mem", cfg.stage_a.batch_mem, "stage_a");
        if (a.contains("sgd")) cfg.stage_a.sgd = parse_sgd(a.at("sgd"), cfg.stage_a.sgd, "stage_a.sgd");
    }
    if (j.contains("stage_b")) {
        const json& b = j.at("stage_b");
        cfg.stage_b.epochs = get_or(b, "epochs", cfg.stage_b.epochs, "stage_b");
        cfg.stage_b.batch = get_or(b, "batch", cfg.stage_b.batch, "stage_b");
        if (b.contains("sgd")) cfg.stage_b.sgd = parse_sgd(b.at("sgd"), cfg.stage_b.sgd, "stage_b.sgd");
    }

    if (j.contains("memory")) {
        const json& m = j.at("memory");
        cfg.memory_budget = get_or(m, "budget", cfg.memory_budget, "memory");
        cfg.memory_policy = get_or<std::string>(m, "policy", cfg.memory_policy, "memory");
    }

    if (j.contains("ablation")) {
        const json& a = j.at("ablation");
        cfg.ablation.task_specific_bn =
            get_or(a, "task_specific_bn", cfg.ablation.task_specific_bn, "ablation");
        cfg.ablation.unknown_class = get_or(a, "unknown_class", cfg.ablation.unknown_class, "ablation");
        cfg.ablation.alignment = get_or(a, "alignment", cfg.ablation.alignment, "ablation");
    }

    cfg.tp_rule = get_or<std::string>(j, "tp_rule", cfg.tp_rule, "");
    cfg.bn_init = get_or<std::string>(j, "bn_init", cfg.bn_init, "");
    cfg.eval_batch = get_or(j, "eval_batch", cfg.eval_batch, "");
    return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    detail::require(in.good(), "cannot open config " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::invalid_argument("config parse error in " + file.string() + ": " + e.what());
    }
    ExperimentConfig cfg = parse_experiment_config(j);
    validate_experiment_config(cfg);
    return cfg;
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["run_name"] = cfg.run_name;
    j["output_dir"] = cfg.output_dir;
    j["seeds"] = cfg.seeds;
    json d;
    d["source"] = cfg.data.source;
    d["path"] = cfg.data.path;
    d["image_size"] = cfg.data.image_size;
    d["augment"] = cfg.data.augment;
    d["normalize_mean"] = cfg.data.norm.mean;
    d["normalize_std"] = cfg.data.norm.std_dev;
    json s;
    s["num_classes"] = cfg.data.synthetic.num_classes;
    s["pretrain_classes"] = cfg.data.synthetic.pretrain_classes;
    s["train_per_class"] = cfg.data.synthetic.train_per_class;
    s["test_per_class"] = cfg.data.synthetic.test_per_class;
    s["pretrain_per_class"] = cfg.data.synthetic.pretrain_per_class;
    s["blob_radius"] = cfg.data.synthetic.blob_radius;
    s["noise_sigma"] = cfg.data.synthetic.noise_sigma;
    s["seed"] = cfg.data.synthetic.seed;
    d["synthetic"] = s;
    j["data"] = d;
    json sch;
    sch["tasks"] = cfg.schedule.tasks;
    sch["classes_per_task"] = cfg.schedule.classes_per_task;
    if (!cfg.schedule.named_order.empty()) sch["named_order"] = cfg.schedule.named_order;
    j["schedule"] = sch;
    json b;
    b["arch"] = cfg.backbone.arch;
    b["channels"] = cfg.backbone.channels;
    b["init_seed"] = cfg.backbone.init_seed;
    j["backbone"] = b;
    json p;
    p["enabled"] = cfg.pretrain.enabled;
    p["epochs"] = cfg.pretrain.epochs;
    p["batch"] = cfg.pretrain.batch;
    p["checkpoint"] = cfg.pretrain.checkpoint;
    p["sgd"] = sgd_to_json(cfg.pretrain.sgd);
    j["pretrain"] = p;
    json a;
    a["epochs"] = cfg.stage_a.epochs;
    a["batch_new"] = cfg.stage_a.batch_new;
    a["batch_mem"] = cfg.stage_a.batch_mem;
    a["sgd"] = sgd_to_json(cfg.stage_a.sgd);
    j["stage_a"] = a;
    json sb;
    sb["epochs"] = cfg.stage_b.epochs;
    sb["batch"] = cfg.stage_b.batch;
    sb["sgd"] = sgd_to_json(cfg.stage_b.sgd);
    j["stage_b"] = sb;
    json m;
    m["budget"] = cfg.memory_budget;
    m["policy"] = cfg.memory_policy;
    j["memory"] = m;
    json abl;
    abl["task_specific_bn"] = cfg.ablation.task_specific_bn;
    abl["unknown_class"] = cfg.ablation.unknown_class;
    abl["alignment"] = cfg.ablation.alignment;
    j["ablation"] = abl;
    j["tp_rule"] = cfg.tp_rule;
    j["bn_init"] = cfg.bn_init;
    j["eval_batch"] = cfg.eval_batch;
    return j;
}

void save_experiment_config(const ExperimentConfig& cfg, const std::filesystem::path& file) {
    std::ofstream out(file);
    detail::require(out.good(), "cannot write " + file.string());
    out << experiment_config_to_json(cfg).dump(2) << "\n";
}

void validate_experiment_config(const ExperimentConfig& cfg) {
    if (cfg.seeds.empty()) bad_field("seeds", "need at least one seed");
    if (cfg.data.source != "synthetic" && cfg.data.source != "directory" && cfg.data.source != "raw") {
        bad_field("data.source", "must be synthetic | directory | raw, got '" + cfg.data.source + "'");
    }
    if (cfg.data.source != "synthetic" && cfg.data.path.empty()) {
        bad_field("data.path", "required for source '" + cfg.data.source + "'");
    }
    if (cfg.data.image_size < 4) bad_field("data.image_size", "must be >= 4");
    try {
        augment_policy_from_string(cfg.data.augment);
    } catch (const std::exception& e) {
        bad_field("data.augment", e.what());
    }
    if (cfg.data.norm.mean.size() != cfg.data.norm.std_dev.size()) {
        bad_field("data.normalize_std", "length must match normalize_mean");
    }
    for (float v : cfg.data.norm.std_dev) {
        if (v <= 0.0f) bad_field("data.normalize_std", "entries must be > 0");
    }

    if (cfg.schedule.named_order.empty()) {
        if (cfg.schedule.tasks < 1) bad_field("schedule.tasks", "must be >= 1");
        if (cfg.schedule.classes_per_task < 1) bad_field("schedule.classes_per_task", "must be >= 1");
        if (cfg.data.source == "synthetic" &&
            cfg.schedule.tasks * cfg.schedule.classes_per_task > cfg.data.synthetic.num_classes) {
            bad_field("schedule", "tasks x classes_per_task exceeds synthetic.num_classes");
        }
    }

    if (cfg.backbone.arch != "desk_cnn" && cfg.backbone.arch != "resnet18") {
        bad_field("backbone.arch", "must be desk_cnn | resnet18, got '" + cfg.backbone.arch + "'");
    }
    if (cfg.backbone.arch == "desk_cnn" && cfg.backbone.channels.empty()) {
        bad_field("backbone.channels", "desk_cnn needs at least one conv block");
    }

    if (cfg.pretrain.enabled && cfg.pretrain.checkpoint.empty()) {
        if (cfg.pretrain.epochs < 1) bad_field("pretrain.epochs", "must be >= 1 when training");
        if (cfg.pretrain.batch < 2) bad_field("pretrain.batch", "must be >= 2 (train-mode BN)");
        check_sgd(cfg.pretrain.sgd, "pretrain.sgd");
        if (cfg.data.source == "synthetic" && cfg.data.synthetic.pretrain_classes < 2) {
            bad_field("data.synthetic.pretrain_classes", "pretraining needs >= 2 classes");
        }
    }

    if (cfg.stage_a.epochs < 1) bad_field("stage_a.epochs", "must be >= 1");
    if (cfg.stage_a.batch_new < 2) bad_field("stage_a.batch_new", "must be >= 2 (train-mode BN)");
    if (cfg.stage_a.batch_mem < 1) bad_field("stage_a.batch_mem", "must be >= 1");
    check_sgd(cfg.stage_a.sgd, "stage_a.sgd");
    if (cfg.stage_b.epochs < 0) bad_field("stage_b.epochs", "must be >= 0");
    if (cfg.stage_b.batch < 1) bad_field("stage_b.batch", "must be >= 1");
    check_sgd(cfg.stage_b.sgd, "stage_b.sgd");

    if (cfg.memory_budget < 1) bad_field("memory.budget", "must be >= 1");
    if (cfg.memory_policy != "herding" && cfg.memory_policy != "random") {
        bad_field("memory.policy", "must be herding | random");
    }
    int total_classes = 0;
    if (cfg.schedule.named_order.empty()) {
        total_classes = cfg.schedule.tasks * cfg.schedule.classes_per_task;
    } else {
        for (const auto& g : cfg.schedule.named_order) total_classes += static_cast<int>(g.size());
    }
    if (cfg.memory_budget < total_classes) {
        bad_field("memory.budget", "budget " + std::to_string(cfg.memory_budget) +
                                       " below total class count " + std::to_string(total_classes) +
                                       "; per-class quota would be zero");
    }

    if (cfg.tp_rule != "auto" && cfg.tp_rule != "min_unknown" && cfg.tp_rule != "max_softmax") {
        bad_field("tp_rule", "must be auto | min_unknown | max_softmax");
    }
    if (!cfg.ablation.unknown_class && cfg.tp_rule == "min_unknown") {
        bad_field("tp_rule", "min_unknown requires ablation.unknown_class = true");
    }
    if (!cfg.ablation.unknown_class && cfg.ablation.alignment) {
        bad_field("ablation.alignment", "alignment requires the unknown class");
    }
    if (cfg.bn_init != "pretrained" && cfg.bn_init != "previous" && cfg.bn_init != "fresh") {
        bad_field("bn_init", "must be pretrained | previous | fresh");
    }
    if (cfg.eval_batch < 1) bad_field("eval_batch", "must be >= 1");
}

void apply_epochs_scale(ExperimentConfig& cfg, double scale) {
    detail::require(scale > 0.0, "epochs scale must be > 0");
    auto scale_epochs = [&](int e, int minimum) {
        return std::max(minimum, static_cast<int>(std::lround(e * scale)));
    };
    auto scale_milestones = [&](std::vector<int>& ms, int epochs) {
        std::set<int> scaled;
        for (int m : ms) {
            const int v = static_cast<int>(std::lround(m * scale));
            if (v >= 1 && v < epochs) scaled.insert(v);
        }
        ms.assign(scaled.begin(), scaled.end());
    };
    cfg.pretrain.epochs = scale_epochs(cfg.pretrain.epochs, 1);
    scale_milestones(cfg.pretrain.sgd.milestones, cfg.pretrain.epochs);
    cfg.stage_a.epochs = scale_epochs(cfg.stage_a.epochs, 1);
    scale_milestones(cfg.stage_a.sgd.milestones, cfg.stage_a.epochs);
    if (cfg.stage_b.epochs > 0) {
        cfg.stage_b.epochs = scale_epochs(cfg.stage_b.epochs, 1);
        scale_milestones(cfg.stage_b.sgd.milestones, cfg.stage_b.epochs);
    }
}

}  // namespace tsbn
