#include "tsbn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace tsbn {

namespace {

constexpr char kMagic[] = "TSBNCKPT1\n";

json layer_to_json(const LayerSpec& l) {
    json j;
    switch (l.kind) {
        case LayerKind::Conv:
            j["kind"] = "conv";
            j["out_channels"] = l.out_channels;
            j["ksize"] = l.ksize;
            j["stride"] = l.stride;
            j["pad"] = l.pad;
            break;
        case LayerKind::BatchNorm: j["kind"] = "batchnorm"; break;
        case LayerKind::ReLU: j["kind"] = "relu"; break;
        case LayerKind::MaxPool:
            j["kind"] = "maxpool";
            j["pool_size"] = l.pool_size;
            j["pool_stride"] = l.pool_stride;
            j["pool_pad"] = l.pool_pad;
            break;
        case LayerKind::GlobalAvgPool: j["kind"] = "global_avgpool"; break;
        case LayerKind::Save: j["kind"] = "save"; j["slot"] = l.slot; break;
        case LayerKind::Restore: j["kind"] = "restore"; j["slot"] = l.slot; break;
        case LayerKind::Add: j["kind"] = "add"; j["slot"] = l.slot; break;
    }
    return j;
}

LayerSpec layer_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "conv") {
        return LayerSpec::conv(j.at("out_channels").get<int>(), j.at("ksize").get<int>(),
                               j.at("stride").get<int>(), j.at("pad").get<int>());
    }
    if (kind == "batchnorm") return LayerSpec::batchnorm();
    if (kind == "relu") return LayerSpec::relu();
    if (kind == "maxpool") {
        return LayerSpec::maxpool(j.at("pool_size").get<int>(), j.at("pool_stride").get<int>(),
                                  j.value("pool_pad", 0));
    }
    if (kind == "global_avgpool") return LayerSpec::global_avgpool();
    if (kind == "save") return LayerSpec::save(j.at("slot").get<int>());
    if (kind == "restore") return LayerSpec::restore(j.at("slot").get<int>());
    if (kind == "add") return LayerSpec::add(j.at("slot").get<int>());
    throw std::runtime_error("checkpoint: unknown layer kind '" + kind + "'");
}

struct SectionWriter {
    json sections = json::array();
    std::vector<const Tensor*> tensors;

    void add(const std::string& name, const Tensor& t) {
        json s;
        s["name"] = name;
        s["shape"] = t.shape;
        sections.push_back(s);
        tensors.push_back(&t);
    }
};

void add_bn_sections(SectionWriter& w, const std::string& prefix,
                     const std::vector<BatchNormState>& sites) {
    for (size_t i = 0; i < sites.size(); ++i) {
        const std::string p = prefix + std::to_string(i);
        w.add(p + ".gamma", sites[i].gamma.value);
        w.add(p + ".beta", sites[i].beta.value);
        w.add(p + ".running_mean", sites[i].running_mean);
        w.add(p + ".running_var", sites[i].running_var);
    }
}

json model_header(const IncrementalModel& model, SectionWriter& w) {
    json h;
    h["format"] = "tsbn.checkpoint.v1";
    json backbone;
    backbone["name"] = model.backbone.spec().name;
    backbone["input_channels"] = model.backbone.spec().input_channels;
    json layers = json::array();
    for (const LayerSpec& l : model.backbone.spec().layers) layers.push_back(layer_to_json(l));
    backbone["layers"] = layers;
    backbone["frozen"] = model.backbone.frozen();
    h["backbone"] = backbone;
    if (!model.backbone.template_bn().empty()) {
        h["bn_epsilon"] = model.backbone.template_bn().front().epsilon;
        h["bn_momentum"] = model.backbone.template_bn().front().momentum;
    }
    h["heads_have_unknown"] = model.heads_have_unknown;
    h["bn_init"] = model.bn_init == BnInitPolicy::Pretrained ? "pretrained"
                   : model.bn_init == BnInitPolicy::Previous ? "previous"
                                                             : "fresh";
    json tasks = json::array();
    for (int t = 0; t < model.task_count(); ++t) {
        json task;
        task["task_id"] = t;
        task["known_classes"] = model.heads[static_cast<size_t>(t)].known_classes;
        task["has_unknown"] = model.heads[static_cast<size_t>(t)].has_unknown;
        task["global_classes"] = model.label_map.groups()[static_cast<size_t>(t)];
        tasks.push_back(task);
    }
    h["tasks"] = tasks;

    for (size_t i = 0; i < model.backbone.conv_params().size(); ++i) {
        w.add("conv_" + std::to_string(i), model.backbone.conv_params()[i].value);
    }
    add_bn_sections(w, "template_bn_", model.backbone.template_bn());
    for (int t = 0; t < model.task_count(); ++t) {
        add_bn_sections(w, "task_" + std::to_string(t) + "_bn_",
                        model.banks[static_cast<size_t>(t)].sites);
        w.add("task_" + std::to_string(t) + "_head.weight", model.heads[static_cast<size_t>(t)].weight.value);
        w.add("task_" + std::to_string(t) + "_head.bias", model.heads[static_cast<size_t>(t)].bias.value);
    }
    h["sections"] = w.sections;
    return h;
}

void write_container(const json& header, const SectionWriter& w, const fs::path& file) {
    std::ofstream out(file, std::ios::binary);
    detail::require(out.good(), "cannot write checkpoint " + file.string());
    const std::string htext = header.dump();
    out.write(kMagic, sizeof(kMagic) - 1);
    const uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const Tensor* t : w.tensors) {
        out.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<std::streamsize>(t->data.size() * sizeof(float)));
    }
    detail::require(out.good(), "short write for checkpoint " + file.string());
}

json read_header(std::ifstream& in, const fs::path& file) {
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw std::runtime_error(file.string() + ": not a checkpoint file (bad magic)");
    }
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    detail::require(in.gcount() == sizeof(hlen), file.string() + ": truncated header length");
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (in.gcount() != static_cast<std::streamsize>(hlen)) {
        throw std::runtime_error(file.string() + ": truncated JSON header");
    }
    try {
        return json::parse(htext);
    } catch (const json::exception& e) {
        throw std::runtime_error(file.string() + ": malformed header: " + std::string(e.what()));
    }
}

void read_section(std::ifstream& in, const fs::path& file, const json& section, Tensor& dst) {
    const std::vector<int> shape = section.at("shape").get<std::vector<int>>();
    const std::string name = section.at("name").get<std::string>();
    detail::require(dst.shape == shape, file.string() + ": section '" + name + "' has shape " +
                                            shape_str(shape) + ", expected " + shape_str(dst.shape));
    in.read(reinterpret_cast<char*>(dst.data.data()),
            static_cast<std::streamsize>(dst.data.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(dst.data.size() * sizeof(float))) {
        throw std::runtime_error(file.string() + ": truncated payload at section '" + name + "'");
    }
}

void read_bn_sections(std::ifstream& in, const fs::path& file, const json& sections, size_t& cursor,
                      std::vector<BatchNormState>& sites, float eps, float momentum) {
    for (BatchNormState& s : sites) {
        read_section(in, file, sections.at(cursor++), s.gamma.value);
        read_section(in, file, sections.at(cursor++), s.beta.value);
        read_section(in, file, sections.at(cursor++), s.running_mean);
        read_section(in, file, sections.at(cursor++), s.running_var);
        s.epsilon = eps;
        s.momentum = momentum;
    }
}

IncrementalModel load_model_from(std::ifstream& in, const fs::path& file, const json& h) {
    BackboneSpec spec;
    try {
        const json& b = h.at("backbone");
        spec.name = b.at("name").get<std::string>();
        spec.input_channels = b.at("input_channels").get<int>();
        for (const json& l : b.at("layers")) spec.layers.push_back(layer_from_json(l));
    } catch (const json::exception& e) {
        throw std::runtime_error(file.string() + ": bad backbone spec: " + std::string(e.what()));
    }

    IncrementalModel model;
    model.backbone = Backbone(spec, 0);
    const float eps = h.value("bn_epsilon", 1e-5f);
    const float momentum = h.value("bn_momentum", 0.1f);
    model.heads_have_unknown = h.value("heads_have_unknown", true);
    const std::string init = h.value("bn_init", "pretrained");
    model.bn_init = init == "previous" ? BnInitPolicy::Previous
                    : init == "fresh"  ? BnInitPolicy::Fresh
                                       : BnInitPolicy::Pretrained;

    const json& sections = h.at("sections");
    size_t cursor = 0;
    for (Parameter& p : model.backbone.conv_params()) read_section(in, file, sections.at(cursor++), p.value);
    read_bn_sections(in, file, sections, cursor, model.backbone.template_bn(), eps, momentum);

    const int d = model.backbone.feature_dim();
    for (const json& task : h.at("tasks")) {
        BNBank bank;
        bank.task_id = task.at("task_id").get<int>();
        for (int c : model.backbone.bn_site_channels()) bank.sites.emplace_back(c);
        read_bn_sections(in, file, sections, cursor, bank.sites, eps, momentum);

        TaskHead head;
        head.task_id = bank.task_id;
        head.known_classes = task.at("known_classes").get<int>();
        head.has_unknown = task.at("has_unknown").get<bool>();
        head.weight = Parameter(Tensor({head.output_dim(), d}));
        head.bias = Parameter(Tensor({head.output_dim()}));
        read_section(in, file, sections.at(cursor++), head.weight.value);
        read_section(in, file, sections.at(cursor++), head.bias.value);

        model.label_map.add_task(task.at("global_classes").get<std::vector<int>>());
        model.banks.push_back(std::move(bank));
        model.heads.push_back(std::move(head));
    }
    if (h.at("backbone").value("frozen", false)) model.backbone.freeze();
    return model;
}

}  // namespace

void save_checkpoint(const IncrementalModel& model, const fs::path& file) {
    SectionWriter w;
    const json h = model_header(model, w);
    write_container(h, w, file);
}

IncrementalModel load_checkpoint(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    detail::require(in.good(), "cannot open checkpoint " + file.string());
    const json h = read_header(in, file);
    return load_model_from(in, file, h);
}

void save_experiment_checkpoint(const IncrementalModel& model, const ExemplarMemory& memory,
                                int completed_phase, const MetricLog& log, const fs::path& file) {
    SectionWriter w;
    json h = model_header(model, w);
    json mem;
    mem["budget"] = memory.budget();
    // class -> ordered dataset indices
    json per_class = json::object();
    json class_task = json::object();
    {
        std::vector<Exemplar> all = memory.all();
        for (const Exemplar& e : all) {
            per_class[std::to_string(e.global_class)].push_back(e.dataset_index);
            class_task[std::to_string(e.global_class)] = e.task_id;
        }
    }
    mem["per_class"] = per_class;
    mem["class_task"] = class_task;
    h["memory"] = mem;
    h["completed_phase"] = completed_phase;
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
        rec["per_task_mcr"] = r.per_task_mcr;
        records.push_back(rec);
    }
    h["metric_records"] = records;
    h["schedule_length"] = log.schedule_length;
    h["schedule_hash"] = log.schedule_hash;
    write_container(h, w, file);
}

ExperimentState load_experiment_checkpoint(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    detail::require(in.good(), "cannot open checkpoint " + file.string());
    const json h = read_header(in, file);
    ExperimentState state;
    state.model = load_model_from(in, file, h);
    state.completed_phase = h.value("completed_phase", -1);
    if (h.contains("memory")) {
        const json& mem = h.at("memory");
        state.memory = ExemplarMemory(mem.at("budget").get<int>());
        const json& per_class = mem.at("per_class");
        const json& class_task = mem.at("class_task");
        for (auto it = per_class.begin(); it != per_class.end(); ++it) {
            const int c = std::stoi(it.key());
            state.memory.set_class_list(c, class_task.at(it.key()).get<int>(),
                                        it.value().get<std::vector<int>>());
        }
    }
    if (h.contains("metric_records")) {
        for (const json& rec : h.at("metric_records")) {
            PhaseRecord r;
            r.phase = rec.at("phase").get<int>();
            r.mcr = rec.at("mcr").get<double>();
            r.tp_accuracy = rec.at("tp_acc").get<double>();
            r.wp_given_tp = rec.at("wp_given_tp").get<double>();
            r.overall_accuracy = rec.at("overall_acc").get<double>();
            r.trainable_params = rec.at("trainable_params").get<int64_t>();
            r.total_params = rec.at("total_params").get<int64_t>();
            r.per_task_mcr = rec.at("per_task_mcr").get<std::vector<double>>();
            state.log.records.push_back(r);
        }
        state.log.schedule_length = h.value("schedule_length", 0);
        state.log.schedule_hash = h.value("schedule_hash", uint64_t{0});
    }
    return state;
}

void save_backbone_checkpoint(const Backbone& backbone, const fs::path& file) {
    IncrementalModel model;
    model.backbone = backbone;
    save_checkpoint(model, file);
}

Backbone load_backbone_checkpoint(const fs::path& file) {
    IncrementalModel model = load_checkpoint(file);
    detail::require(model.backbone.frozen(), file.string() + ": backbone checkpoint is not frozen");
    return model.backbone;
}

}  // namespace tsbn
