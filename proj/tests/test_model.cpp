#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "test_helpers.hpp"
#include "tsbn/checkpoint.hpp"
#include "tsbn/model.hpp"

using namespace tsbn;
using tsbn::testing::random_tensor;

namespace fs = std::filesystem;

namespace {

IncrementalModel make_frozen_model(const BackboneSpec& spec, uint64_t seed = 99) {
    IncrementalModel model;
    model.backbone = Backbone(spec, seed);
    model.backbone.freeze();
    return model;
}

fs::path temp_file(const std::string& name) {
    return fs::temp_directory_path() / ("tsbn_model_test_" + name);
}

}  // namespace

TEST_CASE("add_task grows heads with the unknown slot") {
    IncrementalModel model = make_frozen_model(desk_cnn_spec({8, 16}));
    std::mt19937 rng(1);
    const int t0 = add_task(model, 2, rng);
    CHECK(t0 == 0);
    CHECK(model.task_count() == 1);
    CHECK(model.heads[0].output_dim() == 3);
    CHECK(model.heads[0].unknown_index() == 2);
    CHECK(model.banks.size() == model.heads.size());

    const int t1 = add_task(model, 2, rng);
    CHECK(t1 == 1);
    CHECK(model.label_map.classes_seen() == std::vector<int>{0, 1, 2, 3});
    CHECK(model.label_map.task_of(0) == 0);
    CHECK(model.label_map.task_of(3) == 1);
    CHECK_THROWS(add_task(model, 0, rng));
    CHECK_THROWS(model.label_map.add_task({1}));  // already assigned
}

TEST_CASE("add_task requires a frozen backbone") {
    IncrementalModel model;
    model.backbone = Backbone(desk_cnn_spec({8}), 5);
    std::mt19937 rng(2);
    CHECK_THROWS(add_task(model, 2, rng));
}

TEST_CASE("bn bank initialization policies") {
    IncrementalModel model = make_frozen_model(desk_cnn_spec({8, 16}));
    model.backbone.template_bn()[0].gamma.value[0] = 3.5f;
    std::mt19937 rng(3);

    SUBCASE("pretrained template is copied") {
        model.bn_init = BnInitPolicy::Pretrained;
        add_task(model, 2, rng);
        CHECK(model.banks[0].sites[0].gamma.value[0] == 3.5f);
    }
    SUBCASE("fresh banks start at identity") {
        model.bn_init = BnInitPolicy::Fresh;
        add_task(model, 2, rng);
        CHECK(model.banks[0].sites[0].gamma.value[0] == 1.0f);
    }
    SUBCASE("previous copies the last trained bank") {
        model.bn_init = BnInitPolicy::Previous;
        add_task(model, 2, rng);
        model.banks[0].sites[0].gamma.value[0] = -2.0f;
        add_task(model, 2, rng);
        CHECK(model.banks[1].sites[0].gamma.value[0] == -2.0f);
    }
}

TEST_CASE("parameter_report matches the analytic per-task count") {
    // Three BN sites {16,32,64}, d=64, 2 classes + unknown:
    // 2*(16+32+64) + 3*64 + 3 = 419.
    IncrementalModel model = make_frozen_model(desk_cnn_spec({16, 32, 64}));
    CHECK(model.backbone.feature_dim() == 64);
    std::mt19937 rng(4);
    add_task(model, 2, rng);

    const int64_t analytic = analytic_task_addition(model.backbone, 2, true);
    CHECK(analytic == 419);
    ParameterReport report = parameter_report(model);
    REQUIRE(report.per_task.size() == 1);
    CHECK(report.per_task[0].added_trainable == analytic);

    const int64_t frozen_before = report.backbone_frozen;
    add_task(model, 2, rng);
    add_task(model, 2, rng);
    report = parameter_report(model);
    CHECK(report.backbone_frozen == frozen_before);
    // Linear growth: equal class counts add an identical delta each task.
    CHECK(report.per_task[1].added_trainable == analytic);
    CHECK(report.per_task[2].added_trainable == analytic);
    CHECK(report.total_trainable == 3 * analytic);
    CHECK(report.total_params == frozen_before + 3 * analytic);
}

TEST_CASE("resnet18 layer spec parameter accounting") {
    Backbone backbone(resnet18_spec(), 7);
    CHECK(backbone.feature_dim() == 512);
    CHECK(backbone.num_bn_sites() == 20);
    CHECK(backbone.conv_param_count() == 11166912);  // ~11M conv kernels
    CHECK(backbone.bn_trainable_count() == 9600);
    // Per-task addition at 10 classes per task: BN pairs plus the
    // 11-way head over 512-d features.
    const int64_t added = analytic_task_addition(backbone, 10, true);
    CHECK(added == 15243);
    CHECK(added >= 14000);
    CHECK(added <= 16000);
}

TEST_CASE("resnet18 forward runs and yields 512-d features") {
    Backbone backbone(resnet18_spec(), 11);
    std::mt19937 rng(5);
    Tensor x = random_tensor({1, 3, 32, 32}, rng);
    std::vector<BatchNormState> sites = backbone.template_bn();
    set_bn_mode(sites, BnMode::Eval);
    Tensor f = backbone.forward(x, sites);
    CHECK(f.shape == std::vector<int>{1, 512});
    CHECK(f.all_finite());
}

TEST_CASE("forward_logits is deterministic in eval mode and task-isolated") {
    IncrementalModel model = make_frozen_model(desk_cnn_spec({8, 16}));
    std::mt19937 rng(6);
    add_task(model, 2, rng);
    add_task(model, 2, rng);
    Tensor x = random_tensor({3, 3, 8, 8}, rng);

    Tensor a = forward_logits(model, x, 0, BnMode::Eval);
    Tensor b = forward_logits(model, x, 0, BnMode::Eval);
    CHECK(a.shape == std::vector<int>{3, 3});
    CHECK(bit_hash(a) == bit_hash(b));
    CHECK_THROWS_AS(forward_logits(model, x, 5, BnMode::Eval), std::out_of_range);

    // Same head weights, banks differing in one gamma: logits must diverge.
    model.heads[1].weight.value = model.heads[0].weight.value;
    model.heads[1].bias.value = model.heads[0].bias.value;
    model.banks[1].sites[0].gamma.value[0] += 0.5f;
    Tensor c = forward_logits(model, x, 1, BnMode::Eval);
    bool differs = false;
    for (int64_t i = 0; i < c.numel(); ++i) {
        if (c[i] != a[i]) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("forward_features ignores the head and reflects the bank") {
    IncrementalModel model = make_frozen_model(desk_cnn_spec({8, 16}));
    std::mt19937 rng(7);
    add_task(model, 2, rng);
    add_task(model, 2, rng);
    Tensor x = random_tensor({2, 3, 8, 8}, rng);

    Tensor f0 = forward_features(model, x, 0, BnMode::Eval);
    CHECK(f0.shape == std::vector<int>{2, model.backbone.feature_dim()});

    model.heads[0].weight.value.fill(123.0f);
    Tensor f0_again = forward_features(model, x, 0, BnMode::Eval);
    CHECK(bit_hash(f0) == bit_hash(f0_again));

    model.banks[1].sites[0].beta.value[0] += 1.0f;
    Tensor f1 = forward_features(model, x, 1, BnMode::Eval);
    bool differs = false;
    for (int64_t i = 0; i < f1.numel(); ++i) {
        if (f1[i] != f0[i]) differs = true;
    }
    CHECK(differs);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    IncrementalModel model = make_frozen_model(desk_cnn_spec({8, 16}), 123);
    std::mt19937 rng(8);
    add_task(model, 2, rng);
    add_task(model, 3, rng);
    // touch running stats so they carry non-default values
    model.banks[0].sites[0].running_mean[0] = 0.25f;
    model.banks[1].sites[1].running_var[3] = 1.75f;

    const fs::path file = temp_file("roundtrip.ckpt");
    save_checkpoint(model, file);
    IncrementalModel loaded = load_checkpoint(file);

    CHECK(hash_model(loaded) == hash_model(model));
    CHECK(loaded.backbone.frozen());
    CHECK(loaded.task_count() == 2);
    CHECK(loaded.label_map.classes_seen() == model.label_map.classes_seen());

    ParameterReport a = parameter_report(model);
    ParameterReport b = parameter_report(loaded);
    CHECK(a.total_params == b.total_params);
    CHECK(a.total_trainable == b.total_trainable);

    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    Tensor la = forward_logits(model, x, 1, BnMode::Eval);
    Tensor lb = forward_logits(loaded, x, 1, BnMode::Eval);
    CHECK(bit_hash(la) == bit_hash(lb));
    fs::remove(file);
}

TEST_CASE("truncated and corrupt checkpoints fail cleanly") {
    IncrementalModel model = make_frozen_model(desk_cnn_spec({8}), 321);
    std::mt19937 rng(9);
    add_task(model, 2, rng);
    const fs::path file = temp_file("truncate.ckpt");
    save_checkpoint(model, file);

    const auto size = fs::file_size(file);
    fs::resize_file(file, size - 64);
    CHECK_THROWS_AS(load_checkpoint(file), std::runtime_error);

    std::ofstream bad(file, std::ios::binary | std::ios::trunc);
    bad << "not a checkpoint at all";
    bad.close();
    CHECK_THROWS_AS(load_checkpoint(file), std::runtime_error);
    CHECK_THROWS(load_checkpoint(temp_file("missing.ckpt")));
    fs::remove(file);
}

TEST_CASE("experiment checkpoint carries memory and metric state") {
    IncrementalModel model = make_frozen_model(desk_cnn_spec({8}), 55);
    std::mt19937 rng(10);
    add_task(model, {4, 9}, rng);

    ExemplarMemory memory(10);
    memory.set_class_list(4, 0, {3, 1, 2});
    memory.set_class_list(9, 0, {7, 5});

    MetricLog log;
    PhaseRecord rec;
    rec.phase = 1;
    rec.mcr = 0.75;
    rec.tp_accuracy = 1.0;
    rec.wp_given_tp = 0.75;
    rec.overall_accuracy = 0.75;
    rec.trainable_params = 42;
    rec.total_params = 100;
    rec.per_task_mcr = {0.75};
    log.records.push_back(rec);
    log.schedule_length = 1;
    log.schedule_hash = 12345;

    const fs::path file = temp_file("experiment.ckpt");
    save_experiment_checkpoint(model, memory, 0, log, file);
    ExperimentState state = load_experiment_checkpoint(file);

    CHECK(state.completed_phase == 0);
    CHECK(hash_model(state.model) == hash_model(model));
    CHECK(state.memory.budget() == 10);
    CHECK(state.memory.exemplars_of(4) == std::vector<int>{3, 1, 2});
    CHECK(state.memory.exemplars_of(9) == std::vector<int>{7, 5});
    REQUIRE(state.log.records.size() == 1);
    CHECK(state.log.records[0].mcr == doctest::Approx(0.75));
    CHECK(state.log.schedule_hash == 12345);
    fs::remove(file);
}

TEST_CASE("backbone save/restore keeps the frozen flag and spec") {
    Backbone backbone(desk_cnn_spec({8, 16}), 77);
    backbone.freeze();
    const fs::path file = temp_file("backbone.ckpt");
    save_backbone_checkpoint(backbone, file);
    Backbone loaded = load_backbone_checkpoint(file);
    CHECK(loaded.frozen());
    CHECK(loaded.feature_dim() == backbone.feature_dim());
    CHECK(hash_conv_params(loaded.conv_params()) == hash_conv_params(backbone.conv_params()));
    CHECK(hash_bn_states(loaded.template_bn()) == hash_bn_states(backbone.template_bn()));
    fs::remove(file);
}

TEST_CASE("sub-model count stays one phi plus t banks and heads") {
    IncrementalModel model = make_frozen_model(desk_cnn_spec({8}));
    std::mt19937 rng(11);
    for (int t = 1; t <= 4; ++t) {
        add_task(model, 2, rng);
        CHECK(model.task_count() == t);
        CHECK(static_cast<int>(model.heads.size()) == t);
        CHECK(static_cast<int>(model.banks.size()) == t);
    }
}
