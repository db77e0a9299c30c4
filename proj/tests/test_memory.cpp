#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "test_helpers.hpp"
#include "tsbn/memory.hpp"

using namespace tsbn;
using tsbn::testing::random_tensor;

namespace {

IncrementalModel tiny_model(int tasks, int classes_per_task, uint64_t seed = 42) {
    IncrementalModel model;
    model.backbone = Backbone(desk_cnn_spec({4}), seed);
    model.backbone.freeze();
    std::mt19937 rng(static_cast<uint32_t>(seed));
    for (int t = 0; t < tasks; ++t) {
        std::vector<int> group;
        for (int c = 0; c < classes_per_task; ++c) group.push_back(t * classes_per_task + c);
        add_task(model, group, rng);
    }
    return model;
}

TaskSchedule contiguous_schedule(int tasks, int classes_per_task) {
    TaskSchedule s;
    for (int t = 0; t < tasks; ++t) {
        std::vector<int> group;
        for (int c = 0; c < classes_per_task; ++c) group.push_back(t * classes_per_task + c);
        s.groups.push_back(group);
    }
    return s;
}

DataBundle blob_data(int classes, int per_class) {
    SyntheticSpec spec;
    spec.num_classes = classes;
    spec.pretrain_classes = 0;
    spec.train_per_class = per_class;
    spec.test_per_class = 2;
    spec.image_size = 8;
    return synthesize(spec);
}

double mean_gap(const Tensor& features, const std::vector<int>& subset) {
    const int d = features.dim(1);
    std::vector<double> full(static_cast<size_t>(d), 0.0), sub(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < features.dim(0); ++i) {
        for (int j = 0; j < d; ++j) full[static_cast<size_t>(j)] += features.at2(i, j);
    }
    for (double& v : full) v /= features.dim(0);
    for (int i : subset) {
        for (int j = 0; j < d; ++j) sub[static_cast<size_t>(j)] += features.at2(i, j);
    }
    for (double& v : sub) v /= static_cast<double>(subset.size());
    double sq = 0.0;
    for (int j = 0; j < d; ++j) {
        const double diff = full[static_cast<size_t>(j)] - sub[static_cast<size_t>(j)];
        sq += diff * diff;
    }
    return std::sqrt(sq);
}

}  // namespace

TEST_CASE("herding with m = N returns a permutation") {
    std::mt19937 rng(1);
    Tensor features = random_tensor({7, 3}, rng);
    l2_normalize_rows(features);
    std::vector<int> picked = herding_select(features, 7);
    std::set<int> unique(picked.begin(), picked.end());
    CHECK(unique.size() == 7);
    CHECK(*unique.begin() == 0);
    CHECK(*unique.rbegin() == 6);
}

TEST_CASE("herding with m = 1 picks the max dot product against the mean") {
    // Brute force over three unit vectors: with unit rows,
    // argmin ||mu - f|| == argmax mu . f.
    for (int trial = 0; trial < 5; ++trial) {
        std::mt19937 rng(static_cast<uint32_t>(100 + trial));
        std::uniform_real_distribution<float> angle(0.0f, 6.2831853f);
        Tensor features({3, 2});
        for (int i = 0; i < 3; ++i) {
            const float a = angle(rng);
            features.at2(i, 0) = std::cos(a);
            features.at2(i, 1) = std::sin(a);
        }
        double mx = (features.at2(0, 0) + features.at2(1, 0) + features.at2(2, 0)) / 3.0;
        double my = (features.at2(0, 1) + features.at2(1, 1) + features.at2(2, 1)) / 3.0;
        int best = 0;
        double best_dot = -1e300;
        for (int i = 0; i < 3; ++i) {
            const double dot = mx * features.at2(i, 0) + my * features.at2(i, 1);
            if (dot > best_dot + 1e-12) {
                best_dot = dot;
                best = i;
            }
        }
        CHECK(herding_select(features, 1)[0] == best);
    }
}

TEST_CASE("herding breaks ties toward the lowest index") {
    Tensor features({4, 2});
    features.at2(0, 0) = 1.0f;
    features.at2(1, 0) = 1.0f;  // duplicate of row 0
    features.at2(2, 1) = 1.0f;
    features.at2(3, 1) = 1.0f;  // duplicate of row 2
    std::vector<int> picked = herding_select(features, 4);
    auto pos = [&](int idx) {
        return std::find(picked.begin(), picked.end(), idx) - picked.begin();
    };
    CHECK(pos(0) < pos(1));
    CHECK(pos(2) < pos(3));
}

TEST_CASE("herding rejects an oversized quota") {
    std::mt19937 rng(2);
    Tensor features = random_tensor({3, 2}, rng);
    CHECK_THROWS(herding_select(features, 4));
    CHECK_THROWS(herding_select(features, 0));
}

TEST_CASE("herding prefix property across quotas") {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor features = random_tensor({12, 4}, rng);
        l2_normalize_rows(features);
        std::vector<int> full = herding_select(features, 12);
        for (int m : {1, 3, 7}) {
            std::vector<int> part = herding_select(features, m);
            for (int i = 0; i < m; ++i) {
                CHECK(part[static_cast<size_t>(i)] == full[static_cast<size_t>(i)]);
            }
        }
    }
}

TEST_CASE("herding approximates the class mean at least as well as random median") {
    std::mt19937 rng(4);
    Tensor features = random_tensor({40, 8}, rng, 0.0f, 1.0f);
    l2_normalize_rows(features);
    const int m = 8;
    std::vector<int> herded = herding_select(features, m);
    const double herding_gap = mean_gap(features, herded);

    std::vector<double> random_gaps;
    std::vector<int> all(40);
    std::iota(all.begin(), all.end(), 0);
    for (int trial = 0; trial < 100; ++trial) {
        std::shuffle(all.begin(), all.end(), rng);
        random_gaps.push_back(mean_gap(features, {all.begin(), all.begin() + m}));
    }
    std::sort(random_gaps.begin(), random_gaps.end());
    CHECK(herding_gap <= random_gaps[50]);
}

TEST_CASE("update_memory applies the floor quota") {
    DataBundle data = blob_data(4, 30);
    TaskSchedule schedule = contiguous_schedule(2, 2);
    IncrementalModel model = tiny_model(2, 2);
    Normalization norm;

    // memory size 40 over 4 classes ends at 10 per class
    ExemplarMemory memory(40);
    update_memory(memory, model, data.train, schedule, 0, norm);
    CHECK(memory.exemplars_of(0).size() == 20);  // only 2 classes seen yet
    CHECK(memory.exemplars_of(1).size() == 20);
    update_memory(memory, model, data.train, schedule, 1, norm);
    for (int c = 0; c < 4; ++c) CHECK(memory.exemplars_of(c).size() == 10);
    CHECK(memory.size() <= memory.budget());
}

TEST_CASE("large-budget quota arithmetic") {
    // budget 2000 over 100 classes leaves 20 per class
    DataBundle data = blob_data(100, 25);
    TaskSchedule schedule = contiguous_schedule(1, 100);
    IncrementalModel model = tiny_model(1, 100);
    Normalization norm;

    ExemplarMemory memory(2000);
    update_memory(memory, model, data.train, schedule, 0, norm);
    for (int c = 0; c < 100; ++c) CHECK(memory.exemplars_of(c).size() == 20);
    CHECK(memory.size() == 2000);
}

TEST_CASE("quota shrink keeps the herding prefix") {
    DataBundle data = blob_data(4, 16);
    TaskSchedule schedule = contiguous_schedule(2, 2);
    IncrementalModel model = tiny_model(2, 2);
    Normalization norm;

    ExemplarMemory memory(8);
    update_memory(memory, model, data.train, schedule, 0, norm);
    const std::vector<int> before0 = memory.exemplars_of(0);
    const std::vector<int> before1 = memory.exemplars_of(1);
    CHECK(before0.size() == 4);

    update_memory(memory, model, data.train, schedule, 1, norm);
    const std::vector<int> after0 = memory.exemplars_of(0);
    REQUIRE(after0.size() == 2);
    CHECK(after0[0] == before0[0]);
    CHECK(after0[1] == before0[1]);
    CHECK(memory.exemplars_of(1) == std::vector<int>(before1.begin(), before1.begin() + 2));
    CHECK(memory.size() <= 8);
}

TEST_CASE("update_memory rejects a zero quota") {
    DataBundle data = blob_data(4, 8);
    TaskSchedule schedule = contiguous_schedule(2, 2);
    IncrementalModel model = tiny_model(2, 2);
    Normalization norm;

    ExemplarMemory memory(3);  // 4 classes seen after the second task
    update_memory(memory, model, data.train, schedule, 0, norm);
    CHECK_THROWS(update_memory(memory, model, data.train, schedule, 1, norm));
}

TEST_CASE("memory coverage after growth") {
    DataBundle data = blob_data(6, 12);
    TaskSchedule schedule = contiguous_schedule(3, 2);
    IncrementalModel model = tiny_model(3, 2);
    Normalization norm;

    ExemplarMemory memory(7);  // floor(7/6) = 1 at the end
    for (int t = 0; t < 3; ++t) {
        update_memory(memory, model, data.train, schedule, t, norm);
        CHECK(memory.size() <= memory.budget());
        for (int c : schedule.classes_up_to(t)) {
            CHECK(memory.exemplars_of(c).size() >= 1);
        }
    }
}

TEST_CASE("random selection policy stays within quota") {
    DataBundle data = blob_data(4, 10);
    TaskSchedule schedule = contiguous_schedule(2, 2);
    IncrementalModel model = tiny_model(2, 2);
    Normalization norm;

    ExemplarMemory memory(8);
    update_memory(memory, model, data.train, schedule, 0, norm, 64, SelectionPolicy::Random, 5);
    update_memory(memory, model, data.train, schedule, 1, norm, 64, SelectionPolicy::Random, 5);
    CHECK(memory.size() <= 8);
    for (int c = 0; c < 4; ++c) CHECK(memory.exemplars_of(c).size() == 2);
}

TEST_CASE("replay batching covers every exemplar exactly once per epoch") {
    ExemplarMemory memory(16);
    memory.set_class_list(0, 0, {0, 1, 2, 3, 4});
    memory.set_class_list(1, 0, {5, 6, 7, 8, 9});

    auto batches = replay_epoch(memory, 4, 77);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[1].size() == 4);
    CHECK(batches[2].size() == 2);

    std::set<int> seen;
    for (const auto& b : batches) {
        for (const Exemplar& e : b) seen.insert(e.dataset_index);
    }
    CHECK(seen.size() == 10);

    auto again = replay_epoch(memory, 4, 77);
    for (size_t i = 0; i < batches.size(); ++i) {
        REQUIRE(again[i].size() == batches[i].size());
        for (size_t j = 0; j < batches[i].size(); ++j) {
            CHECK(again[i][j].dataset_index == batches[i][j].dataset_index);
        }
    }
    auto different = replay_epoch(memory, 4, 78);
    bool same_order = true;
    for (size_t i = 0; i < batches.size() && same_order; ++i) {
        for (size_t j = 0; j < batches[i].size(); ++j) {
            if (different[i][j].dataset_index != batches[i][j].dataset_index) same_order = false;
        }
    }
    CHECK_FALSE(same_order);
}

TEST_CASE("empty memory yields an empty replay stream") {
    ExemplarMemory memory(10);
    CHECK(memory.empty());
    CHECK(replay_epoch(memory, 4, 1).empty());
}
