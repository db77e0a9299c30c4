#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "tsbn/metrics.hpp"

using namespace tsbn;

namespace fs = std::filesystem;

namespace {

// Independent tally: recall via explicit per-class counting.
double recall_oracle(const std::vector<int>& preds, const std::vector<int>& labels, int c) {
    int64_t n = 0, hit = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != c) continue;
        ++n;
        if (preds[i] == c) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(n);
}

MetricLog log_with_mcrs(const std::vector<double>& mcrs) {
    MetricLog log;
    for (size_t i = 0; i < mcrs.size(); ++i) {
        PhaseRecord r;
        r.phase = static_cast<int>(i) + 1;
        r.mcr = mcrs[i];
        r.per_task_mcr.assign(i + 1, mcrs[i]);
        r.trainable_params = static_cast<int64_t>(100 * (i + 1));
        r.total_params = static_cast<int64_t>(1000 + 100 * (i + 1));
        log.records.push_back(r);
    }
    log.schedule_length = static_cast<int>(mcrs.size());
    return log;
}

}  // namespace

TEST_CASE("class recall on simple tallies") {
    CHECK(class_recall({1, 1, 1}, {1, 1, 1}, 1) == 1.0);
    CHECK(class_recall({1, 1, 2}, {1, 1, 1}, 1) == doctest::Approx(2.0 / 3.0));
    CHECK(class_recall({2, 2, 2}, {1, 1, 1}, 1) == 0.0);
    CHECK_THROWS(class_recall({1}, {1}, 5));
}

TEST_CASE("mcr equals accuracy on balanced sets and not otherwise") {
    // balanced: 2 classes x 2 samples
    std::vector<int> labels{0, 0, 1, 1};
    std::vector<int> preds{0, 1, 1, 1};
    const double acc = 3.0 / 4.0;
    CHECK(mcr(preds, labels, {0, 1}) == doctest::Approx(acc));

    // unbalanced: recalls 1.0 and 0.0 average to 0.5 regardless of sizes
    std::vector<int> labels2{0, 0, 0, 0, 0, 1};
    std::vector<int> preds2{0, 0, 0, 0, 0, 0};
    CHECK(mcr(preds2, labels2, {0, 1}) == doctest::Approx(0.5));
    const double acc2 = 5.0 / 6.0;
    CHECK(mcr(preds2, labels2, {0, 1}) != doctest::Approx(acc2));
}

TEST_CASE("mcr is invariant under per-class duplication") {
    std::vector<int> labels{0, 0, 1, 2};
    std::vector<int> preds{0, 1, 1, 2};
    const double base = mcr(preds, labels, {0, 1, 2});

    // duplicate class-1 samples five times
    std::vector<int> labels_dup = labels;
    std::vector<int> preds_dup = preds;
    for (int k = 0; k < 5; ++k) {
        labels_dup.push_back(1);
        preds_dup.push_back(1);
        labels_dup.push_back(1);
        preds_dup.push_back(1);
    }
    // keep recall(1) identical by duplicating proportionally: class 1 had
    // recall 1.0; the duplicates are all correct, so recall stays 1.0
    CHECK(mcr(preds_dup, labels_dup, {0, 1, 2}) == doctest::Approx(base));
}

TEST_CASE("mcr reports missing classes by id") {
    CHECK_THROWS_WITH_AS(mcr({0, 0}, {0, 0}, {0, 7}), doctest::Contains("7"),
                         std::invalid_argument);
}

TEST_CASE("mcr matches a brute-force tally on random confusion tables") {
    std::mt19937 rng(11);
    std::uniform_int_distribution<int> cls(0, 5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> labels, preds;
        for (int c = 0; c < 6; ++c) labels.push_back(c), preds.push_back(cls(rng));
        for (int i = 0; i < 200; ++i) {
            labels.push_back(cls(rng));
            preds.push_back(cls(rng));
        }
        double want = 0.0;
        for (int c = 0; c < 6; ++c) want += recall_oracle(preds, labels, c);
        want /= 6.0;
        CHECK(mcr(preds, labels, {0, 1, 2, 3, 4, 5}) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("summarize returns Last and Avg") {
    MetricLog one = log_with_mcrs({0.8});
    auto [last1, avg1] = summarize(one);
    CHECK(last1 == doctest::Approx(0.8));
    CHECK(avg1 == doctest::Approx(0.8));

    MetricLog two = log_with_mcrs({0.8, 0.6});
    auto [last2, avg2] = summarize(two);
    CHECK(last2 == doctest::Approx(0.6));
    CHECK(avg2 == doctest::Approx(0.7));

    // paper-shaped seven-phase log against an independent mean
    const std::vector<double> mcrs{0.97, 0.95, 0.9, 0.84, 0.81, 0.78, 0.74};
    MetricLog seven = log_with_mcrs(mcrs);
    double mean = 0.0;
    for (double v : mcrs) mean += v;
    mean /= static_cast<double>(mcrs.size());
    auto [last7, avg7] = summarize(seven);
    CHECK(last7 == doctest::Approx(0.74));
    CHECK(avg7 == doctest::Approx(mean).epsilon(1e-12));

    CHECK_THROWS(summarize(MetricLog{}));
}

TEST_CASE("decomposition identity on hand counts") {
    // 10 samples: TP correct on 8, of those 6 fully correct
    std::vector<int> true_task(10, 0), pred_task(10, 0), true_global(10, 0), pred_global(10, 0);
    pred_task[8] = 1;
    pred_task[9] = 1;  // 2 TP misses
    pred_global[8] = 5;
    pred_global[9] = 5;  // TP-wrong samples cannot be globally correct
    pred_global[6] = 3;
    pred_global[7] = 3;  // 2 WP misses within correct TP
    DecompositionCounts c = decomposition_audit(pred_task, true_task, pred_global, true_global);
    CHECK(c.total == 10);
    CHECK(c.tp_correct == 8);
    CHECK(c.overall_correct == 6);
    CHECK(c.tp_accuracy() == doctest::Approx(0.8));
    CHECK(c.wp_given_tp() == doctest::Approx(0.75));
    CHECK(c.overall() == doctest::Approx(0.6));
    CHECK(c.identity_exact());
}

TEST_CASE("decomposition with all TP wrong gives zero overall") {
    std::vector<int> true_task{0, 0}, pred_task{1, 1}, true_global{0, 1}, pred_global{2, 3};
    DecompositionCounts c = decomposition_audit(pred_task, true_task, pred_global, true_global);
    CHECK(c.tp_correct == 0);
    CHECK(c.overall_correct == 0);
    CHECK(c.overall() == 0.0);
    CHECK(c.identity_exact());
}

TEST_CASE("decomposition flags inclusion violations") {
    // globally correct but task wrong: impossible under disjoint classes,
    // so the audit must reject it
    std::vector<int> true_task{0}, pred_task{1}, true_global{3}, pred_global{3};
    DecompositionCounts c = decomposition_audit(pred_task, true_task, pred_global, true_global);
    CHECK(c.inclusion_violations == 1);
    CHECK_FALSE(c.identity_exact());
}

TEST_CASE("accuracy matrix rows follow phases") {
    MetricLog log = log_with_mcrs({0.9, 0.8, 0.7});
    auto matrix = accuracy_matrix(log);
    REQUIRE(matrix.size() == 3);
    CHECK(matrix[0].size() == 1);
    CHECK(matrix[1].size() == 2);
    CHECK(matrix[2].size() == 3);
    for (double v : matrix[2]) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    MetricLog single = log_with_mcrs({0.5});
    CHECK(accuracy_matrix(single).size() == 1);
    CHECK(accuracy_matrix(single)[0].size() == 1);
}

TEST_CASE("metrics csv round trip keeps values and schema") {
    MetricLog log = log_with_mcrs({0.9, 0.82, 0.75});
    log.records[1].tp_accuracy = 0.95;
    log.records[1].wp_given_tp = 0.86;
    log.records[1].overall_accuracy = 0.817;

    const fs::path file = fs::temp_directory_path() / "tsbn_metrics_test.csv";
    write_metrics_csv(log, file);
    MetricLog loaded = read_metrics_csv(file);
    REQUIRE(loaded.records.size() == 3);
    CHECK(loaded.records[1].mcr == doctest::Approx(0.82));
    CHECK(loaded.records[1].tp_accuracy == doctest::Approx(0.95));
    CHECK(loaded.records[2].trainable_params == 300);

    // schema line is enforced
    std::ofstream bad(file);
    bad << "phase,mcr\n1,0.5\n";
    bad.close();
    CHECK_THROWS(read_metrics_csv(file));
    fs::remove(file);
}
