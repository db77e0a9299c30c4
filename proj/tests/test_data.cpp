#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "test_helpers.hpp"
#include "tsbn/data.hpp"

using namespace tsbn;

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ImageU8 solid_image(int w, int h, uint8_t r, uint8_t g, uint8_t b) {
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(w) * h * 3);
    for (int i = 0; i < w * h; ++i) {
        img.pixels[static_cast<size_t>(i) * 3] = r;
        img.pixels[static_cast<size_t>(i) * 3 + 1] = g;
        img.pixels[static_cast<size_t>(i) * 3 + 2] = b;
    }
    return img;
}

}  // namespace

TEST_CASE("synthesize is deterministic and class-pure at zero noise") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.pretrain_classes = 2;
    spec.train_per_class = 4;
    spec.test_per_class = 2;
    spec.pretrain_per_class = 4;
    spec.image_size = 8;
    spec.noise_sigma = 0.0f;

    DataBundle a = synthesize(spec);
    DataBundle b = synthesize(spec);
    CHECK(a.train.pixels == b.train.pixels);
    CHECK(a.test.pixels == b.test.pixels);
    CHECK(a.pretrain.pixels == b.pretrain.pixels);
    CHECK(a.train.size() == 12);
    CHECK(a.test.size() == 6);
    CHECK(a.pretrain.size() == 8);

    // noise 0: every image of a class is identical
    const int64_t sn = a.train.sample_numel();
    for (int c = 0; c < 3; ++c) {
        const std::vector<int> idx = a.train.indices_of_class(c);
        for (size_t i = 1; i < idx.size(); ++i) {
            for (int64_t k = 0; k < sn; ++k) {
                CHECK(a.train.pixels[static_cast<size_t>(idx[i]) * sn + k] ==
                      a.train.pixels[static_cast<size_t>(idx[0]) * sn + k]);
            }
        }
    }
}

TEST_CASE("noisy regeneration is bit-identical under one seed") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.pretrain_classes = 0;
    spec.train_per_class = 3;
    spec.test_per_class = 2;
    spec.image_size = 8;
    spec.noise_sigma = 0.1f;
    DataBundle a = synthesize(spec);
    DataBundle b = synthesize(spec);
    CHECK(a.train.pixels == b.train.pixels);
    spec.seed += 1;
    DataBundle c = synthesize(spec);
    CHECK(a.train.pixels != c.train.pixels);
}

TEST_CASE("distant blob classes are linearly separable by a perceptron") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.pretrain_classes = 0;
    spec.train_per_class = 40;
    spec.test_per_class = 2;
    spec.image_size = 12;
    spec.noise_sigma = 0.05f;
    DataBundle data = synthesize(spec);

    // Perceptron oracle on raw pixels.
    const int64_t dim = data.train.sample_numel();
    std::vector<double> w(static_cast<size_t>(dim), 0.0);
    double bias = 0.0;
    int mistakes_last_pass = -1;
    for (int pass = 0; pass < 50; ++pass) {
        int mistakes = 0;
        for (int i = 0; i < data.train.size(); ++i) {
            const double y = data.train.labels[static_cast<size_t>(i)] == 0 ? -1.0 : 1.0;
            double act = bias;
            for (int64_t k = 0; k < dim; ++k) {
                act += w[static_cast<size_t>(k)] * data.train.pixels[static_cast<size_t>(i) * dim + k];
            }
            if (y * act <= 0.0) {
                ++mistakes;
                for (int64_t k = 0; k < dim; ++k) {
                    w[static_cast<size_t>(k)] += y * data.train.pixels[static_cast<size_t>(i) * dim + k];
                }
                bias += y;
            }
        }
        mistakes_last_pass = mistakes;
        if (mistakes == 0) break;
    }
    CHECK(mistakes_last_pass == 0);
}

TEST_CASE("image directory loader reads classes in sorted order") {
    TempDir dir("tsbn_data_dir_test");
    for (const std::string split : {"train", "test"}) {
        for (const std::string cls : {"alpha", "beta"}) {
            fs::create_directories(dir.path / split / cls);
        }
    }
    // 2 classes x 3 train images, 1 test image each; beta gets a PNG to
    // exercise both decoders
    for (int i = 0; i < 3; ++i) {
        write_ppm(dir.path / "train" / "alpha" / ("img" + std::to_string(i) + ".ppm"),
                  solid_image(6, 4, 200, 10, 10));
        write_png_rgb8(dir.path / "train" / "beta" / ("img" + std::to_string(i) + ".png"),
                       solid_image(5, 5, 10, 200, 10));
    }
    write_ppm(dir.path / "test" / "alpha" / "t.ppm", solid_image(6, 4, 190, 15, 15));
    write_png_rgb8(dir.path / "test" / "beta" / "t.png", solid_image(5, 5, 15, 190, 15));

    DataBundle bundle = load_image_directory(dir.path, 8);
    CHECK(bundle.train.size() == 6);
    CHECK(bundle.train.class_names == std::vector<std::string>{"alpha", "beta"});
    CHECK(bundle.train.labels == std::vector<int>{0, 0, 0, 1, 1, 1});
    CHECK(bundle.test.size() == 2);
    CHECK(bundle.train.channels == 3);
    CHECK(bundle.train.height == 8);

    // red channel dominates for alpha, green for beta
    Tensor alpha = bundle.train.sample(0);
    CHECK(alpha.at4(0, 0, 4, 4) > alpha.at4(0, 1, 4, 4));
    Tensor beta = bundle.train.sample(3);
    CHECK(beta.at4(0, 1, 2, 2) > beta.at4(0, 0, 2, 2));

    DataBundle again = load_image_directory(dir.path, 8);
    CHECK(again.train.pixels == bundle.train.pixels);
    CHECK(again.train.labels == bundle.train.labels);
}

TEST_CASE("loader reports missing and broken content") {
    TempDir dir("tsbn_data_err_test");
    fs::create_directories(dir.path / "train" / "only_in_train");
    fs::create_directories(dir.path / "test" / "other");
    write_ppm(dir.path / "train" / "only_in_train" / "a.ppm", solid_image(4, 4, 1, 2, 3));
    write_ppm(dir.path / "test" / "other" / "a.ppm", solid_image(4, 4, 1, 2, 3));
    // class present only in train -> coverage error
    CHECK_THROWS_WITH_AS(load_image_directory(dir.path, 8),
                         doctest::Contains("only_in_train"), std::invalid_argument);

    TempDir dir2("tsbn_data_err2_test");
    fs::create_directories(dir2.path / "train" / "c");
    fs::create_directories(dir2.path / "test" / "c");
    write_ppm(dir2.path / "test" / "c" / "ok.ppm", solid_image(4, 4, 1, 2, 3));
    // empty train class dir
    CHECK_THROWS_AS(load_image_directory(dir2.path, 8), std::runtime_error);

    write_ppm(dir2.path / "train" / "c" / "ok.ppm", solid_image(4, 4, 1, 2, 3));
    std::ofstream bad(dir2.path / "train" / "c" / "broken.png");
    bad << "this is not a png";
    bad.close();
    CHECK_THROWS_WITH_AS(load_image_directory(dir2.path, 8), doctest::Contains("broken.png"),
                         std::runtime_error);
}

TEST_CASE("raw dataset round trip") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.pretrain_classes = 0;
    spec.train_per_class = 3;
    spec.test_per_class = 1;
    spec.image_size = 8;
    DataBundle data = synthesize(spec);

    TempDir dir("tsbn_raw_test");
    const fs::path file = dir.path / "train.bin";
    save_raw_dataset(data.train, file);
    Dataset loaded = load_raw_dataset(file);
    CHECK(loaded.pixels == data.train.pixels);
    CHECK(loaded.labels == data.train.labels);
    CHECK(loaded.class_names == data.train.class_names);

    fs::resize_file(file, fs::file_size(file) - 8);
    CHECK_THROWS(load_raw_dataset(file));
}

TEST_CASE("split_tasks forms disjoint contiguous groups") {
    TaskSchedule s10 = split_tasks(100, 10, 10, 1);
    REQUIRE(s10.task_count() == 10);
    std::set<int> seen;
    for (const auto& g : s10.groups) {
        CHECK(g.size() == 10);
        for (int c : g) CHECK(seen.insert(c).second);
    }
    CHECK(seen.size() == 100);

    TaskSchedule s20 = split_tasks(100, 20, 5, 1);
    CHECK(s20.task_count() == 20);
    for (const auto& g : s20.groups) CHECK(g.size() == 5);

    TaskSchedule again = split_tasks(100, 10, 10, 1);
    CHECK(again.groups == s10.groups);
    CHECK(again.hash() == s10.hash());
    TaskSchedule other = split_tasks(100, 10, 10, 2);
    CHECK(other.groups != s10.groups);

    CHECK_THROWS(split_tasks(10, 4, 3, 1));
}

TEST_CASE("named schedule is taken verbatim") {
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.pretrain_classes = 0;
    spec.train_per_class = 2;
    spec.test_per_class = 1;
    spec.image_size = 8;
    DataBundle data = synthesize(spec);

    TaskSchedule s = split_tasks_named(data.train, {{"blob_2", "blob_0"}, {"blob_3", "blob_1"}});
    REQUIRE(s.task_count() == 2);
    CHECK(s.groups[0] == std::vector<int>{2, 0});
    CHECK(s.groups[1] == std::vector<int>{3, 1});
    CHECK(s.task_of_class(3) == 1);
    CHECK_THROWS(split_tasks_named(data.train, {{"nope"}}));
    CHECK_THROWS(split_tasks_named(data.train, {{"blob_0"}, {"blob_0"}}));
}

TEST_CASE("normalization round trip and eval path") {
    std::mt19937 rng(5);
    Tensor batch = tsbn::testing::random_tensor({2, 3, 6, 6}, rng, 0.0f, 1.0f);
    Normalization norm;
    norm.mean = {0.4f, 0.5f, 0.6f};
    norm.std_dev = {0.2f, 0.25f, 0.3f};

    Tensor normalized = normalize_batch(batch, norm);
    Tensor restored = denormalize_batch(normalized, norm);
    for (int64_t i = 0; i < batch.numel(); ++i) {
        CHECK(restored[i] == doctest::Approx(batch[i]).epsilon(1e-6));
    }

    // non-training path ignores the augmentation policy entirely
    std::mt19937 aug_rng(7);
    Tensor eval_out = augment_batch(batch, AugmentPolicy::FlipCrop, norm, aug_rng, false);
    CHECK(bit_hash(eval_out) == bit_hash(normalized));
}

TEST_CASE("horizontal flip is an involution") {
    std::mt19937 rng(6);
    Tensor batch = tsbn::testing::random_tensor({3, 2, 5, 4}, rng);
    Tensor twice = horizontal_flip(horizontal_flip(batch));
    CHECK(bit_hash(twice) == bit_hash(batch));
    Tensor once = horizontal_flip(batch);
    CHECK(once.at4(0, 0, 0, 0) == batch.at4(0, 0, 0, 3));
}

TEST_CASE("empirical flip rate sits near one half") {
    // 10k single-image draws through the training path; the image is
    // asymmetric so a flip is detectable.
    Tensor img({1, 1, 1, 2});
    img.at4(0, 0, 0, 0) = 1.0f;
    Normalization norm;
    norm.mean = {0.0f};
    norm.std_dev = {1.0f};
    std::mt19937 rng(123);
    int flips = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        Tensor out = augment_batch(img, AugmentPolicy::Flip, norm, rng, true);
        if (out.at4(0, 0, 0, 1) == 1.0f) ++flips;
    }
    const double rate = static_cast<double>(flips) / draws;
    CHECK(rate >= 0.48);
    CHECK(rate <= 0.52);
}

TEST_CASE("flip-crop augmentation keeps shape and normalizes") {
    std::mt19937 rng(9);
    Tensor batch = tsbn::testing::random_tensor({4, 3, 8, 8}, rng, 0.0f, 1.0f);
    Normalization norm;
    std::mt19937 aug_rng(11);
    Tensor out = augment_batch(batch, AugmentPolicy::FlipCrop, norm, aug_rng, true);
    CHECK(out.shape == batch.shape);
    CHECK(out.all_finite());
}
