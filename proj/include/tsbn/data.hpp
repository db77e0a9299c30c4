#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tsbn/tensor.hpp"

namespace tsbn {

// In-memory image classification split. Pixels are N x C x H x W floats.
struct Dataset {
    int channels = 0, height = 0, width = 0;
    std::vector<float> pixels;
    std::vector<int> labels;
    std::vector<std::string> class_names;
    std::string split;  // "pretrain" | "train" | "test"

    int size() const { return static_cast<int>(labels.size()); }
    int num_classes() const { return static_cast<int>(class_names.size()); }
    int64_t sample_numel() const { return static_cast<int64_t>(channels) * height * width; }
    Tensor gather(const std::vector<int>& indices) const;
    Tensor sample(int index) const { return gather({index}); }
    std::vector<int> indices_of_class(int global_class) const;
};

// Train/test share one label space; the pretrain split has its own.
struct DataBundle {
    Dataset pretrain;
    Dataset train;
    Dataset test;
};

// ------------------------------------------------------------ synthetic

// Gaussian color blobs: class identity is encoded by blob position on a
// ring and by hue, so distinct classes are linearly separable in pixel
// space. Pretrain classes live on an inner ring with offset hues.
struct SyntheticSpec {
    int num_classes = 10;
    int pretrain_classes = 4;
    int train_per_class = 200;
    int test_per_class = 50;
    int pretrain_per_class = 200;
    int image_size = 32;
    float blob_radius = 0.22f;  // fraction of image size
    float noise_sigma = 0.08f;
    uint64_t seed = 7;
};

DataBundle synthesize(const SyntheticSpec& spec);

// ------------------------------------------------------------ on-disk formats

// Layout: root/{pretrain,train,test}/<class_name>/<file>.{png,ppm,pgm}
// Classes come from sorted directory names of the train split; every train
// class must also appear in test. Images are bilinearly resized to
// resize_to x resize_to and converted to 3 channels in [0,1].
DataBundle load_image_directory(const std::filesystem::path& root, int resize_to);

// Raw alternative: JSON header (counts, shape, class names) followed by
// little-endian float32 samples and uint16 labels.
void save_raw_dataset(const Dataset& ds, const std::filesystem::path& file);
Dataset load_raw_dataset(const std::filesystem::path& file);

// Minimal image io used by the directory loader and tests.
struct ImageU8 {
    int width = 0, height = 0, channels = 0;  // channels: 1 or 3
    std::vector<uint8_t> pixels;              // HWC interleaved
};
ImageU8 read_image_file(const std::filesystem::path& file);
void write_ppm(const std::filesystem::path& file, const ImageU8& img);
void write_png_rgb8(const std::filesystem::path& file, const ImageU8& img);

// ------------------------------------------------------------ schedules

struct TaskSchedule {
    std::vector<std::vector<int>> groups;  // disjoint global class ids per task

    int task_count() const { return static_cast<int>(groups.size()); }
    int task_of_class(int global_class) const;
    std::vector<int> classes_up_to(int task) const;  // inclusive
    uint64_t hash() const;
};

TaskSchedule split_tasks(int num_classes, int tasks, int classes_per_task, uint64_t seed);
TaskSchedule split_tasks_named(const Dataset& train,
                               const std::vector<std::vector<std::string>>& named_groups);

// ------------------------------------------------------------ augmentation

enum class AugmentPolicy { None, Flip, FlipCrop };
AugmentPolicy augment_policy_from_string(const std::string& s);

struct Normalization {
    std::vector<float> mean{0.5f, 0.5f, 0.5f};
    std::vector<float> std_dev{0.25f, 0.25f, 0.25f};
};

// Training path: 50% horizontal flips (and random 4-pixel-padded crops when
// enabled) under the given RNG, then per-channel (x - mean) / std. With
// training == false only normalization is applied.
Tensor augment_batch(const Tensor& batch, AugmentPolicy policy, const Normalization& norm,
                     std::mt19937& rng, bool training);
Tensor horizontal_flip(const Tensor& batch);
Tensor normalize_batch(const Tensor& batch, const Normalization& norm);
Tensor denormalize_batch(const Tensor& batch, const Normalization& norm);

}  // namespace tsbn
