#include "tsbn/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tsbn {

Tensor Dataset::gather(const std::vector<int>& indices) const {
    const int64_t sn = sample_numel();
    Tensor out({static_cast<int>(indices.size()), channels, height, width});
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        detail::require(idx >= 0 && idx < size(), "dataset index " + std::to_string(idx) + " out of range");
        std::copy(pixels.begin() + static_cast<int64_t>(idx) * sn,
                  pixels.begin() + static_cast<int64_t>(idx + 1) * sn,
                  out.data.begin() + static_cast<int64_t>(i) * sn);
    }
    return out;
}

std::vector<int> Dataset::indices_of_class(int global_class) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i) {
        if (labels[static_cast<size_t>(i)] == global_class) out.push_back(i);
    }
    return out;
}

// ------------------------------------------------------------ synthetic

namespace {

void hue_to_rgb(float hue, float rgb[3]) {
    const float h = 6.0f * (hue - std::floor(hue));
    const int sector = static_cast<int>(h) % 6;
    const float f = h - std::floor(h);
    switch (sector) {
        case 0: rgb[0] = 1; rgb[1] = f; rgb[2] = 0; break;
        case 1: rgb[0] = 1 - f; rgb[1] = 1; rgb[2] = 0; break;
        case 2: rgb[0] = 0; rgb[1] = 1; rgb[2] = f; break;
        case 3: rgb[0] = 0; rgb[1] = 1 - f; rgb[2] = 1; break;
        case 4: rgb[0] = f; rgb[1] = 0; rgb[2] = 1; break;
        default: rgb[0] = 1; rgb[1] = 0; rgb[2] = 1 - f; break;
    }
}

struct BlobParams {
    float cx, cy, radius;
    float rgb[3];
};

BlobParams blob_for_class(const SyntheticSpec& spec, int c, bool pretrain) {
    const float s = static_cast<float>(spec.image_size);
    const int k = pretrain ? std::max(spec.pretrain_classes, 1) : std::max(spec.num_classes, 1);
    const float angle = 2.0f * 3.14159265f * (static_cast<float>(c) / k + (pretrain ? 0.5f / k : 0.0f));
    const float ring = pretrain ? 0.18f : 0.30f;
    BlobParams b;
    b.cx = 0.5f * s + ring * s * std::cos(angle);
    b.cy = 0.5f * s + ring * s * std::sin(angle);
    b.radius = spec.blob_radius * s;
    const float hue = static_cast<float>(c) / k + (pretrain ? 0.5f / k : 0.0f);
    hue_to_rgb(hue, b.rgb);
    return b;
}

Dataset make_blob_split(const SyntheticSpec& spec, const std::string& split, int per_class,
                        int num_classes, bool pretrain, uint64_t stream_tag) {
    Dataset ds;
    ds.split = split;
    ds.channels = 3;
    ds.height = spec.image_size;
    ds.width = spec.image_size;
    for (int c = 0; c < num_classes; ++c) {
        ds.class_names.push_back((pretrain ? "aux_" : "blob_") + std::to_string(c));
    }
    const int64_t sn = ds.sample_numel();
    ds.pixels.resize(static_cast<size_t>(sn) * num_classes * per_class);
    ds.labels.resize(static_cast<size_t>(num_classes) * per_class);

    int64_t sample = 0;
    for (int c = 0; c < num_classes; ++c) {
        const BlobParams b = blob_for_class(spec, c, pretrain);
        std::mt19937 rng(static_cast<uint32_t>(mix_seed(spec.seed, stream_tag, static_cast<uint64_t>(c))));
        std::normal_distribution<float> noise(0.0f, 1.0f);
        for (int i = 0; i < per_class; ++i, ++sample) {
            float* img = ds.pixels.data() + sample * sn;
            for (int y = 0; y < spec.image_size; ++y) {
                for (int x = 0; x < spec.image_size; ++x) {
                    const float dx = static_cast<float>(x) - b.cx;
                    const float dy = static_cast<float>(y) - b.cy;
                    const float g = std::exp(-(dx * dx + dy * dy) / (2.0f * b.radius * b.radius));
                    for (int ch = 0; ch < 3; ++ch) {
                        float v = b.rgb[ch] * g;
                        if (spec.noise_sigma > 0.0f) v += spec.noise_sigma * noise(rng);
                        img[ch * spec.image_size * spec.image_size + y * spec.image_size + x] = v;
                    }
                }
            }
            ds.labels[static_cast<size_t>(sample)] = c;
        }
    }
    return ds;
}

}  // namespace

DataBundle synthesize(const SyntheticSpec& spec) {
    detail::require(spec.num_classes >= 1 && spec.image_size >= 4, "synthetic spec needs classes and size >= 4");
    DataBundle bundle;
    bundle.train = make_blob_split(spec, "train", spec.train_per_class, spec.num_classes, false, 0x11);
    bundle.test = make_blob_split(spec, "test", spec.test_per_class, spec.num_classes, false, 0x22);
    if (spec.pretrain_classes > 0) {
        bundle.pretrain =
            make_blob_split(spec, "pretrain", spec.pretrain_per_class, spec.pretrain_classes, true, 0x33);
    }
    return bundle;
}

// ------------------------------------------------------------ image files

namespace {

void skip_ppm_whitespace(std::ifstream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

ImageU8 read_pnm(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    detail::require(in.good(), "cannot open image " + file.string());
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    const bool gray = magic == "P5";
    detail::require(gray || magic == "P6", file.string() + ": unsupported PNM magic '" + magic + "'");
    int w = 0, h = 0, maxval = 0;
    skip_ppm_whitespace(in);
    in >> w;
    skip_ppm_whitespace(in);
    in >> h;
    skip_ppm_whitespace(in);
    in >> maxval;
    in.get();  // single whitespace before raster
    detail::require(w > 0 && h > 0 && maxval == 255, file.string() + ": bad PNM header");
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.channels = gray ? 1 : 3;
    img.pixels.resize(static_cast<size_t>(w) * h * img.channels);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    detail::require(in.gcount() == static_cast<std::streamsize>(img.pixels.size()),
                    file.string() + ": truncated PNM raster");
    return img;
}

ImageU8 read_png(const fs::path& file) {
    FILE* fp = std::fopen(file.string().c_str(), "rb");
    detail::require(fp != nullptr, "cannot open image " + file.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng init failed for " + file.string());
    }
    ImageU8 img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("undecodable PNG " + file.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int ch = static_cast<int>(png_get_channels(png, info));
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error(file.string() + ": unsupported PNG channel count " + std::to_string(ch));
    }
    img.width = w;
    img.height = h;
    img.channels = ch;
    img.pixels.resize(static_cast<size_t>(w) * h * ch);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<size_t>(y)] = img.pixels.data() + static_cast<size_t>(y) * w * ch;
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

}  // namespace

ImageU8 read_image_file(const fs::path& file) {
    const std::string ext = file.extension().string();
    if (ext == ".ppm" || ext == ".pgm") return read_pnm(file);
    if (ext == ".png") return read_png(file);
    throw std::runtime_error("unsupported image extension '" + ext + "' for " + file.string());
}

void write_ppm(const fs::path& file, const ImageU8& img) {
    detail::require(img.channels == 3 || img.channels == 1, "write_ppm expects 1 or 3 channels");
    std::ofstream out(file, std::ios::binary);
    detail::require(out.good(), "cannot write " + file.string());
    out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
}

void write_png_rgb8(const fs::path& file, const ImageU8& img) {
    detail::require(img.channels == 3, "write_png_rgb8 expects 3 channels");
    FILE* fp = std::fopen(file.string().c_str(), "wb");
    detail::require(fp != nullptr, "cannot write " + file.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("PNG write failed for " + file.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(y) * img.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

// ------------------------------------------------------------ directory loader

namespace {

// Bilinear resize of a HWC uint8 image into CHW floats in [0,1], always 3 channels.
void resize_into(const ImageU8& img, int out_size, float* dst) {
    const float sx = static_cast<float>(img.width) / out_size;
    const float sy = static_cast<float>(img.height) / out_size;
    for (int ch = 0; ch < 3; ++ch) {
        const int src_ch = img.channels == 1 ? 0 : ch;
        for (int y = 0; y < out_size; ++y) {
            const float fy = std::min((y + 0.5f) * sy - 0.5f, static_cast<float>(img.height - 1));
            const int y0 = std::max(0, static_cast<int>(std::floor(fy)));
            const int y1 = std::min(img.height - 1, y0 + 1);
            const float wy = std::max(0.0f, fy - y0);
            for (int x = 0; x < out_size; ++x) {
                const float fx = std::min((x + 0.5f) * sx - 0.5f, static_cast<float>(img.width - 1));
                const int x0 = std::max(0, static_cast<int>(std::floor(fx)));
                const int x1 = std::min(img.width - 1, x0 + 1);
                const float wx = std::max(0.0f, fx - x0);
                auto px = [&](int yy, int xx) {
                    return static_cast<float>(
                        img.pixels[(static_cast<size_t>(yy) * img.width + xx) * img.channels + src_ch]);
                };
                const float v = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x1)) +
                                wy * ((1 - wx) * px(y1, x0) + wx * px(y1, x1));
                dst[(ch * out_size + y) * out_size + x] = v / 255.0f;
            }
        }
    }
}

Dataset load_split_dir(const fs::path& split_dir, const std::string& split, int resize_to,
                       std::vector<std::string>* fixed_classes) {
    Dataset ds;
    ds.split = split;
    ds.channels = 3;
    ds.height = resize_to;
    ds.width = resize_to;

    std::vector<std::string> class_dirs;
    for (const auto& e : fs::directory_iterator(split_dir)) {
        if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
    }
    std::sort(class_dirs.begin(), class_dirs.end());
    if (fixed_classes && !fixed_classes->empty()) {
        std::set<std::string> found(class_dirs.begin(), class_dirs.end());
        for (const std::string& c : *fixed_classes) {
            detail::require(found.count(c) > 0,
                            "class '" + c + "' present in train but missing from " + split);
        }
        class_dirs = *fixed_classes;
    }
    ds.class_names = class_dirs;

    std::vector<std::string> errors;
    const int64_t sn = ds.sample_numel();
    for (size_t ci = 0; ci < class_dirs.size(); ++ci) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(split_dir / class_dirs[ci])) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            errors.push_back(split + "/" + class_dirs[ci] + ": empty class directory");
            continue;
        }
        for (const fs::path& f : files) {
            try {
                const ImageU8 img = read_image_file(f);
                ds.pixels.resize(ds.pixels.size() + static_cast<size_t>(sn));
                resize_into(img, resize_to, ds.pixels.data() + ds.pixels.size() - sn);
                ds.labels.push_back(static_cast<int>(ci));
            } catch (const std::exception& e) {
                errors.push_back(e.what());
            }
        }
    }
    if (!errors.empty()) {
        std::string msg = "dataset errors under " + split_dir.string() + ":";
        for (const auto& e : errors) msg += "\n  " + e;
        throw std::runtime_error(msg);
    }
    return ds;
}

}  // namespace

DataBundle load_image_directory(const fs::path& root, int resize_to) {
    detail::require(resize_to >= 4, "resize_to must be >= 4");
    detail::require(fs::is_directory(root / "train"), "missing train/ split under " + root.string());
    detail::require(fs::is_directory(root / "test"), "missing test/ split under " + root.string());
    DataBundle bundle;
    bundle.train = load_split_dir(root / "train", "train", resize_to, nullptr);
    bundle.test = load_split_dir(root / "test", "test", resize_to, &bundle.train.class_names);
    if (fs::is_directory(root / "pretrain")) {
        bundle.pretrain = load_split_dir(root / "pretrain", "pretrain", resize_to, nullptr);
    }
    return bundle;
}

// ------------------------------------------------------------ raw format

static constexpr char kRawMagic[] = "TSBNDATA1\n";

void save_raw_dataset(const Dataset& ds, const fs::path& file) {
    json header;
    header["samples"] = ds.size();
    header["shape"] = {ds.channels, ds.height, ds.width};
    header["class_names"] = ds.class_names;
    header["split"] = ds.split;
    const std::string htext = header.dump();
    std::ofstream out(file, std::ios::binary);
    detail::require(out.good(), "cannot write " + file.string());
    out.write(kRawMagic, sizeof(kRawMagic) - 1);
    const uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    out.write(reinterpret_cast<const char*>(ds.pixels.data()),
              static_cast<std::streamsize>(ds.pixels.size() * sizeof(float)));
    std::vector<uint16_t> labels16(ds.labels.begin(), ds.labels.end());
    out.write(reinterpret_cast<const char*>(labels16.data()),
              static_cast<std::streamsize>(labels16.size() * sizeof(uint16_t)));
}

Dataset load_raw_dataset(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    detail::require(in.good(), "cannot open " + file.string());
    char magic[sizeof(kRawMagic) - 1];
    in.read(magic, sizeof(magic));
    detail::require(in.gcount() == sizeof(magic) && std::memcmp(magic, kRawMagic, sizeof(magic)) == 0,
                    file.string() + ": not a raw dataset file");
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    detail::require(in.gcount() == static_cast<std::streamsize>(hlen), file.string() + ": truncated header");

    Dataset ds;
    try {
        const json header = json::parse(htext);
        const auto shape = header.at("shape");
        ds.channels = shape.at(0).get<int>();
        ds.height = shape.at(1).get<int>();
        ds.width = shape.at(2).get<int>();
        ds.class_names = header.at("class_names").get<std::vector<std::string>>();
        ds.split = header.value("split", "train");
        const int n = header.at("samples").get<int>();
        ds.pixels.resize(static_cast<size_t>(n) * ds.sample_numel());
        ds.labels.resize(static_cast<size_t>(n));
    } catch (const json::exception& e) {
        throw std::runtime_error(file.string() + ": bad raw header: " + e.what());
    }
    in.read(reinterpret_cast<char*>(ds.pixels.data()),
            static_cast<std::streamsize>(ds.pixels.size() * sizeof(float)));
    detail::require(in.gcount() == static_cast<std::streamsize>(ds.pixels.size() * sizeof(float)),
                    file.string() + ": truncated pixel payload");
    std::vector<uint16_t> labels16(ds.labels.size());
    in.read(reinterpret_cast<char*>(labels16.data()),
            static_cast<std::streamsize>(labels16.size() * sizeof(uint16_t)));
    detail::require(in.gcount() == static_cast<std::streamsize>(labels16.size() * sizeof(uint16_t)),
                    file.string() + ": truncated label payload");
    std::copy(labels16.begin(), labels16.end(), ds.labels.begin());
    return ds;
}

// ------------------------------------------------------------ schedules

int TaskSchedule::task_of_class(int global_class) const {
    for (size_t t = 0; t < groups.size(); ++t) {
        for (int c : groups[t]) {
            if (c == global_class) return static_cast<int>(t);
        }
    }
    throw std::out_of_range("class " + std::to_string(global_class) + " not in schedule");
}

std::vector<int> TaskSchedule::classes_up_to(int task) const {
    std::vector<int> out;
    for (int t = 0; t <= task && t < task_count(); ++t) {
        out.insert(out.end(), groups[static_cast<size_t>(t)].begin(), groups[static_cast<size_t>(t)].end());
    }
    return out;
}

uint64_t TaskSchedule::hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& g : groups) {
        h = mix_seed(h, 0x5eed);
        for (int c : g) h = mix_seed(h, static_cast<uint64_t>(c) + 1);
    }
    return h;
}

TaskSchedule split_tasks(int num_classes, int tasks, int classes_per_task, uint64_t seed) {
    detail::require(tasks >= 1 && classes_per_task >= 1, "schedule needs tasks >= 1 and classes_per_task >= 1");
    detail::require(static_cast<int64_t>(tasks) * classes_per_task <= num_classes,
                    "infeasible schedule: " + std::to_string(tasks) + " x " +
                        std::to_string(classes_per_task) + " classes requested, dataset has " +
                        std::to_string(num_classes));
    std::vector<int> order(static_cast<size_t>(num_classes));
    for (int i = 0; i < num_classes; ++i) order[static_cast<size_t>(i)] = i;
    std::mt19937 rng(static_cast<uint32_t>(mix_seed(seed, 0x5c4edu)));
    std::shuffle(order.begin(), order.end(), rng);
    TaskSchedule schedule;
    for (int t = 0; t < tasks; ++t) {
        std::vector<int> group(order.begin() + static_cast<int64_t>(t) * classes_per_task,
                               order.begin() + static_cast<int64_t>(t + 1) * classes_per_task);
        schedule.groups.push_back(std::move(group));
    }
    return schedule;
}

TaskSchedule split_tasks_named(const Dataset& train,
                               const std::vector<std::vector<std::string>>& named_groups) {
    std::map<std::string, int> name_to_id;
    for (int i = 0; i < train.num_classes(); ++i) name_to_id[train.class_names[static_cast<size_t>(i)]] = i;
    TaskSchedule schedule;
    std::set<int> used;
    for (const auto& names : named_groups) {
        std::vector<int> group;
        for (const std::string& name : names) {
            auto it = name_to_id.find(name);
            detail::require(it != name_to_id.end(), "schedule names unknown class '" + name + "'");
            detail::require(used.insert(it->second).second, "class '" + name + "' appears in two tasks");
            group.push_back(it->second);
        }
        detail::require(!group.empty(), "empty task group in named schedule");
        schedule.groups.push_back(std::move(group));
    }
    return schedule;
}

// ------------------------------------------------------------ augmentation

AugmentPolicy augment_policy_from_string(const std::string& s) {
    if (s == "none") return AugmentPolicy::None;
    if (s == "flip") return AugmentPolicy::Flip;
    if (s == "flip_crop") return AugmentPolicy::FlipCrop;
    throw std::invalid_argument("augment policy must be none | flip | flip_crop, got '" + s + "'");
}

Tensor horizontal_flip(const Tensor& batch) {
    detail::require(batch.rank() == 4, "horizontal_flip expects NCHW batch");
    Tensor out(batch.shape);
    const int n_batch = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    for (int n = 0; n < n_batch; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at4(n, ch, y, x) = batch.at4(n, ch, y, w - 1 - x);
    return out;
}

Tensor normalize_batch(const Tensor& batch, const Normalization& norm) {
    detail::require(batch.rank() == 4, "normalize_batch expects NCHW batch");
    const int c = batch.dim(1);
    detail::require(static_cast<int>(norm.mean.size()) >= c && static_cast<int>(norm.std_dev.size()) >= c,
                    "normalization constants cover fewer channels than the batch");
    Tensor out(batch.shape);
    const int n_batch = batch.dim(0);
    const int64_t spatial = static_cast<int64_t>(batch.dim(2)) * batch.dim(3);
    for (int n = 0; n < n_batch; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            const float m = norm.mean[static_cast<size_t>(ch)];
            const float inv = 1.0f / norm.std_dev[static_cast<size_t>(ch)];
            const float* src = &batch.at4(n, ch, 0, 0);
            float* dst = &out.at4(n, ch, 0, 0);
            for (int64_t i = 0; i < spatial; ++i) dst[i] = (src[i] - m) * inv;
        }
    }
    return out;
}

Tensor denormalize_batch(const Tensor& batch, const Normalization& norm) {
    Tensor out(batch.shape);
    const int n_batch = batch.dim(0), c = batch.dim(1);
    const int64_t spatial = static_cast<int64_t>(batch.dim(2)) * batch.dim(3);
    for (int n = 0; n < n_batch; ++n) {
        for (int ch = 0; ch < c; ++ch) {
            const float m = norm.mean[static_cast<size_t>(ch)];
            const float s = norm.std_dev[static_cast<size_t>(ch)];
            const float* src = &batch.at4(n, ch, 0, 0);
            float* dst = &out.at4(n, ch, 0, 0);
            for (int64_t i = 0; i < spatial; ++i) dst[i] = src[i] * s + m;
        }
    }
    return out;
}

Tensor augment_batch(const Tensor& batch, AugmentPolicy policy, const Normalization& norm,
                     std::mt19937& rng, bool training) {
    if (!training || policy == AugmentPolicy::None) return normalize_batch(batch, norm);

    const int n_batch = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    constexpr int kCropPad = 4;
    Tensor out(batch.shape);
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<int> offset(0, 2 * kCropPad);
    for (int n = 0; n < n_batch; ++n) {
        const bool flip = coin(rng) == 1;
        int dy = kCropPad, dx = kCropPad;
        if (policy == AugmentPolicy::FlipCrop) {
            dy = offset(rng);
            dx = offset(rng);
        }
        for (int ch = 0; ch < c; ++ch) {
            for (int y = 0; y < h; ++y) {
                const int sy = y + dy - kCropPad;
                for (int x = 0; x < w; ++x) {
                    const int raw_x = flip ? (w - 1 - x) : x;
                    const int sx = raw_x + dx - kCropPad;
                    float v = 0.0f;
                    if (sy >= 0 && sy < h && sx >= 0 && sx < w) v = batch.at4(n, ch, sy, sx);
                    out.at4(n, ch, y, x) = v;
                }
            }
        }
    }
    return normalize_batch(out, norm);
}

}  // namespace tsbn
