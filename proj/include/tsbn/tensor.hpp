#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tsbn {

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Dense row-major float32 tensor. NCHW layout for image batches.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    Tensor(std::vector<int> s, std::vector<float> values);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, float v);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    void fill(float v);
    bool all_finite() const;

    float& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2-D (rows x cols) access
    float& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    const float& at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

    // NCHW access
    float& at4(int n, int c, int h, int w) {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const float& at4(int n, int c, int h, int w) const {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
};

// Trainable value plus its accumulated gradient. A parameter with
// trainable == false must never be touched by an optimizer step.
struct Parameter {
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    explicit Parameter(Tensor v, bool trainable_ = true);

    void zero_grad() { grad.fill(0.0f); }
    int64_t numel() const { return value.numel(); }
};

// FNV-1a over the raw float bytes; used for bit-exactness checks.
uint64_t bit_hash(const Tensor& t);
uint64_t bit_hash_combine(uint64_t seed, const Tensor& t);

// Deterministic seed mixing (splitmix64 finalizer chain).
uint64_t mix_seed(uint64_t a, uint64_t b = 0, uint64_t c = 0, uint64_t d = 0);

namespace detail {
[[noreturn]] void fail(const std::string& msg);
inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}
}  // namespace detail

}  // namespace tsbn
