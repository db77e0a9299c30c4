#include "tsbn/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace tsbn {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        detail::require(d > 0, "tensor dimensions must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
}

Tensor::Tensor(std::vector<int> s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
    detail::require(shape_numel(shape) == static_cast<int64_t>(data.size()),
                    "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                        shape_str(shape));
}

Tensor Tensor::full(std::vector<int> s, float v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
}

void Tensor::fill(float v) {
    std::fill(data.begin(), data.end(), v);
}

bool Tensor::all_finite() const {
    for (float x : data) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

Parameter::Parameter(Tensor v, bool trainable_) : value(std::move(v)), trainable(trainable_) {
    grad = Tensor(value.shape);
}

uint64_t bit_hash_combine(uint64_t h, const Tensor& t) {
    for (float x : t.data) {
        uint32_t bits;
        std::memcpy(&bits, &x, sizeof(bits));
        for (int b = 0; b < 4; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

uint64_t bit_hash(const Tensor& t) {
    return bit_hash_combine(0xcbf29ce484222325ull, t);
}

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
    auto fin = [](uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    };
    uint64_t h = fin(a);
    h = fin(h ^ b);
    h = fin(h ^ c);
    h = fin(h ^ d);
    return h;
}

namespace detail {
void fail(const std::string& msg) {
    throw std::invalid_argument(msg);
}
}  // namespace detail

}  // namespace tsbn
