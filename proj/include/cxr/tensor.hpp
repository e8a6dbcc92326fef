#ifndef CXR_TENSOR_HPP
#define CXR_TENSOR_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cxr/errors.hpp"

namespace cxr {

/// Dense rank-1..4 float32 array, row-major. Rank-4 tensors follow the
/// N,C,H,W convention used throughout the library.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<float> values);

    static Tensor full(std::vector<int> shape, float value);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }

    float& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Rank-specific accessors; index arithmetic is the caller's usual hot
    // path so these stay branch-free.
    float& at2(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    float at2(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
    float& at3(int c, int h, int w) {
        return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    float at3(int c, int h, int w) const {
        return data_[(static_cast<size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    float& at4(int n, int c, int h, int w) {
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    float at4(int n, int c, int h, int w) const {
        return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    bool all_finite() const;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

/// Deterministic RNG. The engine is std::mt19937_64 (bit-exact everywhere);
/// the distributions are hand-rolled so results do not depend on the
/// standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    /// Uniform in [0,1).
    double uniform();
    double uniform(double lo, double hi);
    /// Standard normal via Box-Muller.
    double normal();
    double normal(double mean, double sd);
    /// Uniform integer in [0, n).
    int uniform_int(int n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    /// Derives an independent stream, e.g. for grid-search cells.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t salt);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// He-uniform fill: U(-limit, limit) with limit = sqrt(6 / fan_in).
void he_uniform_fill(Tensor& t, int fan_in, Rng& rng);

} // namespace cxr

#endif
