#pragma once

#include <algorithm>
#include <cstring>
#include <memory>
#include <numeric>
#include <sstream>
#include <vector>

#include "diffloss/core/common.hpp"

namespace diffloss {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense float32 tensor. Storage is shared between copies; graph code treats
// tensors as immutable after creation, in-place mutation is reserved for
// uniquely-owned buffers (parameters, gradient accumulators).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.f)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<float>>(shape_numel(shape_), fill)) {}

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.f); }
    static Tensor full(Shape shape, float v) { return Tensor(std::move(shape), v); }

    static Tensor scalar(float v) { return full({1}, v); }

    static Tensor from_vector(Shape shape, std::vector<float> v) {
        Tensor t;
        t.shape_ = std::move(shape);
        if (static_cast<int64_t>(v.size()) != shape_numel(t.shape_))
            throw ArgumentError("Tensor::from_vector: size mismatch for shape " + shape_str(t.shape_));
        t.data_ = std::make_shared<std::vector<float>>(std::move(v));
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, float stddev = 1.f) {
        Tensor t(std::move(shape));
        for (float& x : *t.data_) x = static_cast<float>(rng.normal()) * stddev;
        return t;
    }

    static Tensor rand_uniform(Shape shape, Rng& rng, float lo = 0.f, float hi = 1.f) {
        Tensor t(std::move(shape));
        for (float& x : *t.data_) x = static_cast<float>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const { return shape_; }
    int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }

    const float* data() const { return data_->data(); }
    float* data() { return data_->data(); }

    float& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

    // NCHW accessor
    float& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return (*data_)[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    float at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return (*data_)[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<float>>(*data_);
        return t;
    }

    // Shares storage.
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel())
            throw ArgumentError("reshape: numel mismatch " + shape_str(shape_) + " -> " + shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(float v) { std::fill(data_->begin(), data_->end(), v); }

    void add_(const Tensor& o, float scale = 1.f) {
        const float* q = o.data();
        float* p = data();
        for (int64_t i = 0, n = numel(); i < n; ++i) p[i] += scale * q[i];
    }

    void scale_(float s) {
        for (float& x : *data_) x *= s;
    }

    void clamp_(float lo, float hi) {
        for (float& x : *data_) x = std::min(hi, std::max(lo, x));
    }

    double sum_double() const {
        double s = 0.0;
        for (float x : *data_) s += x;
        return s;
    }

    float max_abs() const {
        float m = 0.f;
        for (float x : *data_) m = std::max(m, std::abs(x));
        return m;
    }

    bool all_finite() const {
        for (float x : *data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    uint64_t checksum() const {
        return data_ ? fnv1a64(data_->data(), data_->size() * sizeof(float)) : 0;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<float>> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ArgumentError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
}

// Value range of image batches. Restoration I/O lives in [0,1], the diffusion
// process in [-1,1].
enum class Range { unit, symmetric };

struct ImageBatch {
    Tensor data;   // (N, C, H, W)
    Range range = Range::unit;

    int64_t batch() const { return data.dim(0); }
    int64_t channels() const { return data.dim(1); }
    int64_t height() const { return data.dim(2); }
    int64_t width() const { return data.dim(3); }

    void validate() const {
        if (data.rank() != 4) throw ArgumentError("ImageBatch: want rank-4 NCHW, got " + shape_str(data.shape()));
        float lo = range == Range::unit ? 0.f : -1.f;
        const float* p = data.data();
        for (int64_t i = 0, n = data.numel(); i < n; ++i)
            if (p[i] < lo - 1e-6f || p[i] > 1.f + 1e-6f)
                throw ArgumentError("ImageBatch: value out of declared range");
    }
};

// v -> 2v - 1
inline Tensor to_symmetric(const Tensor& unit) {
    Tensor out(unit.shape());
    const float* p = unit.data();
    float* q = out.data();
    for (int64_t i = 0, n = unit.numel(); i < n; ++i) q[i] = 2.f * p[i] - 1.f;
    return out;
}

// v -> (v + 1) / 2
inline Tensor to_unit(const Tensor& symmetric) {
    Tensor out(symmetric.shape());
    const float* p = symmetric.data();
    float* q = out.data();
    for (int64_t i = 0, n = symmetric.numel(); i < n; ++i) q[i] = (p[i] + 1.f) * 0.5f;
    return out;
}

}  // namespace diffloss
