#ifndef DAQ_TENSOR_HPP
#define DAQ_TENSOR_HPP

// Dense row-major n-dimensional array, the sole numeric carrier. Arithmetic
// always runs in double; the dtype tag records storage precision for
// checkpoints, and F32 tensors are kept rounded to float-representable
// values so save/load round-trips are bit-exact.

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "daq/error.hpp"
#include "daq/rng.hpp"

namespace daq {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, DType dtype = DType::kF64)
        : shape_(std::move(shape)), dtype_(dtype) {
        for (auto d : shape_)
            if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape_));
        data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
    }

    static Tensor zeros(Shape shape, DType dtype = DType::kF64) {
        return Tensor(std::move(shape), dtype);
    }

    static Tensor full(Shape shape, double value, DType dtype = DType::kF64) {
        Tensor t(std::move(shape), dtype);
        for (auto& v : t.data_) v = value;
        t.enforce_dtype();
        return t;
    }

    static Tensor scalar(double value) {
        Tensor t(Shape{1});
        t.data_[0] = value;
        return t;
    }

    static Tensor from(Shape shape, std::vector<double> values, DType dtype = DType::kF64) {
        Tensor t(std::move(shape), dtype);
        if (static_cast<std::int64_t>(values.size()) != t.numel())
            throw ShapeError("tensor init: " + std::to_string(values.size()) +
                             " values for shape " + shape_str(t.shape_));
        t.data_ = std::move(values);
        t.enforce_dtype();
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = stddev * rng.normal();
        return t;
    }

    const Shape& shape() const { return shape_; }
    DType dtype() const { return dtype_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    std::int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }

    // 4-d accessor for [N,C,H,W] tensors.
    double& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    double at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
        return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel())
            throw ShapeError("reshape: " + shape_str(shape_) + " to " + shape_str(shape));
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    // Round every element through float; called on construction paths that
    // produce F32 tensors so the in-memory values match their storage.
    void enforce_dtype() {
        if (dtype_ == DType::kF32)
            for (auto& v : data_) v = static_cast<double>(static_cast<float>(v));
    }

    void set_dtype(DType d) {
        dtype_ = d;
        enforce_dtype();
    }

private:
    Shape shape_;
    std::vector<double> data_;
    DType dtype_ = DType::kF64;
};

} // namespace daq

#endif // DAQ_TENSOR_HPP
