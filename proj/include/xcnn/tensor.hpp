#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "xcnn/error.hpp"

namespace xcnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Allocator with cache-line alignment. Eigen picks its vectorized loop bounds
/// from the buffer address, so a fixed alignment keeps results reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

/// Dense row-major binary32 array with an explicit shape.
///
/// The element count always equals the product of the extents. Extents are
/// strictly positive; a rank-0 tensor is not representable.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::span<const float> data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        check_shape(shape_);
        if (data_.size() != shape_size(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor from(std::initializer_list<std::size_t> shape, std::initializer_list<float> values) {
        return Tensor(Shape(shape), std::span<const float>(values.begin(), values.size()));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    std::span<const float> values() const noexcept { return data_; }
    std::span<float> values() noexcept { return data_; }
    const float* data() const noexcept { return data_.data(); }
    float* data() noexcept { return data_.data(); }

    float operator[](std::size_t i) const noexcept { return data_[i]; }
    float& operator[](std::size_t i) noexcept { return data_[i]; }

    // [C,H,W] accessors
    float at(std::size_t c, std::size_t h, std::size_t w) const { return data_[(c * shape_[1] + h) * shape_[2] + w]; }
    float& at(std::size_t c, std::size_t h, std::size_t w) { return data_[(c * shape_[1] + h) * shape_[2] + w]; }

    /// Contiguous view of one leading-axis slice, e.g. one channel of a [C,H,W] map.
    std::span<const float> slice(std::size_t i) const {
        const std::size_t stride = data_.size() / shape_.at(0);
        return std::span<const float>(data_).subspan(i * stride, stride);
    }
    std::span<float> slice(std::size_t i) {
        const std::size_t stride = data_.size() / shape_.at(0);
        return std::span<float>(data_).subspan(i * stride, stride);
    }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
    }

    void require_finite(const std::string& what) const {
        if (!all_finite()) throw NumericError("non-finite value in " + what);
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    /// Bitwise comparison; distinguishes -0 from +0, unlike operator==.
    friend bool bitwise_equal(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ &&
               std::equal(a.data_.begin(), a.data_.end(), b.data_.begin(), b.data_.end(),
                          [](float x, float y) { return std::memcmp(&x, &y, sizeof(float)) == 0; });
    }

private:
    static void check_shape(const Shape& shape) {
        if (shape.empty()) throw ShapeError("tensor shape must be non-empty");
        for (auto e : shape)
            if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
    }

    Shape shape_;
    FloatBuffer data_;
};

} // namespace xcnn
