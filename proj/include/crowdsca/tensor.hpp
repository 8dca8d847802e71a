#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace crowdsca {

/// Batch-major 4-d shape: (batch, channels, rows, cols).
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    [[nodiscard]] std::size_t size() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    [[nodiscard]] std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
               std::to_string(w) + ")";
    }
    friend bool operator==(const Shape&, const Shape&) = default;
};

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense NCHW tensor with contiguous storage.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
    Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] int n() const { return shape_.n; }
    [[nodiscard]] int c() const { return shape_.c; }
    [[nodiscard]] int h() const { return shape_.h; }
    [[nodiscard]] int w() const { return shape_.w; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& operator()(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    const T& operator()(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

    /// Pointer to the (n, c) plane.
    T* plane(int n, int c) { return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane(); }
    const T* plane(int n, int c) const {
        return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane();
    }
    /// Pointer to sample n (all channels).
    T* sample(int n) { return plane(n, 0); }
    const T* sample(int n) const { return plane(n, 0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    /// Reinterprets storage under a new shape of equal size.
    void reshape(Shape s) {
        if (s.size() != data_.size()) {
            throw ShapeError("reshape " + shape_.str() + " -> " + s.str());
        }
        shape_ = s;
    }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out[i] = static_cast<U>(data_[i]);
        }
        return out;
    }

    Tensor& operator+=(const Tensor& o) {
        check_same(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) {
            data_[i] += o.data_[i];
        }
        return *this;
    }

    void check_same(const Tensor& o, const char* what) const {
        if (!(shape_ == o.shape_)) {
            throw ShapeError(std::string(what) + ": shape mismatch " + shape_.str() + " vs " + o.shape_.str());
        }
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    [[nodiscard]] std::size_t index(int n, int c, int h, int w) const {
        assert(n >= 0 && n < shape_.n && c >= 0 && c < shape_.c && h >= 0 && h < shape_.h && w >= 0 &&
               w < shape_.w);
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    Shape shape_{};
    std::vector<T> data_;
};

/// Selects samples [begin, begin + count) along the batch axis.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, int begin, int count) {
    Tensor<T> out(count, t.c(), t.h(), t.w());
    std::copy(t.sample(begin), t.sample(begin) + out.size(), out.data());
    return out;
}

/// Bit-exact comparison helper for snapshots (NaN-safe by comparing storage).
template <typename T>
bool bit_identical(const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape())) {
        return false;
    }
    return std::equal(a.storage().begin(), a.storage().end(), b.storage().begin(),
                      [](T x, T y) { return std::memcmp(&x, &y, sizeof(T)) == 0; });
}

}  // namespace crowdsca
