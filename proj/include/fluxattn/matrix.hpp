#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace fluxattn {

/// Row-major dense matrix of f32 values. Cache tensors and trace files use
/// f32 storage; attention arithmetic accumulates in f64.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw std::runtime_error("bad-shape: data size does not match rows*cols");
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0; }

    std::span<const float> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }
    std::span<float> row(std::size_t r) {
        return {data_.data() + r * cols_, cols_};
    }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    const float* data() const { return data_.data(); }
    float* data() { return data_.data(); }
    std::size_t size() const { return data_.size(); }

    void append_row(std::span<const float> r) {
        if (cols_ == 0) cols_ = r.size();
        if (r.size() != cols_)
            throw std::runtime_error("bad-shape: row width mismatch on append");
        data_.insert(data_.end(), r.begin(), r.end());
        ++rows_;
    }

    /// Copy of rows [begin, end).
    Matrix slice_rows(std::size_t begin, std::size_t end) const {
        Matrix out(end - begin, cols_);
        std::copy(data_.begin() + begin * cols_, data_.begin() + end * cols_, out.data_.begin());
        return out;
    }

    bool operator==(const Matrix& o) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

inline bool all_finite(std::span<const float> v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const Matrix& m) {
    return all_finite(std::span<const float>(m.data(), m.size()));
}

inline double dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

inline double l2_norm(std::span<const float> v) {
    double s = 0.0;
    for (float x : v) s += double(x) * double(x);
    return std::sqrt(s);
}

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace fluxattn
