#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "trml/errors.hpp"

namespace trml {

/// Dense row-major matrix of 64-bit reals. Row vectors are 1xN matrices.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix row(std::vector<double> values) {
        Matrix m;
        m.rows_ = 1;
        m.cols_ = values.size();
        m.data_ = std::move(values);
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double& operator[](std::size_t k) { return data_[k]; }
    double operator[](std::size_t k) const { return data_[k]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    Matrix extract_row(std::size_t i) const {
        Matrix out(1, cols_);
        for (std::size_t j = 0; j < cols_; ++j) out[j] = (*this)(i, j);
        return out;
    }

    void set_row(std::size_t i, const Matrix& r) {
        for (std::size_t j = 0; j < cols_; ++j) (*this)(i, j) = r[j];
    }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline bool all_finite(const Matrix& m) {
    for (double v : m.data())
        if (!std::isfinite(v)) return false;
    return true;
}

inline void require_finite(const Matrix& m, const std::string& what) {
    if (!all_finite(m)) throw numeric_error("non-finite values in " + what);
}

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) throw numeric_error("shape mismatch in " + what);
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require_shape(a.cols() == b.rows(), "matmul");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline Matrix transposed(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    require_shape(a.same_shape(b), "add");
    Matrix c = a;
    for (std::size_t k = 0; k < c.size(); ++k) c[k] += b[k];
    return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    require_shape(a.same_shape(b), "sub");
    Matrix c = a;
    for (std::size_t k = 0; k < c.size(); ++k) c[k] -= b[k];
    return c;
}

inline Matrix scaled(const Matrix& a, double c) {
    Matrix out = a;
    for (double& v : out.data()) v *= c;
    return out;
}

inline double dot(const Matrix& a, const Matrix& b) {
    require_shape(a.size() == b.size(), "dot");
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

inline double l2_norm(const Matrix& a) { return std::sqrt(dot(a, a)); }

/// Decimal text round-trippable at 64-bit precision (17 significant digits).
inline std::string fmt17(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, const std::string& what) {
    double v = 0.0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw data_error("bad number '" + std::string(text) + "' in " + what);
    return v;
}

}  // namespace trml
