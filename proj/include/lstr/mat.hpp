#pragma once

// Dense row-major matrices and the forward kernels shared by the training
// tape, the double-precision evaluator, and the float streaming path.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lstr/mask.hpp"

namespace lstr {

template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T{}) {}
    Mat(int r, int c, std::initializer_list<T> vals) : rows(r), cols(c), data(vals) {
        if (data.size() != static_cast<std::size_t>(r) * c) {
            throw std::invalid_argument("Mat: initializer size does not match shape");
        }
    }

    static Mat zeros(int r, int c) { return Mat(r, c); }

    T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    const T& operator()(int r, int c) const {
        return data[static_cast<std::size_t>(r) * cols + c];
    }

    std::span<T> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)}; }
    std::span<const T> row(int r) const {
        return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
    }

    std::size_t size() const { return data.size(); }
    bool empty() const { return rows == 0 || cols == 0; }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (const T& v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }
};

using MatD = Mat<double>;
using MatF = Mat<float>;

template <typename To, typename From>
Mat<To> cast_mat(const Mat<From>& m) {
    Mat<To> out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        out.data[i] = static_cast<To>(m.data[i]);
    }
    return out;
}

inline std::string shape_str(int r, int c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

// ---------------------------------------------------------------------------
// forward kernels

template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: inner dimensions differ, a is " +
                                    shape_str(a.rows, a.cols) + ", b is " +
                                    shape_str(b.rows, b.cols));
    }
    Mat<T> c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const T* arow = a.data.data() + static_cast<std::size_t>(i) * a.cols;
        T* crow = c.data.data() + static_cast<std::size_t>(i) * c.cols;
        for (int k = 0; k < a.cols; ++k) {
            const T aik = arow[k];
            const T* brow = b.data.data() + static_cast<std::size_t>(k) * b.cols;
            for (int j = 0; j < b.cols; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    return c;
}

template <typename T>
Mat<T> transpose(const Mat<T>& a) {
    Mat<T> t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < a.cols; ++j) {
            t(j, i) = a(i, j);
        }
    }
    return t;
}

template <typename T>
Mat<T> add(const Mat<T>& a, const Mat<T>& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("add: shape mismatch, a is " + shape_str(a.rows, a.cols) +
                                    ", b is " + shape_str(b.rows, b.cols));
    }
    Mat<T> c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) c.data[i] = a.data[i] + b.data[i];
    return c;
}

template <typename T>
Mat<T> scale(const Mat<T>& a, double s) {
    Mat<T> c(a.rows, a.cols);
    const T ts = static_cast<T>(s);
    for (std::size_t i = 0; i < a.data.size(); ++i) c.data[i] = a.data[i] * ts;
    return c;
}

// Broadcast-add a 1xC row vector to every row of x.
template <typename T>
Mat<T> add_row(const Mat<T>& x, const Mat<T>& r) {
    if (r.rows != 1 || r.cols != x.cols) {
        throw std::invalid_argument("add_row: expected 1x" + std::to_string(x.cols) +
                                    " row vector, got " + shape_str(r.rows, r.cols));
    }
    Mat<T> c(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        for (int j = 0; j < x.cols; ++j) {
            c(i, j) = x(i, j) + r.data[static_cast<std::size_t>(j)];
        }
    }
    return c;
}

template <typename T>
Mat<T> relu(const Mat<T>& x) {
    Mat<T> c(x.rows, x.cols);
    for (std::size_t i = 0; i < x.data.size(); ++i) c.data[i] = x.data[i] > T{} ? x.data[i] : T{};
    return c;
}

// Row-wise normalization to zero mean / unit variance (biased variance),
// then elementwise affine with gain and bias (1xC each). Constant rows are
// held at zero by eps.
template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, double eps) {
    if (gain.rows != 1 || gain.cols != x.cols || bias.rows != 1 || bias.cols != x.cols) {
        throw std::invalid_argument("layer_norm: gain/bias must be 1x" + std::to_string(x.cols));
    }
    Mat<T> out(x.rows, x.cols);
    const int n = x.cols;
    for (int i = 0; i < x.rows; ++i) {
        T mean = T{};
        for (int j = 0; j < n; ++j) mean += x(i, j);
        mean /= static_cast<T>(n);
        T var = T{};
        for (int j = 0; j < n; ++j) {
            const T d = x(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T inv = static_cast<T>(1) / std::sqrt(var + static_cast<T>(eps));
        for (int j = 0; j < n; ++j) {
            out(i, j) = (x(i, j) - mean) * inv * gain.data[static_cast<std::size_t>(j)] +
                        bias.data[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

// Row softmax, stabilized by subtracting the row max. With a mask, the max
// and the sum run over allowed entries only and masked entries get weight 0.
// A fully masked row is rejected.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& s, const AttentionMask* mask = nullptr) {
    if (mask != nullptr && (mask->rows != s.rows || mask->cols != s.cols)) {
        throw std::invalid_argument("softmax_rows: mask is " +
                                    shape_str(mask->rows, mask->cols) + ", scores are " +
                                    shape_str(s.rows, s.cols));
    }
    Mat<T> p(s.rows, s.cols);
    for (int i = 0; i < s.rows; ++i) {
        T mx = T{};
        bool any = false;
        for (int j = 0; j < s.cols; ++j) {
            if (mask != nullptr && !mask->allowed(i, j)) continue;
            if (!any || s(i, j) > mx) mx = s(i, j);
            any = true;
        }
        if (!any) {
            throw std::invalid_argument("softmax_rows: row " + std::to_string(i) +
                                        " is fully masked");
        }
        T sum = T{};
        for (int j = 0; j < s.cols; ++j) {
            if (mask != nullptr && !mask->allowed(i, j)) {
                p(i, j) = T{};
                continue;
            }
            const T e = std::exp(s(i, j) - mx);
            p(i, j) = e;
            sum += e;
        }
        const T inv = static_cast<T>(1) / sum;
        for (int j = 0; j < s.cols; ++j) p(i, j) *= inv;
    }
    return p;
}

template <typename T>
Mat<T> col_slice(const Mat<T>& x, int c0, int w) {
    if (c0 < 0 || w <= 0 || c0 + w > x.cols) {
        throw std::invalid_argument("col_slice: [" + std::to_string(c0) + ", " +
                                    std::to_string(c0 + w) + ") out of range for " +
                                    shape_str(x.rows, x.cols));
    }
    Mat<T> out(x.rows, w);
    for (int i = 0; i < x.rows; ++i) {
        for (int j = 0; j < w; ++j) out(i, j) = x(i, c0 + j);
    }
    return out;
}

template <typename T>
Mat<T> col_concat(std::span<const Mat<T>> parts) {
    if (parts.empty()) throw std::invalid_argument("col_concat: no parts");
    int total = 0;
    for (const auto& p : parts) {
        if (p.rows != parts[0].rows) {
            throw std::invalid_argument("col_concat: row count mismatch");
        }
        total += p.cols;
    }
    Mat<T> out(parts[0].rows, total);
    for (int i = 0; i < out.rows; ++i) {
        int c = 0;
        for (const auto& p : parts) {
            for (int j = 0; j < p.cols; ++j) out(i, c++) = p(i, j);
        }
    }
    return out;
}

template <typename T>
Mat<T> row_concat(const Mat<T>& a, const Mat<T>& b) {
    if (a.rows == 0) return b;
    if (b.rows == 0) return a;
    if (a.cols != b.cols) {
        throw std::invalid_argument("row_concat: column mismatch, a is " +
                                    shape_str(a.rows, a.cols) + ", b is " +
                                    shape_str(b.rows, b.cols));
    }
    Mat<T> out(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

template <typename T>
T sum_all(const Mat<T>& x) {
    T s = T{};
    for (const T& v : x.data) s += v;
    return s;
}

}  // namespace lstr
