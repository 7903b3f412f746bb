#pragma once

// Small dense matrices; enough for the condition checks and flow Jacobians
// (dimensions stay in the single digits).

#include <cassert>
#include <cmath>
#include <vector>

#include "expr.hpp"

namespace helm {

class Mat {
public:
    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : r_(r), c_(c), d_(r * c, fill) {}

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return r_; }
    std::size_t cols() const { return c_; }
    double& operator()(std::size_t i, std::size_t j) { return d_[i * c_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return d_[i * c_ + j]; }
    const std::vector<double>& data() const { return d_; }
    std::vector<double>& data() { return d_; }

    Mat transposed() const {
        Mat m(c_, r_);
        for (std::size_t i = 0; i < r_; ++i)
            for (std::size_t j = 0; j < c_; ++j) m(j, i) = (*this)(i, j);
        return m;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : d_) m = std::max(m, std::fabs(v));
        return m;
    }

    friend Mat operator*(const Mat& a, const Mat& b) {
        assert(a.c_ == b.r_);
        Mat m(a.r_, b.c_);
        for (std::size_t i = 0; i < a.r_; ++i)
            for (std::size_t k = 0; k < a.c_; ++k) {
                double v = a(i, k);
                if (v == 0.0) continue;
                for (std::size_t j = 0; j < b.c_; ++j) m(i, j) += v * b(k, j);
            }
        return m;
    }
    friend Mat operator+(const Mat& a, const Mat& b) {
        Mat m = a;
        for (std::size_t i = 0; i < m.d_.size(); ++i) m.d_[i] += b.d_[i];
        return m;
    }
    friend Mat operator-(const Mat& a, const Mat& b) {
        Mat m = a;
        for (std::size_t i = 0; i < m.d_.size(); ++i) m.d_[i] -= b.d_[i];
        return m;
    }
    friend Mat operator*(double s, const Mat& a) {
        Mat m = a;
        for (auto& v : m.d_) v *= s;
        return m;
    }

    std::vector<double> apply(const std::vector<double>& x) const {
        assert(x.size() == c_);
        std::vector<double> y(r_, 0.0);
        for (std::size_t i = 0; i < r_; ++i)
            for (std::size_t j = 0; j < c_; ++j) y[i] += (*this)(i, j) * x[j];
        return y;
    }

private:
    std::size_t r_ = 0, c_ = 0;
    std::vector<double> d_;
};

inline double det(Mat m) {
    assert(m.rows() == m.cols());
    std::size_t n = m.rows();
    double sign = 1.0, prod = 1.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t i = col + 1; i < n; ++i)
            if (std::fabs(m(i, col)) > std::fabs(m(piv, col))) piv = i;
        if (m(piv, col) == 0.0) return 0.0;
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) std::swap(m(piv, j), m(col, j));
            sign = -sign;
        }
        prod *= m(col, col);
        for (std::size_t i = col + 1; i < n; ++i) {
            double f = m(i, col) / m(col, col);
            for (std::size_t j = col; j < n; ++j) m(i, j) -= f * m(col, j);
        }
    }
    return sign * prod;
}

inline Mat inverse(const Mat& a) {
    assert(a.rows() == a.cols());
    std::size_t n = a.rows();
    Mat m = a, inv = Mat::identity(n);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t i = col + 1; i < n; ++i)
            if (std::fabs(m(i, col)) > std::fabs(m(piv, col))) piv = i;
        if (m(piv, col) == 0.0) throw error("singular matrix");
        if (piv != col)
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(m(piv, j), m(col, j));
                std::swap(inv(piv, j), inv(col, j));
            }
        double p = m(col, col);
        for (std::size_t j = 0; j < n; ++j) {
            m(col, j) /= p;
            inv(col, j) /= p;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (i == col) continue;
            double f = m(i, col);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) {
                m(i, j) -= f * m(col, j);
                inv(i, j) -= f * inv(col, j);
            }
        }
    }
    return inv;
}

/// Orthonormal-ish basis of the nullspace of A (rows = constraints), by
/// row reduction with partial pivoting.  `tol` is relative to the largest
/// entry.
inline std::vector<std::vector<double>> nullspace(Mat a, double tol = 1e-10) {
    std::size_t rows = a.rows(), cols = a.cols();
    double scale = std::max(a.max_abs(), 1.0);
    double eps = tol * scale;
    std::vector<std::size_t> pivot_col;
    std::size_t rank = 0;
    for (std::size_t col = 0; col < cols && rank < rows; ++col) {
        std::size_t piv = rank;
        for (std::size_t i = rank; i < rows; ++i)
            if (std::fabs(a(i, col)) > std::fabs(a(piv, col))) piv = i;
        if (std::fabs(a(piv, col)) <= eps) continue;
        if (piv != rank)
            for (std::size_t j = 0; j < cols; ++j) std::swap(a(piv, j), a(rank, j));
        double p = a(rank, col);
        for (std::size_t j = 0; j < cols; ++j) a(rank, j) /= p;
        for (std::size_t i = 0; i < rows; ++i) {
            if (i == rank) continue;
            double f = a(i, col);
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < cols; ++j) a(i, j) -= f * a(rank, j);
        }
        pivot_col.push_back(col);
        ++rank;
    }
    std::vector<bool> is_pivot(cols, false);
    for (auto c : pivot_col) is_pivot[c] = true;
    std::vector<std::vector<double>> basis;
    for (std::size_t free = 0; free < cols; ++free) {
        if (is_pivot[free]) continue;
        std::vector<double> v(cols, 0.0);
        v[free] = 1.0;
        for (std::size_t r = 0; r < rank; ++r) v[pivot_col[r]] = -a(r, free);
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
        basis.push_back(std::move(v));
    }
    return basis;
}

// ---------------------------------------------------------------- symbolic matrices

using ExprMat = std::vector<std::vector<Expr>>;

inline ExprMat expr_mat(std::size_t r, std::size_t c) {
    return ExprMat(r, std::vector<Expr>(c, num(0.0)));
}

inline ExprMat expr_identity(std::size_t n) {
    ExprMat m = expr_mat(n, n);
    for (std::size_t i = 0; i < n; ++i) m[i][i] = num(1.0);
    return m;
}

inline bool struct_zero(const ExprMat& m) {
    for (const auto& row : m)
        for (const auto& e : row)
            if (!e.is_zero()) return false;
    return true;
}

}  // namespace helm
