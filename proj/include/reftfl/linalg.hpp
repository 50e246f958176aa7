#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "reftfl/rng.hpp"

namespace reftfl {

using Vector = std::vector<double>;

// Dense row-major matrix of 64-bit reals.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, Vector data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const double& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    Vector& data() { return data_; }
    const Vector& data() const { return data_; }

    bool all_finite() const;

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vector data_;
};

// Standard product with a deterministic row-major sequential summation order.
Matrix matmul(const Matrix& a, const Matrix& b);

// y = A x
Vector matvec(const Matrix& a, const Vector& x);
// y = Aᵀ x
Vector matvec_t(const Matrix& a, const Vector& x);

Matrix transpose(const Matrix& a);

// acc += scale · u vᵀ
void add_outer(Matrix& acc, const Vector& u, const Vector& v, double scale = 1.0);
// y += alpha · x
void axpy(Vector& y, double alpha, const Vector& x);

Vector add(const Vector& a, const Vector& b);
Vector sub(const Vector& a, const Vector& b);
Vector scaled(const Vector& a, double s);

double dot(const Vector& a, const Vector& b);
double l2_norm(const Vector& a);
double l2_distance(const Vector& a, const Vector& b);
double frobenius_norm(const Matrix& a);
double frobenius_distance(const Matrix& a, const Matrix& b);

bool all_finite(const Vector& a);

/**
 * Orthonormalizes the rows of `m` by modified Gram-Schmidt with one
 * re-orthogonalization pass. The output spans the same row space.
 *
 * Throws ShapeError if m.rows > m.cols, and DegeneracyError (carrying the
 * row index) when a row is numerically dependent on the rows above it.
 */
Matrix orthonormalize_rows(const Matrix& m);

// r×d matrix with orthonormal rows drawn from `rng` (Gaussian then
// orthonormalized). Requires r ≤ d.
Matrix random_orthonormal(std::size_t r, std::size_t d, Rng& rng);

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0);
Vector gaussian_vector(std::size_t len, Rng& rng, double scale = 1.0);

// Central finite differences: g_i = (f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps).
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x, double eps);

}  // namespace reftfl
