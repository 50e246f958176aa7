#include "reftfl/linalg.hpp"

#include <cmath>
#include <string>

#include "reftfl/errors.hpp"

namespace reftfl {

Matrix::Matrix(std::size_t rows, std::size_t cols, Vector data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

bool Matrix::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const double* brow = b.row(k);
            double* crow = c.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    return c;
}

Vector matvec(const Matrix& a, const Vector& x) {
    if (a.cols() != x.size()) {
        throw ShapeError("matvec: matrix cols " + std::to_string(a.cols()) +
                         " vs vector length " + std::to_string(x.size()));
    }
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            acc += arow[j] * x[j];
        }
        y[i] = acc;
    }
    return y;
}

Vector matvec_t(const Matrix& a, const Vector& x) {
    if (a.rows() != x.size()) {
        throw ShapeError("matvec_t: matrix rows " + std::to_string(a.rows()) +
                         " vs vector length " + std::to_string(x.size()));
    }
    Vector y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        const double xi = x[i];
        for (std::size_t j = 0; j < a.cols(); ++j) {
            y[j] += xi * arow[j];
        }
    }
    return y;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            t(j, i) = a(i, j);
        }
    }
    return t;
}

void add_outer(Matrix& acc, const Vector& u, const Vector& v, double scale) {
    if (acc.rows() != u.size() || acc.cols() != v.size()) {
        throw ShapeError("add_outer: accumulator shape mismatch");
    }
    for (std::size_t i = 0; i < u.size(); ++i) {
        double* row = acc.row(i);
        const double ui = scale * u[i];
        for (std::size_t j = 0; j < v.size(); ++j) {
            row[j] += ui * v[j];
        }
    }
}

void axpy(Vector& y, double alpha, const Vector& x) {
    if (y.size() != x.size()) {
        throw ShapeError("axpy: length mismatch");
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] += alpha * x[i];
    }
}

Vector add(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw ShapeError("add: length mismatch");
    Vector c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
    return c;
}

Vector sub(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw ShapeError("sub: length mismatch");
    Vector c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] - b[i];
    return c;
}

Vector scaled(const Vector& a, double s) {
    Vector c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = s * a[i];
    return c;
}

double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double l2_norm(const Vector& a) {
    double acc = 0.0;
    for (double v : a) acc += v * v;
    return std::sqrt(acc);
}

double l2_distance(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw ShapeError("l2_distance: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double frobenius_norm(const Matrix& a) {
    return l2_norm(a.data());
}

double frobenius_distance(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("frobenius_distance: shape mismatch");
    }
    return l2_distance(a.data(), b.data());
}

bool all_finite(const Vector& a) {
    for (double v : a) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Matrix orthonormalize_rows(const Matrix& m) {
    if (m.rows() > m.cols()) {
        throw ShapeError("orthonormalize_rows: more rows (" + std::to_string(m.rows()) +
                         ") than columns (" + std::to_string(m.cols()) + ")");
    }
    constexpr double kRankTol = 1e-10;
    const std::size_t r = m.rows();
    const std::size_t d = m.cols();
    Matrix q = m;

    // Scale-normalize first so the rank tolerance is scale-free.
    for (std::size_t i = 0; i < r; ++i) {
        double nrm = 0.0;
        for (std::size_t j = 0; j < d; ++j) nrm += q(i, j) * q(i, j);
        nrm = std::sqrt(nrm);
        if (!(nrm > 0.0) || !std::isfinite(nrm)) {
            throw DegeneracyError("orthonormalize_rows: zero or non-finite row " + std::to_string(i), i);
        }
        for (std::size_t j = 0; j < d; ++j) q(i, j) /= nrm;
    }

    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < r; ++i) {
            double* qi = q.row(i);
            for (std::size_t k = 0; k < i; ++k) {
                const double* qk = q.row(k);
                double proj = 0.0;
                for (std::size_t j = 0; j < d; ++j) proj += qi[j] * qk[j];
                for (std::size_t j = 0; j < d; ++j) qi[j] -= proj * qk[j];
            }
            double nrm = 0.0;
            for (std::size_t j = 0; j < d; ++j) nrm += qi[j] * qi[j];
            nrm = std::sqrt(nrm);
            if (nrm <= kRankTol) {
                throw DegeneracyError("orthonormalize_rows: row " + std::to_string(i) +
                                          " is numerically dependent on the rows above it",
                                      i);
            }
            for (std::size_t j = 0; j < d; ++j) qi[j] /= nrm;
        }
    }
    return q;
}

Matrix random_orthonormal(std::size_t r, std::size_t d, Rng& rng) {
    if (r > d) {
        throw ShapeError("random_orthonormal: r " + std::to_string(r) + " exceeds d " + std::to_string(d));
    }
    return orthonormalize_rows(gaussian_matrix(r, d, rng));
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
    Matrix m(rows, cols);
    for (double& v : m.data()) {
        v = scale * rng.gaussian();
    }
    return m;
}

Vector gaussian_vector(std::size_t len, Rng& rng, double scale) {
    Vector v(len);
    for (double& x : v) {
        x = scale * rng.gaussian();
    }
    return v;
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x, double eps) {
    if (!(eps > 0.0)) {
        throw InputError("finite_diff_grad: eps must be positive");
    }
    Vector grad(x.size());
    Vector probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        probe[i] = xi + eps;
        const double fp = f(probe);
        probe[i] = xi - eps;
        const double fm = f(probe);
        probe[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

}  // namespace reftfl
