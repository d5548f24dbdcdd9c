#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace red {

// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or index mismatch in a numeric operation.
struct DimensionError : Error {
    using Error::Error;
};

// A public operation produced (or was handed) a NaN/Inf.
struct NumericError : Error {
    using Error::Error;
};

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Shape is fixed at construction.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Throws NumericError naming `what` if any element is NaN/Inf.
void ensure_finite(std::span<const double> values, const char* what);
void ensure_finite(double value, const char* what);

Vector matvec(const Matrix& m, const Vector& v);
// out = M v. out must already have m.rows() elements.
void matvec_into(Vector& out, const Matrix& m, const Vector& v);
// out = M^T v. out must already have m.cols() elements.
void matvec_transposed_into(Vector& out, const Matrix& m, const Vector& v);
// acc += u v^T
void add_outer(Matrix& acc, const Vector& u, const Vector& v);
// y += a * x
void add_scaled(Vector& y, const Vector& x, double a);

double dot(const Vector& a, const Vector& b);
double squared_norm(const Vector& v);

Vector sigmoid(const Vector& v);
Vector tanh(const Vector& v);

// Max-subtracted softmax; output sums to 1 within 1e-12.
Vector softmax(const Vector& v);

/// Central-difference gradient: ((f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps))_i.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& theta,
                        double eps = 1e-5);

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_parameter_index = 0;
    double analytic_value = 0.0;
    double numeric_value = 0.0;
};

// Per-coordinate relative error |a-n| / max(1, |a|, |n|), reduced to the worst coordinate.
GradCheckReport grad_check_report(const Vector& analytic, const Vector& numeric);

} // namespace red
