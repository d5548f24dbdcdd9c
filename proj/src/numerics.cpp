#include "red/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace red {

namespace {

std::string shape_msg(const char* op, std::size_t a, std::size_t b) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s: dimension mismatch (%zu vs %zu)", op, a, b);
    return buf;
}

} // namespace

void ensure_finite(std::span<const double> values, const char* what) {
    for (double x : values) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(what) + ": non-finite value produced");
        }
    }
}

void ensure_finite(double value, const char* what) {
    if (!std::isfinite(value)) {
        throw NumericError(std::string(what) + ": non-finite value produced");
    }
}

Vector matvec(const Matrix& m, const Vector& v) {
    Vector out(m.rows());
    matvec_into(out, m, v);
    ensure_finite(out, "matvec");
    return out;
}

void matvec_into(Vector& out, const Matrix& m, const Vector& v) {
    if (m.cols() != v.size()) {
        throw DimensionError(shape_msg("matvec", m.cols(), v.size()));
    }
    if (out.size() != m.rows()) {
        throw DimensionError(shape_msg("matvec: output", out.size(), m.rows()));
    }
    const std::size_t cols = m.cols();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double* row = m.row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            acc += row[c] * v[c];
        }
        out[r] = acc;
    }
}

void matvec_transposed_into(Vector& out, const Matrix& m, const Vector& v) {
    if (m.rows() != v.size()) {
        throw DimensionError(shape_msg("matvec_transposed", m.rows(), v.size()));
    }
    if (out.size() != m.cols()) {
        throw DimensionError(shape_msg("matvec_transposed: output", out.size(), m.cols()));
    }
    std::fill(out.begin(), out.end(), 0.0);
    const std::size_t cols = m.cols();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double* row = m.row(r);
        const double vr = v[r];
        for (std::size_t c = 0; c < cols; ++c) {
            out[c] += row[c] * vr;
        }
    }
}

void add_outer(Matrix& acc, const Vector& u, const Vector& v) {
    if (acc.rows() != u.size() || acc.cols() != v.size()) {
        throw DimensionError(shape_msg("add_outer", acc.rows(), u.size()));
    }
    for (std::size_t r = 0; r < acc.rows(); ++r) {
        double* row = acc.row(r);
        const double ur = u[r];
        for (std::size_t c = 0; c < acc.cols(); ++c) {
            row[c] += ur * v[c];
        }
    }
}

void add_scaled(Vector& y, const Vector& x, double a) {
    if (y.size() != x.size()) {
        throw DimensionError(shape_msg("add_scaled", y.size(), x.size()));
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] += a * x[i];
    }
}

double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw DimensionError(shape_msg("dot", a.size(), b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

double squared_norm(const Vector& v) {
    double acc = 0.0;
    for (double x : v) {
        acc += x * x;
    }
    return acc;
}

Vector sigmoid(const Vector& v) {
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = 1.0 / (1.0 + std::exp(-v[i]));
    }
    ensure_finite(out, "sigmoid");
    return out;
}

Vector tanh(const Vector& v) {
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::tanh(v[i]);
    }
    ensure_finite(out, "tanh");
    return out;
}

Vector softmax(const Vector& v) {
    if (v.empty()) {
        throw DimensionError("softmax: empty input");
    }
    const double m = *std::max_element(v.begin(), v.end());
    ensure_finite(m, "softmax");
    Vector out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - m);
        sum += out[i];
    }
    for (double& x : out) {
        x /= sum;
    }
    ensure_finite(out, "softmax");
    return out;
}

Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& theta,
                        double eps) {
    if (eps <= 0.0) {
        throw NumericError("finite_diff_grad: eps must be positive");
    }
    Vector grad(theta.size());
    Vector probe = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        probe[i] = theta[i] + eps;
        const double hi = f(probe);
        probe[i] = theta[i] - eps;
        const double lo = f(probe);
        probe[i] = theta[i];
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    ensure_finite(grad, "finite_diff_grad");
    return grad;
}

GradCheckReport grad_check_report(const Vector& analytic, const Vector& numeric) {
    if (analytic.size() != numeric.size()) {
        throw DimensionError(shape_msg("grad_check_report", analytic.size(), numeric.size()));
    }
    GradCheckReport report;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i];
        const double n = numeric[i];
        const double denom = std::max({1.0, std::fabs(a), std::fabs(n)});
        const double rel = std::fabs(a - n) / denom;
        if (rel >= report.max_relative_error) {
            report.max_relative_error = rel;
            report.worst_parameter_index = i;
            report.analytic_value = a;
            report.numeric_value = n;
        }
    }
    return report;
}

} // namespace red
