#include "nestcl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nestcl/errors.hpp"
#include "nestcl/parallel.hpp"

namespace nestcl {

namespace {
std::size_t g_max_threads = 1;
} // namespace

void set_max_threads(std::size_t n) { g_max_threads = n < 1 ? 1 : n; }
std::size_t max_threads() { return g_max_threads; }

Matrix zeros_like(const Matrix& m) {
    return Matrix(m.rows, m.cols, 0.0);
}

double norm2(std::span<const double> v) {
    double acc = 0.0;
    for (const double x : v) acc += x * x;
    return std::sqrt(acc);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

Vector l2_normalize(std::span<const double> v, double eps) {
    const double norm = norm2(v);
    if (!(norm >= eps)) {
        throw DegenerateVector("norm " + std::to_string(norm) + " below eps");
    }
    Vector out(v.begin(), v.end());
    for (double& x : out) x /= norm;
    return out;
}

double cosine_sim(std::span<const double> a, std::span<const double> b, double eps) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine_sim dims " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    const double na = norm2(a);
    const double nb = norm2(b);
    if (!(na >= eps) || !(nb >= eps)) {
        throw DegenerateVector("cosine_sim on near-zero vector");
    }
    const double c = dot(a, b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

Matrix pairwise_cosine(const Matrix& a, const Matrix& b, double eps) {
    if (a.cols != b.cols) {
        throw ShapeError("pairwise_cosine column mismatch: " + std::to_string(a.cols) +
                         " vs " + std::to_string(b.cols));
    }
    std::vector<double> norms_a(a.rows), norms_b(b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        norms_a[i] = norm2(a.row(i));
        if (!(norms_a[i] >= eps)) {
            throw DegenerateVector("pairwise_cosine: zero row " + std::to_string(i) +
                                   " in left matrix");
        }
    }
    for (std::size_t j = 0; j < b.rows; ++j) {
        norms_b[j] = norm2(b.row(j));
        if (!(norms_b[j] >= eps)) {
            throw DegenerateVector("pairwise_cosine: zero row " + std::to_string(j) +
                                   " in right matrix");
        }
    }
    Matrix out(a.rows, b.rows);
    parallel_for(a.rows, [&](std::size_t i) {
        const auto ra = a.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double c = dot(ra, b.row(j)) / (norms_a[i] * norms_b[j]);
            out(i, j) = std::clamp(c, -1.0, 1.0);
        }
    });
    return out;
}

void softmax_row_inplace(std::span<double> row) {
    double mx = row[0];
    for (const double x : row) mx = std::max(mx, x);
    double sum = 0.0;
    for (double& x : row) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : row) x /= sum;
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out = m;
    for (std::size_t i = 0; i < out.rows; ++i) softmax_row_inplace(out.row(i));
    return out;
}

double log_sum_exp_row(std::span<const double> v) {
    double mx = v[0];
    for (const double x : v) mx = std::max(mx, x);
    double sum = 0.0;
    for (const double x : v) sum += std::exp(x - mx);
    return mx + std::log(sum);
}

bool all_finite(std::span<const double> v) {
    for (const double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

} // namespace nestcl
