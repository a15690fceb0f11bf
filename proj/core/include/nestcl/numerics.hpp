#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace nestcl {

using Vector = std::vector<double>;

// Dense row-major matrix of 64-bit floats. All training math is f64; file
// formats quantize to f32 at the serialization boundary only.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
};

Matrix zeros_like(const Matrix& m);

// Euclidean norm.
double norm2(std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);

// Direction-preserving unit vector; throws DegenerateVector when the norm is
// below eps.
Vector l2_normalize(std::span<const double> v, double eps = 1e-9);

// Cosine similarity clamped to [-1, 1] against round-off. Throws ShapeError
// on dimension mismatch, DegenerateVector on a zero input.
double cosine_sim(std::span<const double> a, std::span<const double> b, double eps = 1e-9);

// Entry (i,j) = cosine_sim(row_i(A), row_j(B)). Rows with norm < eps are
// reported with their index.
Matrix pairwise_cosine(const Matrix& a, const Matrix& b, double eps = 1e-9);

// Row-wise softmax with max-subtraction.
Matrix softmax_rows(const Matrix& m);
void softmax_row_inplace(std::span<double> row);

// log(sum_i exp(v_i)) with max-subtraction.
double log_sum_exp_row(std::span<const double> v);

bool all_finite(std::span<const double> v);

} // namespace nestcl
