#pragma once

#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace otat {

using RealVector = std::vector<double>;

// Dense row-major matrix of doubles. One canonical layout everywhere keeps
// the attention/adapter code free of stride and transpose ambiguity, and all
// kernels walk memory in a fixed order so results are bit-deterministic.
struct RealMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    RealMatrix() = default;
    RealMatrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    static RealMatrix identity(std::size_t n);
    static RealMatrix from_rows(std::initializer_list<std::initializer_list<double>> entries);

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool same_shape(const RealMatrix& o) const { return rows == o.rows && cols == o.cols; }
    std::size_t size() const { return data.size(); }
};

RealMatrix matmul(const RealMatrix& a, const RealMatrix& b);
RealMatrix transpose(const RealMatrix& m);

// softmax of each row of m / temperature
RealMatrix softmax_rows(const RealMatrix& m, double temperature);
void softmax_row_inplace(std::span<double> row);
// pull d_probs back through a row softmax (temperature handled by the caller)
RealMatrix softmax_rows_backward(const RealMatrix& probs, const RealMatrix& d_probs);

// per-row standardization followed by the affine map gain * x + bias
RealMatrix layer_norm(const RealMatrix& m, const RealVector& gain, const RealVector& bias,
                      double eps = 1e-5);

double cosine_similarity(std::span<const double> u, std::span<const double> v);
RealMatrix l2_normalize_rows(const RealMatrix& m);

double dot(std::span<const double> u, std::span<const double> v);
double norm2(std::span<const double> u);
double frobenius_distance(const RealMatrix& a, const RealMatrix& b);
double max_abs_diff(const RealMatrix& a, const RealMatrix& b);
bool all_finite(const RealMatrix& m);

void add_inplace(RealMatrix& a, const RealMatrix& b);
void axpy_inplace(RealMatrix& a, double s, const RealMatrix& b);  // a += s * b
RealMatrix scaled(const RealMatrix& m, double s);
RealVector mean_rows(const RealMatrix& m);

// Golden matrix files: first line "rows cols", then one line per row of
// whitespace-separated values at 17 significant digits.
std::string format_matrix(const RealMatrix& m);
RealMatrix parse_matrix(std::istream& in, const std::string& origin);
void write_matrix(const std::string& path, const RealMatrix& m);
RealMatrix read_matrix(const std::string& path);

std::string format_real(double v);  // 17 significant digits, locale-free

}  // namespace otat
