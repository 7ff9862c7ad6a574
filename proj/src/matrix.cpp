#include "otat/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "otat/error.hpp"

namespace otat {

RealMatrix RealMatrix::identity(std::size_t n) {
    RealMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

RealMatrix RealMatrix::from_rows(std::initializer_list<std::initializer_list<double>> entries) {
    const std::size_t r = entries.size();
    const std::size_t c = r == 0 ? 0 : entries.begin()->size();
    RealMatrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : entries) {
        if (row.size() != c) throw ShapeError("from_rows: ragged initializer");
        std::copy(row.begin(), row.end(), m.row(i).begin());
        ++i;
    }
    return m;
}

RealMatrix matmul(const RealMatrix& a, const RealMatrix& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols) + " and " +
                         std::to_string(b.rows) + " disagree");
    RealMatrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + k * b.cols;
            double* orow = out.data.data() + i * out.cols;
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

RealMatrix transpose(const RealMatrix& m) {
    RealMatrix out(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
    return out;
}

void softmax_row_inplace(std::span<double> row) {
    double mx = row[0];
    for (const double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : row) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : row) v /= sum;
}

RealMatrix softmax_rows(const RealMatrix& m, double temperature) {
    if (temperature <= 0.0)
        throw DomainError("softmax_rows: temperature must be positive, got " +
                          std::to_string(temperature));
    if (m.rows == 0 || m.cols == 0) throw ShapeError("softmax_rows: empty matrix");
    RealMatrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = m(i, j) / temperature;
        softmax_row_inplace(out.row(i));
    }
    return out;
}

RealMatrix softmax_rows_backward(const RealMatrix& probs, const RealMatrix& d_probs) {
    if (!probs.same_shape(d_probs)) throw ShapeError("softmax_rows_backward: shape mismatch");
    RealMatrix out(probs.rows, probs.cols);
    for (std::size_t i = 0; i < probs.rows; ++i) {
        const double inner = dot(d_probs.row(i), probs.row(i));
        for (std::size_t j = 0; j < probs.cols; ++j)
            out(i, j) = probs(i, j) * (d_probs(i, j) - inner);
    }
    return out;
}

RealMatrix layer_norm(const RealMatrix& m, const RealVector& gain, const RealVector& bias,
                      double eps) {
    if (gain.size() != m.cols || bias.size() != m.cols)
        throw ShapeError("layer_norm: affine parameters do not match column count");
    RealMatrix out(m.rows, m.cols);
    const double n = static_cast<double>(m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double mean = 0.0;
        for (const double v : m.row(i)) mean += v;
        mean /= n;
        double var = 0.0;
        for (const double v : m.row(i)) var += (v - mean) * (v - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < m.cols; ++j)
            out(i, j) = gain[j] * ((m(i, j) - mean) * inv) + bias[j];
    }
    return out;
}

double dot(std::span<const double> u, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

double norm2(std::span<const double> u) { return std::sqrt(dot(u, u)); }

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw ShapeError("cosine_similarity: length mismatch");
    const double nu = norm2(u);
    const double nv = norm2(v);
    if (nu == 0.0 || nv == 0.0)
        throw DegenerateInputError("cosine_similarity: zero-norm vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

RealMatrix l2_normalize_rows(const RealMatrix& m) {
    RealMatrix out = m;
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double n = norm2(m.row(i));
        if (n == 0.0)
            throw DegenerateInputError("l2_normalize_rows: zero row at index " +
                                       std::to_string(i));
        for (double& v : out.row(i)) v /= n;
    }
    return out;
}

double frobenius_distance(const RealMatrix& a, const RealMatrix& b) {
    if (!a.same_shape(b)) throw ShapeError("frobenius_distance: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double max_abs_diff(const RealMatrix& a, const RealMatrix& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        s = std::max(s, std::abs(a.data[i] - b.data[i]));
    return s;
}

bool all_finite(const RealMatrix& m) {
    for (const double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

void add_inplace(RealMatrix& a, const RealMatrix& b) {
    if (!a.same_shape(b)) throw ShapeError("add_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void axpy_inplace(RealMatrix& a, double s, const RealMatrix& b) {
    if (!a.same_shape(b)) throw ShapeError("axpy_inplace: shape mismatch");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += s * b.data[i];
}

RealMatrix scaled(const RealMatrix& m, double s) {
    RealMatrix out = m;
    for (double& v : out.data) v *= s;
    return out;
}

RealVector mean_rows(const RealMatrix& m) {
    if (m.rows == 0) throw ShapeError("mean_rows: empty matrix");
    RealVector out(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out[j] += m(i, j);
    for (double& v : out) v /= static_cast<double>(m.rows);
    return out;
}

std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string format_matrix(const RealMatrix& m) {
    std::string out = std::to_string(m.rows) + " " + std::to_string(m.cols) + "\n";
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (j) out += ' ';
            out += format_real(m(i, j));
        }
        out += '\n';
    }
    return out;
}

RealMatrix parse_matrix(std::istream& in, const std::string& origin) {
    std::size_t rows = 0;
    std::size_t cols = 0;
    if (!(in >> rows >> cols)) throw IoError(origin + ": missing 'rows cols' header");
    RealMatrix m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i)
        if (!(in >> m.data[i]))
            throw IoError(origin + ": expected " + std::to_string(rows * cols) +
                          " values, failed at " + std::to_string(i));
    return m;
}

void write_matrix(const std::string& path, const RealMatrix& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << format_matrix(m);
    if (!out) throw IoError("write failed: " + path);
}

RealMatrix read_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    return parse_matrix(in, path);
}

}  // namespace otat
