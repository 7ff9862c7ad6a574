#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>

#include "otat/error.hpp"
#include "otat/matrix.hpp"
#include "otat/rng.hpp"

using namespace otat;

namespace {

RealMatrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
    RealMatrix m(r, c);
    for (double& v : m.data) v = rng.normal();
    return m;
}

// independent triple-loop reference for matmul
RealMatrix matmul_reference(const RealMatrix& a, const RealMatrix& b) {
    RealMatrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    return out;
}

std::string temp_path(const char* stem) {
    return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
    Rng rng(11);
    const RealMatrix m = random_matrix(rng, 3, 5);
    CHECK(max_abs_diff(matmul(RealMatrix::identity(3), m), m) == 0.0);

    const RealMatrix a = RealMatrix::from_rows({{1, 2}, {3, 4}});
    const RealMatrix b = RealMatrix::from_rows({{0}, {1}});
    const RealMatrix ab = matmul(a, b);
    CHECK(ab.rows == 2);
    CHECK(ab.cols == 1);
    CHECK(ab(0, 0) == 2.0);
    CHECK(ab(1, 0) == 4.0);
}

TEST_CASE("matmul agrees with the triple-loop reference") {
    Rng rng(12);
    const RealMatrix a = random_matrix(rng, 5, 4);
    const RealMatrix b = random_matrix(rng, 4, 3);
    CHECK(max_abs_diff(matmul(a, b), matmul_reference(a, b)) < 1e-12);
}

TEST_CASE("matmul is associative within tolerance") {
    Rng rng(13);
    const RealMatrix a = random_matrix(rng, 4, 6);
    const RealMatrix b = random_matrix(rng, 6, 5);
    const RealMatrix c = random_matrix(rng, 5, 3);
    const RealMatrix left = matmul(matmul(a, b), c);
    const RealMatrix right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.data.size(); ++i)
        CHECK(std::abs(left.data[i] - right.data[i]) <=
              1e-9 * std::max(1.0, std::abs(left.data[i])));
}

TEST_CASE("matmul rejects mismatched shapes") {
    CHECK_THROWS_AS(matmul(RealMatrix(2, 3), RealMatrix(2, 3)), ShapeError);
}

TEST_CASE("softmax_rows hand values") {
    const RealMatrix flat = softmax_rows(RealMatrix::from_rows({{0, 0, 0}}), 1.0);
    for (std::size_t j = 0; j < 3; ++j) CHECK(flat(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));

    const RealMatrix shifted = softmax_rows(RealMatrix::from_rows({{1000, 0}}), 1.0);
    CHECK(all_finite(shifted));
    CHECK(shifted(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(shifted(0, 1) == doctest::Approx(0.0).epsilon(1e-12));

    const RealMatrix two = softmax_rows(RealMatrix::from_rows({{1, 2}}), 1.0);
    const double e = std::exp(1.0);
    CHECK(two(0, 0) == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-14));
    CHECK(two(0, 1) == doctest::Approx(e / (1.0 + e)).epsilon(1e-14));
}

TEST_CASE("softmax_rows rows sum to one and ignore constant shifts") {
    Rng rng(14);
    RealMatrix m = random_matrix(rng, 6, 7);
    const RealMatrix p = softmax_rows(m, 0.37);
    for (std::size_t i = 0; i < p.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < p.cols; ++j) s += p(i, j);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    RealMatrix shiftedm = m;
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) shiftedm(i, j) += 5.25;
    CHECK(max_abs_diff(softmax_rows(shiftedm, 0.37), p) < 1e-12);
}

TEST_CASE("softmax_rows rejects nonpositive temperature") {
    CHECK_THROWS_AS(softmax_rows(RealMatrix(1, 2), 0.0), DomainError);
    CHECK_THROWS_AS(softmax_rows(RealMatrix(1, 2), -1.0), DomainError);
}

TEST_CASE("layer_norm standardizes rows") {
    const RealVector gain(4, 1.0), bias(4, 0.0);
    const RealMatrix c = layer_norm(RealMatrix(2, 4, 3.5), gain, bias);
    CHECK(max_abs_diff(c, RealMatrix(2, 4)) == 0.0);  // zero variance -> zeros

    const RealVector g2(2, 1.0), b2(2, 0.0);
    const RealMatrix pm = layer_norm(RealMatrix::from_rows({{-1, 1}}), g2, b2);
    CHECK(pm(0, 0) == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(pm(0, 1) == doctest::Approx(1.0).epsilon(1e-5));

    Rng rng(15);
    const RealMatrix m = random_matrix(rng, 5, 9);
    const RealVector g9(9, 1.0), b9(9, 0.0);
    const RealMatrix out = layer_norm(m, g9, b9);
    for (std::size_t i = 0; i < out.rows; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < out.cols; ++j) mean += out(i, j);
        mean /= static_cast<double>(out.cols);
        CHECK(std::abs(mean) < 1e-10);
        double var = 0.0;
        for (std::size_t j = 0; j < out.cols; ++j) var += out(i, j) * out(i, j);
        var /= static_cast<double>(out.cols);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps=1e-5 inside the sqrt
    }
    CHECK_THROWS_AS(layer_norm(m, RealVector(3, 1.0), b9), ShapeError);
}

TEST_CASE("cosine_similarity endpoints and clamping") {
    const RealVector u{1.0, 2.0, 2.0};
    CHECK(cosine_similarity(u, u) == 1.0);
    const RealVector neg{-1.0, -2.0, -2.0};
    CHECK(cosine_similarity(u, neg) == -1.0);
    const RealVector ex{1.0, 0.0}, ey{0.0, 1.0};
    CHECK(cosine_similarity(ex, ey) == 0.0);
    CHECK_THROWS_AS(cosine_similarity(RealVector{0.0, 0.0}, ex), DegenerateInputError);

    // near-parallel vectors must stay inside [-1, 1] despite rounding
    const RealVector a{1e8, 1.0}, b{1e8, 1.0 + 1e-9};
    const double s = cosine_similarity(a, b);
    CHECK(s <= 1.0);
    CHECK(s >= -1.0);
}

TEST_CASE("l2_normalize_rows hand case, idempotence, zero row") {
    const RealMatrix n = l2_normalize_rows(RealMatrix::from_rows({{3, 4}}));
    CHECK(n(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(n(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

    Rng rng(16);
    const RealMatrix m = random_matrix(rng, 4, 8);
    const RealMatrix once = l2_normalize_rows(m);
    for (std::size_t i = 0; i < once.rows; ++i)
        CHECK(std::abs(norm2(once.row(i)) - 1.0) < 1e-12);
    CHECK(max_abs_diff(l2_normalize_rows(once), once) < 1e-12);

    CHECK_THROWS_AS(l2_normalize_rows(RealMatrix(2, 3)), DegenerateInputError);
}

TEST_CASE("golden matrix files round-trip exactly") {
    Rng rng(17);
    RealMatrix m = random_matrix(rng, 4, 3);
    m(0, 0) = 1e-300;
    m(1, 2) = -7.0 / 3.0;
    m(2, 1) = 12345678901234567.0;
    const std::string path = temp_path("otat_golden_roundtrip.mtx");
    write_matrix(path, m);
    const RealMatrix back = read_matrix(path);
    REQUIRE(back.same_shape(m));
    CHECK(max_abs_diff(back, m) == 0.0);  // 17 significant digits round-trip doubles
    std::filesystem::remove(path);

    std::istringstream bad("2 oops\n1 2\n3 4\n");
    CHECK_THROWS_AS(parse_matrix(bad, "inline"), IoError);
    CHECK_THROWS_AS(read_matrix(temp_path("otat_does_not_exist.mtx")), IoError);
}

TEST_CASE("format_real survives a parse round-trip") {
    // smallest normal double included; std::stod rejects subnormals on glibc
    for (const double v : {0.1, -1.0 / 3.0, 6.02e23, 2.2250738585072014e-308, 0.0}) {
        CHECK(std::stod(format_real(v)) == v);
    }
}

TEST_CASE("rng streams are reproducible and substreams are order-independent") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());

    const Rng root(7);
    Rng direct = root.derive("weights");
    Rng other = root.derive("episode", 3);
    (void)other.next_u64();  // consuming one substream must not shift another
    Rng again = root.derive("weights");
    for (int i = 0; i < 32; ++i) CHECK(direct.next_u64() == again.next_u64());

    Rng byidx0 = root.derive("item", 0);
    Rng byidx1 = root.derive("item", 1);
    CHECK(byidx0.next_u64() != byidx1.next_u64());
}

TEST_CASE("rng uniform stays in the half-open unit interval") {
    Rng rng(99);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}
