#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "otat/blocks.hpp"
#include "otat/error.hpp"
#include "otat/losses.hpp"
#include "otat/matrix.hpp"
#include "otat/rng.hpp"

using namespace otat;

namespace {

RealMatrix random_unit_rows(Rng& rng, std::size_t r, std::size_t c) {
    RealMatrix m(r, c);
    for (double& v : m.data) v = rng.normal();
    return l2_normalize_rows(m);
}

ParamView view_of(const char* name, RealMatrix& m) { return {name, m.data.data(), m.size()}; }

}  // namespace

TEST_CASE("loss_cos single class is exactly zero") {
    RealMatrix img = RealMatrix::from_rows({{0.6, 0.8}});
    RealMatrix txt = RealMatrix::from_rows({{1.0, 0.0}});
    const std::vector<std::size_t> labels{0};
    const CosLossResult r = loss_cos(img, txt, labels, 0.07);
    CHECK(r.value == 0.0);
    CHECK(max_abs_diff(r.d_image, RealMatrix(1, 2)) == 0.0);
    CHECK(max_abs_diff(r.d_text, RealMatrix(1, 2)) == 0.0);
}

TEST_CASE("loss_cos two-class hand value") {
    RealMatrix img = RealMatrix::from_rows({{1.0, 0.0}});
    RealMatrix txt = RealMatrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    const std::vector<std::size_t> labels{0};
    const CosLossResult r = loss_cos(img, txt, labels, 1.0);
    // logits (1, 0): loss = log(1 + e^{-1})
    CHECK(r.value == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
    const double p1 = 1.0 / (1.0 + std::exp(1.0));
    CHECK(r.d_image(0, 0) == doctest::Approx((1.0 - p1) - 1.0).epsilon(1e-12));
    CHECK(r.d_image(0, 1) == doctest::Approx(p1).epsilon(1e-12));
}

TEST_CASE("loss_cos vanishes when the right class dominates at small tau") {
    RealMatrix img = RealMatrix::from_rows({{1.0, 0.0}});
    RealMatrix txt = RealMatrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    const std::vector<std::size_t> labels{0};
    CHECK(loss_cos(img, txt, labels, 1e-3).value < 1e-12);
}

TEST_CASE("loss_cos validation") {
    RealMatrix img = RealMatrix::from_rows({{1.0, 0.0}});
    RealMatrix txt = RealMatrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    const std::vector<std::size_t> bad{5};
    CHECK_THROWS_AS(loss_cos(img, txt, bad, 1.0), IndexError);
    const std::vector<std::size_t> labels{0};
    CHECK_THROWS_AS(loss_cos(img, txt, labels, 0.0), DomainError);
    CHECK_THROWS_AS(loss_cos(img, RealMatrix(2, 3), labels, 1.0), ShapeError);
    CHECK_THROWS_AS(loss_cos(RealMatrix(0, 2), txt, {}, 1.0), ShapeError);
}

TEST_CASE("loss_cos gradients match finite differences") {
    Rng rng(61);
    RealMatrix img = random_unit_rows(rng, 4, 6);
    RealMatrix txt = random_unit_rows(rng, 3, 6);
    const std::vector<std::size_t> labels{0, 2, 1, 2};

    auto loss = [&]() { return loss_cos(img, txt, labels, 0.3).value; };
    CosLossResult r = loss_cos(img, txt, labels, 0.3);
    std::vector<ParamView> views{view_of("img", img), view_of("txt", txt)};
    std::vector<ParamView> gviews{view_of("img", r.d_image), view_of("txt", r.d_text)};
    CHECK(grad_check(views, loss, pack(gviews), 1e-5) < 1e-6);
}

TEST_CASE("loss_ota uniform distances give log C") {
    RealMatrix w(3, 4, 0.7);
    const std::vector<std::size_t> labels{0, 3, 2};
    const OtaLossResult r = loss_ota(w, labels, 0.07);
    CHECK(r.value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("loss_ota hand value and gradient sign") {
    RealMatrix w = RealMatrix::from_rows({{0.0, 2.0}});
    const std::vector<std::size_t> labels{0};
    const OtaLossResult r = loss_ota(w, labels, 1.0);
    CHECK(r.value == doctest::Approx(std::log(1.0 + std::exp(-2.0))).epsilon(1e-12));
    // pushing the true-class distance down must lower the loss
    CHECK(r.d_distances(0, 0) > 0.0);
    CHECK(r.d_distances(0, 1) < 0.0);
    const double p0 = 1.0 / (1.0 + std::exp(-2.0));
    CHECK(r.d_distances(0, 0) == doctest::Approx(1.0 - p0).epsilon(1e-12));
    CHECK(r.d_distances(0, 1) == doctest::Approx(-(1.0 - p0)).epsilon(1e-12));
}

TEST_CASE("loss_ota gradient matches finite differences") {
    Rng rng(62);
    RealMatrix w(5, 3);
    for (double& v : w.data) v = rng.uniform(0.0, 2.0);
    const std::vector<std::size_t> labels{0, 1, 2, 1, 0};
    auto loss = [&]() { return loss_ota(w, labels, 0.21).value; };
    OtaLossResult r = loss_ota(w, labels, 0.21);
    std::vector<ParamView> views{view_of("w", w)};
    std::vector<ParamView> gviews{view_of("w", r.d_distances)};
    CHECK(grad_check(views, loss, pack(gviews), 1e-5) < 1e-6);

    CHECK_THROWS_AS(loss_ota(w, labels, -0.5), DomainError);
    const std::vector<std::size_t> bad{0, 1, 9, 1, 0};
    CHECK_THROWS_AS(loss_ota(w, bad, 0.21), IndexError);
}

TEST_CASE("update_prototypes blends with the documented schedule") {
    PrototypeBank bank = PrototypeBank::zeros(2, 2);
    RealMatrix embs = RealMatrix::from_rows({{2.0, 0.0}, {0.0, 3.0}});
    const std::vector<std::size_t> labels{0, 0};

    // first refresh from zeros at mu = 0.5: prototype = 0.5 * mean of unit rows
    update_prototypes(bank, embs, labels);
    CHECK(bank.prototypes(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(bank.prototypes(0, 1) == doctest::Approx(0.25).epsilon(1e-15));
    // class 1 was absent and keeps its zero prototype
    CHECK(bank.prototypes(1, 0) == 0.0);
    CHECK(bank.prototypes(1, 1) == 0.0);
    CHECK(bank.mu == 0.5 + 0.02 * 1.0);
    CHECK(bank.updates == 1);

    // mu = 1 freezes the bank
    PrototypeBank frozen = PrototypeBank::zeros(1, 2);
    frozen.prototypes(0, 0) = 0.7;
    frozen.mu = 1.0;
    RealMatrix e2 = RealMatrix::from_rows({{0.0, 1.0}});
    const std::vector<std::size_t> l2{0};
    update_prototypes(frozen, e2, l2);
    CHECK(frozen.prototypes(0, 0) == 0.7);
    CHECK(frozen.prototypes(0, 1) == 0.0);

    RealMatrix zero_row = RealMatrix::from_rows({{0.0, 0.0}});
    CHECK_THROWS_AS(update_prototypes(bank, zero_row, l2), DegenerateInputError);
    CHECK_THROWS_AS(update_prototypes(bank, RealMatrix(1, 5), l2), ShapeError);
}

TEST_CASE("mu follows min(0.5 + 0.02 n, 1) exactly") {
    PrototypeBank bank = PrototypeBank::zeros(1, 2);
    RealMatrix embs = RealMatrix::from_rows({{1.0, 0.0}});
    const std::vector<std::size_t> labels{0};
    for (std::size_t n = 1; n <= 40; ++n) {
        update_prototypes(bank, embs, labels);
        CHECK(bank.mu == std::min(0.5 + 0.02 * static_cast<double>(n), 1.0));
    }
    CHECK(bank.mu == 1.0);
}

TEST_CASE("loss_eaw refuses an unused or partially filled bank") {
    LossWeights w;
    PrototypeBank bank = PrototypeBank::zeros(2, 3);
    RealMatrix txt(2, 3, 0.5);
    CHECK_THROWS_AS(loss_eaw(bank, txt, w), StateError);

    RealMatrix embs = RealMatrix::from_rows({{1.0, 0.0, 0.0}});
    const std::vector<std::size_t> labels{0};
    update_prototypes(bank, embs, labels);  // class 1 prototype still zero
    CHECK_THROWS_AS(loss_eaw(bank, txt, w), DegenerateInputError);
}

TEST_CASE("loss_eaw closed forms for uniform and one-hot assignments") {
    const std::size_t c = 4;
    LossWeights w;
    PrototypeBank bank = PrototypeBank::zeros(c, c);
    RealMatrix embs = RealMatrix::identity(c);
    std::vector<std::size_t> labels(c);
    for (std::size_t i = 0; i < c; ++i) labels[i] = i;
    update_prototypes(bank, embs, labels);

    // zero text rows make every similarity zero: assignments are uniform
    RealMatrix txt(c, c, 0.0);
    const EawLossResult uni = loss_eaw(bank, txt, w);
    const double cc = static_cast<double>(c);
    CHECK(uni.difficulty == doctest::Approx(-(1.0 - 1.0 / cc)).epsilon(1e-12));
    CHECK(uni.entropy == doctest::Approx(std::log(cc)).epsilon(1e-6));
    CHECK(uni.value == doctest::Approx(uni.difficulty - w.zeta * uni.entropy).epsilon(1e-12));

    // near-one-hot assignments: difficulty and entropy both collapse to zero
    LossWeights sharp = w;
    sharp.tau = 1e-5;
    const EawLossResult hot = loss_eaw(bank, RealMatrix::identity(c), sharp);
    CHECK(std::abs(hot.difficulty) < 1e-6);
    CHECK(std::abs(hot.entropy) < 1e-6);
}

TEST_CASE("loss_eaw difficulty equals minus the mean difficulty coefficient") {
    Rng rng(63);
    const std::size_t c = 5, t = 7, d = 6;
    LossWeights w;
    PrototypeBank bank = PrototypeBank::zeros(c, d);
    RealMatrix embs = random_unit_rows(rng, c, d);
    std::vector<std::size_t> labels(c);
    for (std::size_t i = 0; i < c; ++i) labels[i] = i;
    update_prototypes(bank, embs, labels);
    RealMatrix txt = random_unit_rows(rng, t, d);

    const EawLossResult r = loss_eaw(bank, txt, w);

    // recompute the assignment matrix independently
    RealMatrix protos = l2_normalize_rows(bank.prototypes);
    RealMatrix sims(c, t);
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < t; ++j) sims(i, j) = dot(protos.row(i), txt.row(j));
    const RealMatrix probs = softmax_rows(sims, w.tau);
    double acc = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        double mx = 0.0;
        for (std::size_t j = 0; j < t; ++j) mx = std::max(mx, probs(i, j));
        acc += 1.0 - mx;
    }
    CHECK(r.difficulty == doctest::Approx(-acc / static_cast<double>(c)).epsilon(1e-12));
}

TEST_CASE("loss_eaw entropy shrinks as the temperature sharpens") {
    Rng rng(64);
    PrototypeBank bank = PrototypeBank::zeros(3, 5);
    RealMatrix embs = random_unit_rows(rng, 3, 5);
    const std::vector<std::size_t> labels{0, 1, 2};
    update_prototypes(bank, embs, labels);
    RealMatrix txt = random_unit_rows(rng, 4, 5);

    LossWeights soft, hard;
    soft.tau = 0.5;
    hard.tau = 0.05;
    CHECK(loss_eaw(bank, txt, hard).entropy < loss_eaw(bank, txt, soft).entropy);
}

TEST_CASE("loss_eaw text gradient matches finite differences") {
    Rng rng(65);
    PrototypeBank bank = PrototypeBank::zeros(3, 4);
    RealMatrix embs = random_unit_rows(rng, 6, 4);
    const std::vector<std::size_t> labels{0, 1, 2, 0, 1, 2};
    update_prototypes(bank, embs, labels);
    RealMatrix txt = random_unit_rows(rng, 3, 4);

    LossWeights w;
    w.tau = 0.25;  // keep the softmax well-conditioned for the difference quotient
    auto loss = [&]() { return loss_eaw(bank, txt, w).value; };
    EawLossResult r = loss_eaw(bank, txt, w);
    std::vector<ParamView> views{view_of("txt", txt)};
    std::vector<ParamView> gviews{view_of("txt", r.d_text)};
    CHECK(grad_check(views, loss, pack(gviews), 1e-5) < 1e-4);
}

TEST_CASE("loss_total combines the weighted components and rejects non-finite input") {
    LossWeights w;
    w.xi = 2.0;
    w.nu = 0.5;
    CHECK(loss_total(1.0, 3.0, 4.0, w) == 1.0 + 2.0 * 3.0 + 0.5 * 4.0);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(loss_total(nan, 0.0, 0.0, w), NumericalError);
    CHECK_THROWS_AS(loss_total(0.0, inf, 0.0, w), NumericalError);
    CHECK_THROWS_AS(loss_total(0.0, 0.0, -inf, w), NumericalError);
}
