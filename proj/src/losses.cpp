#include "otat/losses.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "otat/error.hpp"

namespace otat {

namespace {

void check_labels(std::span<const std::size_t> labels, std::size_t n_items,
                  std::size_t n_classes) {
    if (labels.size() != n_items) throw ShapeError("labels do not match the batch size");
    for (const std::size_t y : labels)
        if (y >= n_classes)
            throw IndexError("label " + std::to_string(y) + " out of range for " +
                             std::to_string(n_classes) + " classes");
}

}  // namespace

PrototypeBank PrototypeBank::zeros(std::size_t classes, std::size_t dim) {
    PrototypeBank bank;
    bank.prototypes = RealMatrix(classes, dim);
    return bank;
}

CosLossResult loss_cos(const RealMatrix& image_embs, const RealMatrix& text_embs,
                       std::span<const std::size_t> labels, double tau) {
    if (tau <= 0.0) throw DomainError("loss_cos: tau must be positive");
    if (image_embs.cols != text_embs.cols) throw ShapeError("loss_cos: dimension mismatch");
    if (image_embs.rows == 0) throw ShapeError("loss_cos: empty batch");
    check_labels(labels, image_embs.rows, text_embs.rows);

    const std::size_t n = image_embs.rows;
    const std::size_t c = text_embs.rows;
    RealMatrix logits(n, c);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j)
            logits(i, j) = dot(image_embs.row(i), text_embs.row(j));
    const RealMatrix probs = softmax_rows(logits, tau);

    CosLossResult out;
    for (std::size_t i = 0; i < n; ++i) out.value -= std::log(probs(i, labels[i]));
    out.value /= static_cast<double>(n);

    RealMatrix d_logits = probs;
    for (std::size_t i = 0; i < n; ++i) d_logits(i, labels[i]) -= 1.0;
    const double scale = 1.0 / (static_cast<double>(n) * tau);
    for (double& v : d_logits.data) v *= scale;

    out.d_image = matmul(d_logits, text_embs);
    out.d_text = matmul(transpose(d_logits), image_embs);
    return out;
}

OtaLossResult loss_ota(const RealMatrix& distances, std::span<const std::size_t> labels,
                       double tau) {
    if (tau <= 0.0) throw DomainError("loss_ota: tau must be positive");
    if (distances.rows == 0 || distances.cols == 0) throw ShapeError("loss_ota: empty distances");
    check_labels(labels, distances.rows, distances.cols);

    const std::size_t n = distances.rows;
    RealMatrix logits(n, distances.cols);
    for (std::size_t i = 0; i < logits.data.size(); ++i)
        logits.data[i] = 1.0 - distances.data[i];
    const RealMatrix probs = softmax_rows(logits, tau);

    OtaLossResult out;
    for (std::size_t i = 0; i < n; ++i) out.value -= std::log(probs(i, labels[i]));
    out.value /= static_cast<double>(n);

    out.d_distances = probs;
    for (std::size_t i = 0; i < n; ++i) out.d_distances(i, labels[i]) -= 1.0;
    const double scale = -1.0 / (static_cast<double>(n) * tau);
    for (double& v : out.d_distances.data) v *= scale;
    return out;
}

void update_prototypes(PrototypeBank& bank, const RealMatrix& embs,
                       std::span<const std::size_t> labels) {
    const std::size_t classes = bank.prototypes.rows;
    const std::size_t dim = bank.prototypes.cols;
    if (embs.cols != dim) throw ShapeError("update_prototypes: dimension mismatch");
    check_labels(labels, embs.rows, classes);

    RealMatrix fresh(classes, dim);
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i = 0; i < embs.rows; ++i) {
        const double n = norm2(embs.row(i));
        if (n == 0.0) throw DegenerateInputError("update_prototypes: zero embedding row");
        for (std::size_t j = 0; j < dim; ++j) fresh(labels[i], j) += embs(i, j) / n;
        ++counts[labels[i]];
    }
    for (std::size_t cl = 0; cl < classes; ++cl) {
        if (counts[cl] == 0) continue;
        const double inv = 1.0 / static_cast<double>(counts[cl]);
        for (std::size_t j = 0; j < dim; ++j)
            bank.prototypes(cl, j) =
                bank.mu * bank.prototypes(cl, j) + (1.0 - bank.mu) * fresh(cl, j) * inv;
    }
    // recompute from the counter: accumulating 0.02 drifts off the documented
    // min(0.5 + 0.02 n, 1) schedule by an ulp after a few steps
    ++bank.updates;
    bank.mu = std::min(0.5 + bank.mu_step * static_cast<double>(bank.updates), 1.0);
}

EawLossResult loss_eaw(const PrototypeBank& bank, const RealMatrix& text_embs,
                       const LossWeights& w) {
    if (w.tau <= 0.0) throw DomainError("loss_eaw: tau must be positive");
    if (bank.updates == 0) throw StateError("loss_eaw: prototype bank was never updated");
    if (text_embs.cols != bank.prototypes.cols) throw ShapeError("loss_eaw: dimension mismatch");
    const std::size_t classes = bank.prototypes.rows;
    const std::size_t n_text = text_embs.rows;

    RealMatrix protos(classes, bank.prototypes.cols);
    for (std::size_t c = 0; c < classes; ++c) {
        const double n = norm2(bank.prototypes.row(c));
        if (n == 0.0)
            throw DegenerateInputError("loss_eaw: prototype " + std::to_string(c) +
                                       " is still zero");
        for (std::size_t j = 0; j < protos.cols; ++j) protos(c, j) = bank.prototypes(c, j) / n;
    }

    RealMatrix sims(classes, n_text);
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t t = 0; t < n_text; ++t) sims(c, t) = dot(protos.row(c), text_embs.row(t));
    const RealMatrix probs = softmax_rows(sims, w.tau);

    EawLossResult out;
    const double inv_c = 1.0 / static_cast<double>(classes);
    std::vector<std::size_t> arg(classes, 0);
    for (std::size_t c = 0; c < classes; ++c) {
        double mx = probs(c, 0);
        for (std::size_t t = 1; t < n_text; ++t)
            if (probs(c, t) > mx) {
                mx = probs(c, t);
                arg[c] = t;
            }
        const double k = 1.0 - mx;
        for (std::size_t t = 0; t < n_text; ++t) {
            out.difficulty -= inv_c * k * probs(c, t);
            out.entropy -= inv_c * probs(c, t) * std::log(probs(c, t) + w.eps2);
        }
    }
    out.value = out.difficulty - w.zeta * out.entropy;

    RealMatrix d_probs(classes, n_text);
    for (std::size_t c = 0; c < classes; ++c) {
        const double k = 1.0 - probs(c, arg[c]);
        for (std::size_t t = 0; t < n_text; ++t) {
            // difficulty term; the max inside k contributes through the argmax cell
            double d = -inv_c * (k - (t == arg[c] ? 1.0 : 0.0));
            // minus zeta times the entropy
            d += w.zeta * inv_c *
                 (std::log(probs(c, t) + w.eps2) + probs(c, t) / (probs(c, t) + w.eps2));
            d_probs(c, t) = d;
        }
    }
    RealMatrix d_sims = softmax_rows_backward(probs, d_probs);
    for (double& v : d_sims.data) v /= w.tau;
    out.d_text = matmul(transpose(d_sims), protos);
    return out;
}

double loss_total(double l_cos, double l_ota, double l_eaw, const LossWeights& w) {
    if (!std::isfinite(l_cos) || !std::isfinite(l_ota) || !std::isfinite(l_eaw))
        throw NumericalError("loss_total: non-finite component");
    return l_cos + w.xi * l_ota + w.nu * l_eaw;
}

}  // namespace otat
