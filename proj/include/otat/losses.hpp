#pragma once

#include <span>

#include "otat/matrix.hpp"

namespace otat {

// Per-class visual prototypes maintained as an exponential moving average.
// mu starts at 0.5 and grows by mu_step per update until it saturates at 1.
struct PrototypeBank {
    RealMatrix prototypes;  // C x D
    double mu = 0.5;
    double mu_step = 0.02;
    std::size_t updates = 0;

    static PrototypeBank zeros(std::size_t classes, std::size_t dim);
};

struct LossWeights {
    double xi = 1.0;     // transport loss weight
    double nu = 0.08;    // entropy-aware weighting loss weight
    double zeta = 0.1;   // entropy bonus inside the EAW loss
    double tau = 0.07;   // shared softmax temperature
    double eps2 = 1e-8;  // guard inside the entropy log
};

// Symmetric-free contrastive term: cross entropy of image-vs-text cosine
// logits at temperature tau. Expects unit rows on both sides; gradients are
// with respect to those unit embeddings.
struct CosLossResult {
    double value = 0.0;
    RealMatrix d_image;
    RealMatrix d_text;
};
CosLossResult loss_cos(const RealMatrix& image_embs, const RealMatrix& text_embs,
                       std::span<const std::size_t> labels, double tau);

// Cross entropy over softmax((1 - W) / tau) rows, W the per-class transport
// distances. The plan is treated as a constant: gradients stop at W.
struct OtaLossResult {
    double value = 0.0;
    RealMatrix d_distances;
};
OtaLossResult loss_ota(const RealMatrix& distances, std::span<const std::size_t> labels,
                       double tau);

// EMA prototype refresh from a batch of normalized visual embeddings. Classes
// absent from the batch keep their prototype; mu advances once per call.
void update_prototypes(PrototypeBank& bank, const RealMatrix& embs,
                       std::span<const std::size_t> labels);

// Difficulty-weighted assignment term minus zeta times the assignment
// entropy. Prototypes are a frozen snapshot; gradients flow to the text side.
struct EawLossResult {
    double value = 0.0;
    double difficulty = 0.0;
    double entropy = 0.0;
    RealMatrix d_text;
};
EawLossResult loss_eaw(const PrototypeBank& bank, const RealMatrix& text_embs,
                       const LossWeights& w);

double loss_total(double l_cos, double l_ota, double l_eaw, const LossWeights& w);

}  // namespace otat
