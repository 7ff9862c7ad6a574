#pragma once

#include <cstddef>
#include <string>

#include "otat/embedding.hpp"
#include "otat/matrix.hpp"

namespace otat {

enum class CostKind { CosineDistance, Euclidean, Constant };

CostKind cost_kind_from_string(const std::string& s);
std::string to_string(CostKind kind);

// Ground cost between one image's tokens (rows) and one text's tokens
// (columns).
struct CostMatrix {
    RealMatrix values;
    CostKind kind = CostKind::CosineDistance;
};

// Row and column mass of the coupling. Both sides must sum to the same total
// (within 1e-12) and every entry must be positive.
struct Marginals {
    RealVector a;
    RealVector b;

    static Marginals uniform(std::size_t n_rows, std::size_t n_cols);
};

struct SinkhornConfig {
    double lambda = 10.0;
    std::size_t max_iters = 100;
    double tol = 1e-6;
    bool stabilized = true;
};

struct TransportPlan {
    RealMatrix plan;
    std::size_t iterations = 0;
    bool converged = false;
    double final_residual = 0.0;
};

CostMatrix build_cost(const EmbeddingSet& image, const EmbeddingSet& text, CostKind kind);

// Gradient of sum_ij d_cost(i,j) * C(i,j) with respect to the raw token
// matrices that produced the cost. Constant cost has zero gradient.
void cost_backward(const EmbeddingSet& image, const EmbeddingSet& text, CostKind kind,
                   const RealMatrix& d_cost, RealMatrix& d_image, RealMatrix& d_text);

TransportPlan sinkhorn(const CostMatrix& cost, const Marginals& marginals,
                       const SinkhornConfig& cfg);

struct ExactOtResult {
    RealMatrix plan;
    double value = 0.0;
};

// LP reference solver, independent of the scaling iteration. Dispatches to
// transportation-polytope vertex enumeration (both sides <= 3) or a dense
// network simplex; refuses instances above 64 cells.
ExactOtResult exact_ot(const CostMatrix& cost, const Marginals& marginals);

namespace detail {
ExactOtResult exact_ot_enumerate(const RealMatrix& cost, const Marginals& marginals);
ExactOtResult exact_ot_simplex(const RealMatrix& cost, const Marginals& marginals);
}  // namespace detail

double ot_distance(const TransportPlan& plan, const CostMatrix& cost);

// softmax over (1 - distance) / tau; distances enter as a row per image
RealVector ot_match_probs(const RealVector& distances, double tau);

// h_i = 1 - sum_j plan(i,j) * cost(i,j); sum_i (1 - h_i) equals ot_distance
RealVector heatmap_values(const TransportPlan& plan, const CostMatrix& cost);

}  // namespace otat
