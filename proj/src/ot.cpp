#include "otat/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "otat/error.hpp"

namespace otat {

namespace {

void validate_cost(const RealMatrix& c) {
    if (c.rows == 0 || c.cols == 0) throw ShapeError("ot: empty cost matrix");
    for (const double v : c.data) {
        if (!std::isfinite(v)) throw DomainError("ot: cost has non-finite entries");
        if (v < 0.0) throw DomainError("ot: cost has negative entries");
    }
}

void validate_marginals(const RealMatrix& c, const Marginals& m) {
    if (m.a.size() != c.rows || m.b.size() != c.cols)
        throw ShapeError("ot: marginal lengths do not match the cost matrix");
    double sa = 0.0;
    double sb = 0.0;
    for (const double v : m.a) {
        if (!(v > 0.0)) throw DomainError("ot: row marginal entries must be positive");
        sa += v;
    }
    for (const double v : m.b) {
        if (!(v > 0.0)) throw DomainError("ot: column marginal entries must be positive");
        sb += v;
    }
    if (std::abs(sa - sb) > 1e-12 * std::max({1.0, sa, sb}))
        throw DomainError("ot: marginal sums disagree (" + format_real(sa) + " vs " +
                          format_real(sb) + ")");
}

double log_sum_exp(const double* vals, std::size_t n, std::size_t stride) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, vals[i * stride]);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(vals[i * stride] - mx);
    return mx + std::log(s);
}

}  // namespace

CostKind cost_kind_from_string(const std::string& s) {
    if (s == "cosine") return CostKind::CosineDistance;
    if (s == "euclidean") return CostKind::Euclidean;
    if (s == "constant") return CostKind::Constant;
    throw ConfigError("unknown cost kind '" + s + "' (expected cosine|euclidean|constant)");
}

std::string to_string(CostKind kind) {
    switch (kind) {
        case CostKind::CosineDistance: return "cosine";
        case CostKind::Euclidean: return "euclidean";
        case CostKind::Constant: return "constant";
    }
    return "?";
}

Marginals Marginals::uniform(std::size_t n_rows, std::size_t n_cols) {
    if (n_rows == 0 || n_cols == 0) throw ShapeError("uniform marginals need positive sizes");
    Marginals m;
    m.a.assign(n_rows, 1.0 / static_cast<double>(n_rows));
    m.b.assign(n_cols, 1.0 / static_cast<double>(n_cols));
    return m;
}

CostMatrix build_cost(const EmbeddingSet& image, const EmbeddingSet& text, CostKind kind) {
    if (image.dim() != text.dim())
        throw ShapeError("build_cost: token dimensions disagree (" +
                         std::to_string(image.dim()) + " vs " + std::to_string(text.dim()) + ")");
    if (image.tokens() == 0 || text.tokens() == 0)
        throw ShapeError("build_cost: empty token set");
    CostMatrix cost;
    cost.kind = kind;
    cost.values = RealMatrix(image.tokens(), text.tokens());
    switch (kind) {
        case CostKind::CosineDistance: {
            const RealMatrix v = l2_normalize_rows(image.data);
            const RealMatrix t = l2_normalize_rows(text.data);
            for (std::size_t i = 0; i < v.rows; ++i)
                for (std::size_t j = 0; j < t.rows; ++j)
                    cost.values(i, j) = std::clamp(1.0 - dot(v.row(i), t.row(j)), 0.0, 2.0);
            break;
        }
        case CostKind::Euclidean: {
            for (std::size_t i = 0; i < image.tokens(); ++i)
                for (std::size_t j = 0; j < text.tokens(); ++j) {
                    double s = 0.0;
                    for (std::size_t d = 0; d < image.dim(); ++d) {
                        const double diff = image.data(i, d) - text.data(j, d);
                        s += diff * diff;
                    }
                    cost.values(i, j) = std::sqrt(s);
                }
            break;
        }
        case CostKind::Constant: {
            for (double& v : cost.values.data) v = 1.0;
            break;
        }
    }
    return cost;
}

void cost_backward(const EmbeddingSet& image, const EmbeddingSet& text, CostKind kind,
                   const RealMatrix& d_cost, RealMatrix& d_image, RealMatrix& d_text) {
    if (d_cost.rows != image.tokens() || d_cost.cols != text.tokens())
        throw ShapeError("cost_backward: gradient shape mismatch");
    if (!d_image.same_shape(image.data) || !d_text.same_shape(text.data))
        throw ShapeError("cost_backward: output shape mismatch");
    switch (kind) {
        case CostKind::Constant:
            return;
        case CostKind::CosineDistance: {
            const RealMatrix v = l2_normalize_rows(image.data);
            const RealMatrix t = l2_normalize_rows(text.data);
            RealMatrix dv(v.rows, v.cols);
            RealMatrix dt(t.rows, t.cols);
            for (std::size_t i = 0; i < v.rows; ++i)
                for (std::size_t j = 0; j < t.rows; ++j) {
                    const double g = -d_cost(i, j);
                    for (std::size_t d = 0; d < v.cols; ++d) {
                        dv(i, d) += g * t(j, d);
                        dt(j, d) += g * v(i, d);
                    }
                }
            // through the row normalization x_hat = x / |x|
            for (std::size_t i = 0; i < v.rows; ++i) {
                const double n = norm2(image.data.row(i));
                const double proj = dot(dv.row(i), v.row(i));
                for (std::size_t d = 0; d < v.cols; ++d)
                    d_image(i, d) += (dv(i, d) - proj * v(i, d)) / n;
            }
            for (std::size_t j = 0; j < t.rows; ++j) {
                const double n = norm2(text.data.row(j));
                const double proj = dot(dt.row(j), t.row(j));
                for (std::size_t d = 0; d < t.cols; ++d)
                    d_text(j, d) += (dt(j, d) - proj * t(j, d)) / n;
            }
            return;
        }
        case CostKind::Euclidean: {
            for (std::size_t i = 0; i < image.tokens(); ++i)
                for (std::size_t j = 0; j < text.tokens(); ++j) {
                    double s = 0.0;
                    for (std::size_t d = 0; d < image.dim(); ++d) {
                        const double diff = image.data(i, d) - text.data(j, d);
                        s += diff * diff;
                    }
                    const double c = std::sqrt(s);
                    if (c == 0.0) continue;
                    const double g = d_cost(i, j) / c;
                    for (std::size_t d = 0; d < image.dim(); ++d) {
                        const double diff = image.data(i, d) - text.data(j, d);
                        d_image(i, d) += g * diff;
                        d_text(j, d) -= g * diff;
                    }
                }
            return;
        }
    }
}

TransportPlan sinkhorn(const CostMatrix& cost, const Marginals& marginals,
                       const SinkhornConfig& cfg) {
    const RealMatrix& c = cost.values;
    validate_cost(c);
    validate_marginals(c, marginals);
    if (cfg.lambda <= 0.0) throw DomainError("sinkhorn: lambda must be positive");
    if (cfg.tol <= 0.0) throw DomainError("sinkhorn: tol must be positive");
    if (cfg.max_iters == 0) throw DomainError("sinkhorn: max_iters must be at least 1");

    const std::size_t n = c.rows;
    const std::size_t m = c.cols;
    TransportPlan result;

    // The successive-plan criterion alone can trigger while the iterate is
    // still far from the transport polytope: near-degenerate kernels make the
    // row and column rescalings almost cancel in plan space. A blessed plan
    // must also satisfy the marginal contract, otherwise we keep iterating
    // and let max_iters report the truth.
    auto feasible = [&](const RealMatrix& t) {
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += t(i, j);
            worst = std::max(worst, std::abs(s - marginals.a[i]));
        }
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += t(i, j);
            worst = std::max(worst, std::abs(s - marginals.b[j]));
        }
        return worst <= 10.0 * cfg.tol;
    };

    if (cfg.stabilized) {
        // log-domain scaling: logp/logq play the role of log of the diagonal
        // scalings, kernel K = exp(-lambda * C) kept as logK
        RealMatrix logk(n, m);
        for (std::size_t i = 0; i < n * m; ++i) logk.data[i] = -cfg.lambda * c.data[i];
        RealVector logp(n, 0.0);
        RealVector logq(m, 0.0);
        RealVector loga(n);
        RealVector logb(m);
        for (std::size_t i = 0; i < n; ++i) loga[i] = std::log(marginals.a[i]);
        for (std::size_t j = 0; j < m; ++j) logb[j] = std::log(marginals.b[j]);

        auto materialize = [&](RealMatrix& t) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j)
                    t(i, j) = std::exp(logp[i] + logk(i, j) + logq[j]);
        };

        RealMatrix prev(n, m);
        materialize(prev);
        RealMatrix cur(n, m);
        RealVector scratch(std::max(n, m));
        for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) scratch[j] = logk(i, j) + logq[j];
                logp[i] = loga[i] - log_sum_exp(scratch.data(), m, 1);
            }
            for (std::size_t j = 0; j < m; ++j) {
                for (std::size_t i = 0; i < n; ++i) scratch[i] = logk(i, j) + logp[i];
                logq[j] = logb[j] - log_sum_exp(scratch.data(), n, 1);
            }
            materialize(cur);
            if (!all_finite(cur))
                throw NumericalError("sinkhorn: non-finite plan at iteration " +
                                     std::to_string(it));
            result.iterations = it;
            result.final_residual = frobenius_distance(cur, prev);
            if (result.final_residual < cfg.tol && feasible(cur)) {
                result.converged = true;
                break;
            }
            std::swap(cur, prev);
        }
        result.plan = result.converged ? std::move(cur) : std::move(prev);
        return result;
    }

    // direct scaling as written; breaks down when the kernel underflows
    RealMatrix k(n, m);
    for (std::size_t i = 0; i < n * m; ++i) k.data[i] = std::exp(-cfg.lambda * c.data[i]);
    RealVector p(n, 1.0);
    RealVector q(m, 1.0);

    auto materialize = [&](RealMatrix& t) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) t(i, j) = p[i] * k(i, j) * q[j];
    };

    RealMatrix prev(n, m);
    materialize(prev);
    RealMatrix cur(n, m);
    for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double denom = 0.0;
            for (std::size_t j = 0; j < m; ++j) denom += k(i, j) * q[j];
            if (denom == 0.0 || !std::isfinite(denom))
                throw NumericalError("sinkhorn: row scaling broke down at iteration " +
                                     std::to_string(it) + "; use the stabilized solver");
            p[i] = marginals.a[i] / denom;
        }
        for (std::size_t j = 0; j < m; ++j) {
            double denom = 0.0;
            for (std::size_t i = 0; i < n; ++i) denom += k(i, j) * p[i];
            if (denom == 0.0 || !std::isfinite(denom))
                throw NumericalError("sinkhorn: column scaling broke down at iteration " +
                                     std::to_string(it) + "; use the stabilized solver");
            q[j] = marginals.b[j] / denom;
        }
        materialize(cur);
        if (!all_finite(cur))
            throw NumericalError("sinkhorn: non-finite plan at iteration " + std::to_string(it));
        result.iterations = it;
        result.final_residual = frobenius_distance(cur, prev);
        if (result.final_residual < cfg.tol && feasible(cur)) {
            result.converged = true;
            break;
        }
        std::swap(cur, prev);
    }
    result.plan = result.converged ? std::move(cur) : std::move(prev);
    return result;
}

double ot_distance(const TransportPlan& plan, const CostMatrix& cost) {
    if (!plan.plan.same_shape(cost.values)) throw ShapeError("ot_distance: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < plan.plan.data.size(); ++i)
        s += plan.plan.data[i] * cost.values.data[i];
    return s;
}

RealVector ot_match_probs(const RealVector& distances, double tau) {
    if (tau <= 0.0) throw DomainError("ot_match_probs: tau must be positive");
    if (distances.empty()) throw ShapeError("ot_match_probs: empty distance vector");
    RealMatrix row(1, distances.size());
    for (std::size_t j = 0; j < distances.size(); ++j) row(0, j) = 1.0 - distances[j];
    row = softmax_rows(row, tau);
    return row.data;
}

RealVector heatmap_values(const TransportPlan& plan, const CostMatrix& cost) {
    if (!plan.plan.same_shape(cost.values)) throw ShapeError("heatmap_values: shape mismatch");
    RealVector h(plan.plan.rows, 0.0);
    for (std::size_t i = 0; i < plan.plan.rows; ++i) {
        double carried = 0.0;
        for (std::size_t j = 0; j < plan.plan.cols; ++j)
            carried += plan.plan(i, j) * cost.values(i, j);
        h[i] = 1.0 - carried;
    }
    return h;
}

}  // namespace otat
