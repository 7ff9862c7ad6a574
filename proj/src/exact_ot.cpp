#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <vector>

#include "otat/error.hpp"
#include "otat/ot.hpp"

namespace otat {
namespace detail {

namespace {

constexpr double kFeasTol = 1e-12;
constexpr double kReducedCostTol = 1e-10;

void validate(const RealMatrix& cost, const Marginals& m) {
    if (m.a.size() != cost.rows || m.b.size() != cost.cols)
        throw ShapeError("exact_ot: marginal lengths do not match the cost matrix");
    double sa = 0.0;
    double sb = 0.0;
    for (const double v : m.a) {
        if (!(v > 0.0)) throw DomainError("exact_ot: row marginals must be positive");
        sa += v;
    }
    for (const double v : m.b) {
        if (!(v > 0.0)) throw DomainError("exact_ot: column marginals must be positive");
        sb += v;
    }
    if (std::abs(sa - sb) > 1e-12 * std::max({1.0, sa, sb}))
        throw DomainError("exact_ot: marginal sums disagree");
}

}  // namespace

// Brute-force reference: every vertex of the transportation polytope is the
// basic solution of a spanning tree of the complete bipartite graph, so for
// tiny instances we can enumerate all of them.
ExactOtResult exact_ot_enumerate(const RealMatrix& cost, const Marginals& marginals) {
    validate(cost, marginals);
    const std::size_t n = cost.rows;
    const std::size_t m = cost.cols;
    const std::size_t cells = n * m;
    const std::size_t basis_size = n + m - 1;
    if (cells > 16) throw ScaleError("exact_ot_enumerate: instance too large");

    ExactOtResult best;
    best.value = std::numeric_limits<double>::infinity();

    for (std::uint32_t mask = 0; mask < (1u << cells); ++mask) {
        if (static_cast<std::size_t>(std::popcount(mask)) != basis_size) continue;

        // degree of each row/col node under this edge set
        std::vector<int> deg(n + m, 0);
        std::vector<std::vector<std::size_t>> incident(n + m);
        for (std::size_t cell = 0; cell < cells; ++cell) {
            if (!(mask & (1u << cell))) continue;
            const std::size_t i = cell / m;
            const std::size_t j = cell % m;
            ++deg[i];
            ++deg[n + j];
            incident[i].push_back(cell);
            incident[n + j].push_back(cell);
        }

        // peel leaves; a spanning tree resolves every edge exactly once
        RealVector need(n + m);
        for (std::size_t i = 0; i < n; ++i) need[i] = marginals.a[i];
        for (std::size_t j = 0; j < m; ++j) need[n + j] = marginals.b[j];
        std::vector<bool> used(cells, false);
        RealVector flow(cells, 0.0);
        std::deque<std::size_t> leaves;
        for (std::size_t v = 0; v < n + m; ++v)
            if (deg[v] == 1) leaves.push_back(v);

        std::size_t resolved = 0;
        bool feasible = true;
        while (!leaves.empty()) {
            const std::size_t v = leaves.front();
            leaves.pop_front();
            if (deg[v] != 1) continue;
            std::size_t cell = cells;
            for (const std::size_t e : incident[v])
                if (!used[e]) cell = e;
            if (cell == cells) break;
            const std::size_t i = cell / m;
            const std::size_t j = cell % m;
            const double f = need[v];
            if (f < -kFeasTol) {
                feasible = false;
                break;
            }
            flow[cell] = f;
            used[cell] = true;
            ++resolved;
            const std::size_t other = (v == i) ? n + j : i;
            need[other] -= f;
            need[v] = 0.0;
            --deg[v];
            if (--deg[other] == 1) leaves.push_back(other);
        }
        if (!feasible || resolved != basis_size) continue;

        double value = 0.0;
        for (std::size_t cell = 0; cell < cells; ++cell) value += flow[cell] * cost.data[cell];
        if (value < best.value) {
            best.value = value;
            best.plan = RealMatrix(n, m);
            for (std::size_t cell = 0; cell < cells; ++cell)
                best.plan.data[cell] = std::max(flow[cell], 0.0);
        }
    }
    if (!std::isfinite(best.value))
        throw NumericalError("exact_ot_enumerate: no feasible vertex found");
    return best;
}

// Dense network simplex on the complete bipartite graph, Bland's rule for
// both the entering and the leaving cell so degenerate pivots cannot cycle.
ExactOtResult exact_ot_simplex(const RealMatrix& cost, const Marginals& marginals) {
    validate(cost, marginals);
    const std::size_t n = cost.rows;
    const std::size_t m = cost.cols;
    RealMatrix plan(n, m);
    std::vector<std::vector<bool>> basic(n, std::vector<bool>(m, false));

    // northwest-corner start: a staircase of n + m - 1 basic cells
    {
        RealVector a = marginals.a;
        RealVector b = marginals.b;
        std::size_t i = 0;
        std::size_t j = 0;
        for (std::size_t step = 0; step + 1 < n + m; ++step) {
            basic[i][j] = true;
            const double x = std::min(a[i], b[j]);
            plan(i, j) = x;
            a[i] -= x;
            b[j] -= x;
            if (i == n - 1)
                ++j;
            else if (j == m - 1)
                ++i;
            else if (a[i] <= b[j])
                ++i;
            else
                ++j;
        }
    }

    RealVector u(n);
    RealVector v(m);
    std::vector<char> u_set(n), v_set(m);
    const std::size_t max_pivots = 1000 * (n + m) * (n + m);

    for (std::size_t pivot = 0;; ++pivot) {
        if (pivot > max_pivots)
            throw NumericalError("exact_ot_simplex: pivot limit exceeded");

        // potentials from the basis tree
        std::fill(u_set.begin(), u_set.end(), 0);
        std::fill(v_set.begin(), v_set.end(), 0);
        u[0] = 0.0;
        u_set[0] = 1;
        bool progressed = true;
        while (progressed) {
            progressed = false;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    if (!basic[i][j]) continue;
                    if (u_set[i] && !v_set[j]) {
                        v[j] = cost(i, j) - u[i];
                        v_set[j] = 1;
                        progressed = true;
                    } else if (!u_set[i] && v_set[j]) {
                        u[i] = cost(i, j) - v[j];
                        u_set[i] = 1;
                        progressed = true;
                    }
                }
        }
        for (std::size_t i = 0; i < n; ++i)
            if (!u_set[i]) throw NumericalError("exact_ot_simplex: basis lost connectivity");

        // entering cell: first (row-major) with negative reduced cost
        std::size_t ei = n;
        std::size_t ej = m;
        for (std::size_t i = 0; i < n && ei == n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                if (basic[i][j]) continue;
                if (cost(i, j) - u[i] - v[j] < -kReducedCostTol) {
                    ei = i;
                    ej = j;
                    break;
                }
            }
        if (ei == n) break;  // optimal

        // unique tree path from row node ei to column node ej
        const std::size_t nodes = n + m;
        std::vector<int> parent(nodes, -1);
        std::vector<char> seen(nodes, 0);
        std::deque<std::size_t> queue{ei};
        seen[ei] = 1;
        while (!queue.empty()) {
            const std::size_t x = queue.front();
            queue.pop_front();
            if (x == n + ej) break;
            if (x < n) {
                for (std::size_t j = 0; j < m; ++j)
                    if (basic[x][j] && !seen[n + j]) {
                        seen[n + j] = 1;
                        parent[n + j] = static_cast<int>(x);
                        queue.push_back(n + j);
                    }
            } else {
                const std::size_t j = x - n;
                for (std::size_t i = 0; i < n; ++i)
                    if (basic[i][j] && !seen[i]) {
                        seen[i] = 1;
                        parent[i] = static_cast<int>(x);
                        queue.push_back(i);
                    }
            }
        }
        if (!seen[n + ej]) throw NumericalError("exact_ot_simplex: basis path missing");

        // cycle cells alternate -,+ starting from the column end of the path
        std::vector<std::pair<std::size_t, std::size_t>> minus, plus;
        std::size_t node = n + ej;
        bool negative = true;
        while (parent[node] >= 0) {
            const std::size_t par = static_cast<std::size_t>(parent[node]);
            const std::size_t ci = node < n ? node : par;
            const std::size_t cj = node < n ? par - n : node - n;
            (negative ? minus : plus).emplace_back(ci, cj);
            negative = !negative;
            node = par;
        }

        double theta = std::numeric_limits<double>::infinity();
        for (const auto& [ci, cj] : minus) theta = std::min(theta, plan(ci, cj));
        std::size_t li = n;
        std::size_t lj = m;
        for (const auto& [ci, cj] : minus)
            if (plan(ci, cj) <= theta &&
                (li == n || ci < li || (ci == li && cj < lj))) {
                li = ci;
                lj = cj;
            }

        for (const auto& [ci, cj] : plus) plan(ci, cj) += theta;
        for (const auto& [ci, cj] : minus) plan(ci, cj) -= theta;
        plan(ei, ej) += theta;
        plan(li, lj) = 0.0;
        basic[ei][ej] = true;
        basic[li][lj] = false;
    }

    ExactOtResult out;
    out.plan = plan;
    for (double& x : out.plan.data) x = std::max(x, 0.0);
    out.value = 0.0;
    for (std::size_t i = 0; i < n * m; ++i) out.value += out.plan.data[i] * cost.data[i];
    return out;
}

}  // namespace detail

ExactOtResult exact_ot(const CostMatrix& cost, const Marginals& marginals) {
    const RealMatrix& c = cost.values;
    if (c.rows == 0 || c.cols == 0) throw ShapeError("exact_ot: empty cost matrix");
    for (const double v : c.data)
        if (!std::isfinite(v) || v < 0.0)
            throw DomainError("exact_ot: cost entries must be finite and nonnegative");
    if (c.rows * c.cols > 64)
        throw ScaleError("exact_ot: reference solver is limited to 64 cells, got " +
                         std::to_string(c.rows * c.cols));
    if (c.rows <= 3 && c.cols <= 3) return detail::exact_ot_enumerate(c, marginals);
    return detail::exact_ot_simplex(c, marginals);
}

}  // namespace otat
