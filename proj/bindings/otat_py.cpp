// Python bindings for the main operations: cost construction, the two
// transport solvers, match probabilities, heatmaps, episode generation,
// alignment measurement and the training harness.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>
#include <vector>

#include "otat/episodes.hpp"
#include "otat/error.hpp"
#include "otat/harness.hpp"
#include "otat/matrix.hpp"
#include "otat/ot.hpp"

namespace py = pybind11;
using namespace otat;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

RealMatrix to_matrix(const DoubleArray& arr, const char* name) {
    if (arr.ndim() != 2) throw ShapeError(std::string(name) + ": expected a 2-d array");
    RealMatrix m(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
    const double* src = arr.data();
    std::copy(src, src + m.data.size(), m.data.begin());
    return m;
}

py::array_t<double> from_matrix(const RealMatrix& m) {
    py::array_t<double> out({m.rows, m.cols});
    std::copy(m.data.begin(), m.data.end(), out.mutable_data());
    return out;
}

py::array_t<double> from_vector(const RealVector& v) {
    py::array_t<double> out(v.size());
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

Marginals make_marginals(std::size_t rows, std::size_t cols,
                         const std::optional<std::vector<double>>& a,
                         const std::optional<std::vector<double>>& b) {
    Marginals m = Marginals::uniform(rows, cols);
    if (a) m.a = *a;
    if (b) m.b = *b;
    return m;
}

py::array_t<std::size_t> labels_of(const std::vector<LabeledSet>& items) {
    py::array_t<std::size_t> out(items.size());
    auto* dst = out.mutable_data();
    for (std::size_t i = 0; i < items.size(); ++i) dst[i] = items[i].label;
    return out;
}

py::array_t<double> stack_tokens(const std::vector<LabeledSet>& items) {
    if (items.empty()) return py::array_t<double>(std::vector<py::ssize_t>{0, 0, 0});
    const std::size_t rows = items[0].tokens.tokens();
    const std::size_t cols = items[0].tokens.dim();
    py::array_t<double> out({items.size(), rows, cols});
    double* dst = out.mutable_data();
    for (const auto& item : items) {
        std::copy(item.tokens.data.data.begin(), item.tokens.data.data.end(), dst);
        dst += rows * cols;
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "optimal-transport adapter tuning workbench (C++ core)";

    py::register_exception<Error>(m, "OtatError");

    m.def(
        "build_cost",
        [](const DoubleArray& image, const DoubleArray& text, const std::string& kind) {
            const CostMatrix cost =
                build_cost(EmbeddingSet(to_matrix(image, "image")),
                           EmbeddingSet(to_matrix(text, "text")), cost_kind_from_string(kind));
            return from_matrix(cost.values);
        },
        py::arg("image"), py::arg("text"), py::arg("kind") = "cosine",
        "Token-level ground cost between one image and one text (rows x cols).");

    m.def(
        "sinkhorn",
        [](const DoubleArray& cost_arr, double lam, std::size_t max_iters, double tol,
           bool stabilized, const std::optional<std::vector<double>>& a,
           const std::optional<std::vector<double>>& b) {
            CostMatrix cost;
            cost.values = to_matrix(cost_arr, "cost");
            const Marginals marg = make_marginals(cost.values.rows, cost.values.cols, a, b);
            SinkhornConfig cfg;
            cfg.lambda = lam;
            cfg.max_iters = max_iters;
            cfg.tol = tol;
            cfg.stabilized = stabilized;
            const TransportPlan tp = sinkhorn(cost, marg, cfg);
            py::dict out;
            out["plan"] = from_matrix(tp.plan);
            out["iterations"] = tp.iterations;
            out["converged"] = tp.converged;
            out["final_residual"] = tp.final_residual;
            out["distance"] = ot_distance(tp, cost);
            return out;
        },
        py::arg("cost"), py::arg("lam") = 10.0, py::arg("max_iters") = 100,
        py::arg("tol") = 1e-6, py::arg("stabilized") = true, py::arg("a") = py::none(),
        py::arg("b") = py::none(),
        "Entropy-regularized transport; marginals default to uniform.");

    m.def(
        "exact_ot",
        [](const DoubleArray& cost_arr, const std::optional<std::vector<double>>& a,
           const std::optional<std::vector<double>>& b) {
            CostMatrix cost;
            cost.values = to_matrix(cost_arr, "cost");
            const ExactOtResult ex =
                exact_ot(cost, make_marginals(cost.values.rows, cost.values.cols, a, b));
            py::dict out;
            out["plan"] = from_matrix(ex.plan);
            out["value"] = ex.value;
            return out;
        },
        py::arg("cost"), py::arg("a") = py::none(), py::arg("b") = py::none(),
        "Exact LP reference solver (instances up to 64 cells).");

    m.def(
        "ot_match_probs",
        [](const std::vector<double>& distances, double tau) {
            return from_vector(ot_match_probs(distances, tau));
        },
        py::arg("distances"), py::arg("tau") = 0.07,
        "softmax((1 - distance) / tau) over per-class transport distances.");

    m.def(
        "heatmap_values",
        [](const DoubleArray& plan_arr, const DoubleArray& cost_arr) {
            TransportPlan tp;
            tp.plan = to_matrix(plan_arr, "plan");
            CostMatrix cost;
            cost.values = to_matrix(cost_arr, "cost");
            return from_vector(heatmap_values(tp, cost));
        },
        py::arg("plan"), py::arg("cost"),
        "Per-patch relevance h_i = 1 - sum_j plan_ij * cost_ij.");

    m.def(
        "mnn_alignment",
        [](const DoubleArray& image_rows, const DoubleArray& text_rows) {
            return mnn_alignment(to_matrix(image_rows, "image_rows"),
                                 to_matrix(text_rows, "text_rows"));
        },
        py::arg("image_rows"), py::arg("text_rows"),
        "Mutual cosine 1-NN rate between paired embedding rows.");

    m.def(
        "generate_episode",
        [](std::size_t classes, std::size_t shots, std::size_t queries, std::size_t latent_dim,
           std::size_t embed_dim, std::size_t visual_tokens, std::size_t text_tokens,
           double visual_noise, double text_noise, std::size_t gap_rank, std::uint64_t seed) {
            EpisodeSpec spec;
            spec.n_classes = classes;
            spec.shots = shots;
            spec.queries = queries;
            spec.latent_dim = latent_dim;
            spec.embed_dim = embed_dim;
            spec.visual_tokens = visual_tokens;
            spec.text_tokens = text_tokens;
            spec.visual_noise = visual_noise;
            spec.text_noise = text_noise;
            spec.gap_rank = gap_rank;
            const Episode ep = generate_episode(spec, seed);
            py::dict out;
            out["latents"] = from_matrix(ep.latents);
            out["support_tokens"] = stack_tokens(ep.support);
            out["support_labels"] = labels_of(ep.support);
            out["query_tokens"] = stack_tokens(ep.query);
            out["query_labels"] = labels_of(ep.query);
            py::list text;
            for (const auto& t : ep.text) text.append(from_matrix(t.data));
            out["text_tokens"] = text;
            out["seed"] = ep.seed;
            return out;
        },
        py::arg("classes") = 5, py::arg("shots") = 5, py::arg("queries") = 20,
        py::arg("latent_dim") = 8, py::arg("embed_dim") = 16, py::arg("visual_tokens") = 16,
        py::arg("text_tokens") = 4, py::arg("visual_noise") = 0.5, py::arg("text_noise") = 0.7,
        py::arg("gap_rank") = 2, py::arg("seed") = 1,
        "Synthetic few-shot episode with a controlled text-side information gap.");

    m.def(
        "train",
        [](const std::map<std::string, std::string>& overrides) {
            RunConfig cfg;
            for (const auto& [key, value] : overrides) apply_override(cfg, key, value);
            cfg.finalize();
            const TrainOutput out = train(cfg);
            py::dict report;
            report["accuracy_mean"] = out.report.final_accuracy_mean;
            report["accuracy_std"] = out.report.final_accuracy_std;
            report["mnn_mean"] = out.report.final_mnn_mean;
            report["mnn_std"] = out.report.final_mnn_std;
            report["wall_clock_seconds"] = out.report.wall_clock_seconds;
            py::list per_seed;
            for (const auto& sr : out.seeds) {
                py::dict one;
                one["seed"] = sr.seed;
                one["accuracy"] = sr.epochs.back().accuracy;
                one["mnn"] = sr.epochs.back().mnn;
                per_seed.append(one);
            }
            report["seeds"] = per_seed;
            return report;
        },
        py::arg("overrides") = std::map<std::string, std::string>{},
        "Run the training harness; overrides use the CLI config keys.");
}
