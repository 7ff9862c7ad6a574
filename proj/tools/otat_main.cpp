#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "otat/error.hpp"
#include "otat/harness.hpp"

namespace {

otat::RunConfig build_config(const std::string& config_path,
                             const std::vector<std::string>& overrides, bool finalize = true) {
    otat::RunConfig cfg;
    if (!config_path.empty()) cfg = otat::load_config(config_path);
    for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw otat::ConfigError("override '" + kv + "' is not key=value");
        otat::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (finalize) cfg.finalize();
    return cfg;
}

otat::SweepGrid parse_sweep(const std::vector<std::string>& axes) {
    otat::SweepGrid grid;
    for (const auto& axis : axes) {
        const auto eq = axis.find('=');
        if (eq == std::string::npos)
            throw otat::ConfigError("sweep axis '" + axis + "' is not key=v1,v2,...");
        const std::string key = axis.substr(0, eq);
        std::vector<std::string> values;
        std::stringstream ss(axis.substr(eq + 1));
        std::string part;
        while (std::getline(ss, part, ','))
            if (!part.empty()) values.push_back(part);
        if (values.empty()) throw otat::ConfigError("sweep axis '" + key + "' has no values");
        grid.emplace_back(key, std::move(values));
    }
    return grid;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& params_dir) {
    const otat::RunConfig cfg = build_config(config_path, overrides);
    const std::string out_dir = otat::resolve_out_dir(cfg);
    std::filesystem::create_directories(out_dir);
    const otat::TrainOutput out = otat::train(cfg);
    otat::write_metrics_csv(out_dir + "/metrics.csv", cfg.run_id, out.seeds);
    for (const auto& sr : out.seeds)
        otat::write_loss_csv(out_dir + "/losses_seed" + std::to_string(sr.seed) + ".csv", sr);
    if (!params_dir.empty()) otat::save_params(out.seeds.front().model, params_dir);
    std::cout << otat::summarize(out, cfg);
    std::cout << "metrics: " << out_dir << "/metrics.csv\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides,
               const std::vector<std::string>& axes) {
    // each grid point finalizes itself; keep the base run_id free of arm defaults
    otat::RunConfig cfg = build_config(config_path, overrides, false);
    otat::SweepGrid grid = parse_sweep(axes);
    if (grid.empty())
        grid = {{"run.arm", {"baseline", "oto", "ota_oto", "ota_oto_eaw"}}};
    const std::string out_dir = otat::resolve_out_dir(cfg);
    otat::ablation_suite(cfg, grid, out_dir);
    std::cout << "ablation written to " << out_dir << "/ablation.csv and "
              << out_dir << "/ablation_summary.csv\n";
    return 0;
}

int cmd_ot_solve(const std::string& image_path, const std::string& text_path,
                 const std::string& cost_kind, double lambda, std::size_t max_iters, double tol,
                 bool direct, bool exact, const std::string& plan_out) {
    const otat::EmbeddingSet image(otat::read_matrix(image_path));
    const otat::EmbeddingSet text(otat::read_matrix(text_path));
    const otat::CostMatrix cost =
        otat::build_cost(image, text, otat::cost_kind_from_string(cost_kind));
    const otat::Marginals marg =
        otat::Marginals::uniform(cost.values.rows, cost.values.cols);
    otat::SinkhornConfig scfg;
    scfg.lambda = lambda;
    scfg.max_iters = max_iters;
    scfg.tol = tol;
    scfg.stabilized = !direct;
    const otat::TransportPlan plan = otat::sinkhorn(cost, marg, scfg);
    std::cout << "distance " << otat::format_real(otat::ot_distance(plan, cost)) << "\n"
              << "iterations " << plan.iterations << "\n"
              << "converged " << (plan.converged ? "true" : "false") << "\n"
              << "residual " << otat::format_real(plan.final_residual) << "\n";
    if (exact) {
        const otat::ExactOtResult ref = otat::exact_ot(cost, marg);
        std::cout << "exact_distance " << otat::format_real(ref.value) << "\n";
    }
    if (!plan_out.empty()) {
        otat::write_matrix(plan_out, plan.plan);
        std::cout << "plan: " << plan_out << "\n";
    }
    return 0;
}

int cmd_ot_heatmap(const std::string& config_path, const std::vector<std::string>& overrides,
                   const std::string& out_dir_flag) {
    otat::RunConfig cfg = build_config(config_path, overrides);
    if (!out_dir_flag.empty()) cfg.out_dir = out_dir_flag;
    const std::string out_dir = otat::resolve_out_dir(cfg);
    otat::export_heatmaps(cfg, out_dir);
    std::cout << "heatmaps written to " << out_dir << "\n";
    return 0;
}

int cmd_episode_gen(const std::string& config_path, const std::vector<std::string>& overrides,
                    std::uint64_t seed, const std::string& dir) {
    const otat::RunConfig cfg = build_config(config_path, overrides);
    const otat::Episode ep = otat::generate_episode(cfg.episode, seed);
    otat::export_episode(ep, dir);
    std::cout << "episode seed=" << seed << " classes=" << ep.spec.n_classes
              << " support=" << ep.support.size() << " query=" << ep.query.size() << " -> " << dir
              << "\n";
    return 0;
}

int cmd_report(const std::string& metrics_path, const std::string& summary_path) {
    std::cout << otat::report_from_csv(metrics_path, summary_path);
    std::cout << "summary: " << summary_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"optimal-transport adapter tuning workbench"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "key=value config file")->expected(1);
    app.add_option("--set", overrides, "config override key=value (repeatable)");

    auto* train = app.add_subcommand("train", "train the ablation arms on synthetic episodes");
    std::string params_dir;
    train->add_option("--save-params", params_dir, "write a parameter checkpoint here");

    auto* ablate = app.add_subcommand("ablate", "cartesian sweep over config overrides");
    std::vector<std::string> axes;
    ablate->add_option("--sweep", axes, "sweep axis key=v1,v2,... (repeatable; default: run.arm)");

    auto* ot = app.add_subcommand("ot", "transport utilities");
    ot->require_subcommand(1);
    auto* solve = ot->add_subcommand("solve", "solve one transport instance from matrix files");
    std::string image_path, text_path, plan_out;
    std::string cost_kind = "cosine";
    double lambda = 10.0, tol = 1e-6;
    std::size_t max_iters = 100;
    bool direct = false, exact = false;
    solve->add_option("image", image_path, "image token matrix file")->required();
    solve->add_option("text", text_path, "text token matrix file")->required();
    solve->add_option("--cost", cost_kind, "cosine|euclidean|constant");
    solve->add_option("--lambda", lambda, "entropy sharpness");
    solve->add_option("--max-iters", max_iters, "iteration cap");
    solve->add_option("--tol", tol, "plan-change stopping tolerance");
    solve->add_flag("--direct", direct, "kernel-space updates instead of log-space");
    solve->add_flag("--exact", exact, "also solve the exact LP for comparison");
    solve->add_option("--plan-out", plan_out, "write the coupling matrix here");

    auto* heatmap = ot->add_subcommand("heatmap", "train briefly, then export query heatmaps");
    std::string heatmap_dir;
    heatmap->add_option("--out", heatmap_dir, "output directory");

    auto* episode = app.add_subcommand("episode", "episode utilities");
    episode->require_subcommand(1);
    auto* gen = episode->add_subcommand("gen", "generate one episode and export it");
    std::uint64_t seed = 1;
    std::string episode_dir = "episode_out";
    gen->add_option("--seed", seed, "episode seed");
    gen->add_option("--out", episode_dir, "output directory");

    auto* report = app.add_subcommand("report", "aggregate a metrics CSV into final-epoch stats");
    std::string metrics_path;
    std::string summary_path = "summary.csv";
    report->add_option("metrics", metrics_path, "metrics CSV produced by train/ablate")
        ->required();
    report->add_option("--out", summary_path, "summary CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, overrides, params_dir);
        if (ablate->parsed()) return cmd_ablate(config_path, overrides, axes);
        if (solve->parsed())
            return cmd_ot_solve(image_path, text_path, cost_kind, lambda, max_iters, tol, direct,
                                exact, plan_out);
        if (heatmap->parsed()) return cmd_ot_heatmap(config_path, overrides, heatmap_dir);
        if (gen->parsed()) return cmd_episode_gen(config_path, overrides, seed, episode_dir);
        if (report->parsed()) return cmd_report(metrics_path, summary_path);
    } catch (const otat::Error& e) {
        std::cerr << "error code=" << e.code() << " message=" << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error code=internal message=" << e.what() << "\n";
        return 2;
    }
    return 0;
}
