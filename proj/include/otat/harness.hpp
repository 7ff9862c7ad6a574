#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "otat/blocks.hpp"
#include "otat/episodes.hpp"
#include "otat/losses.hpp"
#include "otat/ot.hpp"

namespace otat {

// Ablation arms, cumulative: contrastive tuning only; plus the transport
// loss; plus the cross-modal text blocks; plus the entropy-aware weighting.
enum class Arm { Baseline, Oto, OtaOto, OtaOtoEaw };

Arm arm_from_string(const std::string& s);
std::string to_string(Arm arm);

struct OptimConfig {
    double lr = 0.001;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct ModelConfig {
    std::size_t dim = 16;
    std::size_t depth_vision = 2;
    std::size_t depth_text = 2;
    std::size_t adapter_rank = 8;
    std::size_t ffn_hidden = 32;
    std::size_t cmam_start_layer = 1;  // text blocks at or after this index
    double alpha = 1.0;
    double gamma_init = 0.1;
    double beta_init = 1.0;
};

struct RunConfig {
    EpisodeSpec episode;
    ModelConfig model;
    SinkhornConfig sinkhorn;
    LossWeights weights;
    OptimConfig optim;
    CostKind cost = CostKind::CosineDistance;
    Arm arm = Arm::OtaOtoEaw;
    std::size_t steps = 200;
    std::size_t batch = 64;
    std::size_t eval_every = 10;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::string run_id;
    std::string out_dir;

    // keeps the episode token dimension in sync with the model and validates
    void finalize();
};

RunConfig load_config(const std::string& path);
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);
// out_dir, else the OTAT_OUT_DIR environment variable, else "."
std::string resolve_out_dir(const RunConfig& cfg);

// ---- model -----------------------------------------------------------------

struct OtaModel {
    std::vector<OtaBlockParams> vision;
    std::vector<OtaBlockParams> text;
};

OtaModel make_model(const RunConfig& cfg, const Rng& rng);

struct ModelGrads {
    std::vector<OtaBlockGrads> vision;
    std::vector<OtaBlockGrads> text;
};

ModelGrads make_model_grads(const OtaModel& model);
std::vector<ParamView> trainable_views(OtaModel& model);
std::vector<ParamView> grad_views(ModelGrads& grads);

void save_params(const OtaModel& model, const std::string& dir);
void load_params(OtaModel& model, const std::string& dir);

// ---- optimizer ----------------------------------------------------------------

double cosine_lr(double lr0, std::size_t step, std::size_t total_steps);

// decoupled weight decay: with zero gradients and empty state one step shrinks
// parameters by exactly (1 - lr * weight_decay)
class AdamW {
public:
    AdamW(std::size_t n_params, OptimConfig cfg);
    void step(std::span<ParamView> params, std::span<const ParamView> grads, double lr);

private:
    OptimConfig cfg_;
    RealVector m_, v_;
    std::size_t t_ = 0;
};

// ---- classification -------------------------------------------------------------

enum class ClassifyMode { Cosine, Ot };

struct EnhancedText {
    std::vector<RealMatrix> tokens;  // per class, final text tokens
    RealMatrix global;               // n_classes x dim, unit rows
};

struct ClassifyResult {
    std::size_t predicted = 0;
    RealVector scores;  // cosine similarities, or transport match probabilities
};

ClassifyResult classify(const EmbeddingSet& query_tokens, const EnhancedText& text,
                        ClassifyMode mode, double tau, const SinkhornConfig& sinkhorn,
                        CostKind kind);

// ---- training --------------------------------------------------------------------

struct StepLosses {
    std::size_t step = 0;
    double l_cos = 0.0, l_ota = 0.0, l_eaw = 0.0, total = 0.0, mu = 0.0;
};

struct EpochMetrics {
    std::size_t epoch = 0;  // 0 = before training, otherwise steps completed
    double accuracy = 0.0;
    double mnn = 0.0;
    StepLosses losses;
    double lr = 0.0;
};

struct SeedResult {
    std::uint64_t seed = 0;
    std::vector<EpochMetrics> epochs;
    std::vector<StepLosses> steps;
    OtaModel model;
    Episode episode;
    PrototypeBank bank{};
};

struct MetricsReport {
    double final_accuracy_mean = 0.0;
    double final_accuracy_std = 0.0;
    double final_mnn_mean = 0.0;
    double final_mnn_std = 0.0;
    double wall_clock_seconds = 0.0;
};

struct TrainOutput {
    std::vector<SeedResult> seeds;
    MetricsReport report;
};

SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed);
TrainOutput train(const RunConfig& cfg);

// ---- artifacts --------------------------------------------------------------------

void write_metrics_csv(const std::string& path, const std::string& run_id,
                       std::span<const SeedResult> seeds, bool append = false);
void write_loss_csv(const std::string& path, const SeedResult& seed);
std::string summarize(const TrainOutput& out, const RunConfig& cfg);

// report verb: aggregate a metrics CSV into per-metric final-epoch mean/std
std::string report_from_csv(const std::string& metrics_path, const std::string& summary_path);

using SweepGrid = std::vector<std::pair<std::string, std::vector<std::string>>>;

// cartesian sweep over config overrides; one metrics row per grid point/seed
void ablation_suite(const RunConfig& base, const SweepGrid& grid, const std::string& out_dir);

// per-query transport heatmaps against the true-class text, CSV + SVG grids
void export_heatmaps(const RunConfig& cfg, const std::string& out_dir);

std::string svg_heatmap(const RealVector& values, std::size_t grid_cols, std::size_t cell_px = 28);

}  // namespace otat
