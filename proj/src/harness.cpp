#include "otat/harness.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "otat/error.hpp"

namespace otat {

namespace {

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

// ---- checkpoint tensor enumeration ------------------------------------------

struct TensorRef {
    std::string name;
    RealMatrix* mat = nullptr;
    RealVector* vec = nullptr;
    double* scalar = nullptr;
};

void collect_block_tensors(OtaBlockParams& blk, const std::string& prefix,
                           std::vector<TensorRef>& out) {
    out.push_back({prefix + "attn.w_q", &blk.attn.w_q, nullptr, nullptr});
    out.push_back({prefix + "attn.w_k", &blk.attn.w_k, nullptr, nullptr});
    out.push_back({prefix + "attn.w_v", &blk.attn.w_v, nullptr, nullptr});
    out.push_back({prefix + "attn.w_o", &blk.attn.w_o, nullptr, nullptr});
    out.push_back({prefix + "ffn.w1", &blk.ffn.w1, nullptr, nullptr});
    out.push_back({prefix + "ffn.b1", nullptr, &blk.ffn.b1, nullptr});
    out.push_back({prefix + "ffn.w2", &blk.ffn.w2, nullptr, nullptr});
    out.push_back({prefix + "ffn.b2", nullptr, &blk.ffn.b2, nullptr});
    out.push_back({prefix + "adapter.w_down", &blk.adapter.w_down, nullptr, nullptr});
    out.push_back({prefix + "adapter.w_up", &blk.adapter.w_up, nullptr, nullptr});
    if (blk.ffn_adapter) {
        out.push_back({prefix + "ffn_adapter.w_down", &blk.ffn_adapter->w_down, nullptr, nullptr});
        out.push_back({prefix + "ffn_adapter.w_up", &blk.ffn_adapter->w_up, nullptr, nullptr});
    }
    if (blk.cmam) {
        out.push_back({prefix + "cmam.w_q", &blk.cmam->w_q, nullptr, nullptr});
        out.push_back({prefix + "cmam.w_k", &blk.cmam->w_k, nullptr, nullptr});
        out.push_back({prefix + "cmam.w_v", &blk.cmam->w_v, nullptr, nullptr});
        out.push_back({prefix + "cmam.gamma", nullptr, nullptr, &blk.cmam->gamma});
        out.push_back({prefix + "cmam.beta", nullptr, nullptr, &blk.cmam->beta});
    }
    out.push_back({prefix + "ln.gain", nullptr, &blk.ln.gain, nullptr});
    out.push_back({prefix + "ln.bias", nullptr, &blk.ln.bias, nullptr});
}

std::vector<TensorRef> collect_model_tensors(OtaModel& model) {
    std::vector<TensorRef> out;
    for (std::size_t l = 0; l < model.vision.size(); ++l)
        collect_block_tensors(model.vision[l], "vision." + std::to_string(l) + ".", out);
    for (std::size_t l = 0; l < model.text.size(); ++l)
        collect_block_tensors(model.text[l], "text." + std::to_string(l) + ".", out);
    return out;
}

RealMatrix tensor_as_matrix(const TensorRef& t) {
    if (t.mat) return *t.mat;
    if (t.vec) {
        RealMatrix m(1, t.vec->size());
        m.data = *t.vec;
        return m;
    }
    RealMatrix m(1, 1);
    m(0, 0) = *t.scalar;
    return m;
}

void tensor_from_matrix(const TensorRef& t, const RealMatrix& m) {
    if (t.mat) {
        if (!m.same_shape(*t.mat))
            throw ShapeError("checkpoint tensor '" + t.name + "' has the wrong shape");
        *t.mat = m;
        return;
    }
    if (t.vec) {
        if (m.rows != 1 || m.cols != t.vec->size())
            throw ShapeError("checkpoint tensor '" + t.name + "' has the wrong shape");
        *t.vec = m.data;
        return;
    }
    if (m.rows != 1 || m.cols != 1)
        throw ShapeError("checkpoint tensor '" + t.name + "' must be a scalar");
    *t.scalar = m(0, 0);
}

// ---- encoding helpers --------------------------------------------------------

struct ItemEncoding {
    EncoderCache cache;
    RealMatrix tokens;  // final tokens after the stack
    PoolCache pool;
    RealVector emb;  // unit global embedding
};

ItemEncoding encode_item(const RealMatrix& input, std::span<const OtaBlockParams> blocks,
                         std::span<const RealMatrix> cmam_images) {
    ItemEncoding e;
    e.tokens = encode_tokens(input, blocks, cmam_images, e.cache);
    e.emb = pooled_embedding(e.tokens, e.pool);
    return e;
}

bool model_has_cmam(const OtaModel& model) {
    for (const auto& blk : model.text)
        if (blk.cmam) return true;
    return false;
}

std::vector<std::vector<std::size_t>> support_by_class(const Episode& ep) {
    std::vector<std::vector<std::size_t>> cls(ep.spec.n_classes);
    for (std::size_t i = 0; i < ep.support.size(); ++i)
        cls[ep.support[i].label].push_back(i);
    return cls;
}

struct TextEncodings {
    std::vector<ItemEncoding> per_class;
    std::vector<std::vector<RealMatrix>> images_by_class;  // empty unless cross-modal blocks
};

TextEncodings encode_text_side(const OtaModel& model, const Episode& ep,
                               const std::vector<ItemEncoding>& support,
                               const std::vector<std::vector<std::size_t>>& cls) {
    TextEncodings t;
    const std::size_t n = ep.spec.n_classes;
    t.images_by_class.resize(n);
    if (model_has_cmam(model))
        for (std::size_t c = 0; c < n; ++c)
            for (std::size_t idx : cls[c]) t.images_by_class[c].push_back(support[idx].tokens);
    t.per_class.reserve(n);
    for (std::size_t c = 0; c < n; ++c)
        t.per_class.push_back(encode_item(ep.text[c].data, model.text, t.images_by_class[c]));
    return t;
}

EnhancedText enhanced_from(const TextEncodings& te, std::size_t dim) {
    EnhancedText et;
    et.global = RealMatrix(te.per_class.size(), dim);
    for (std::size_t c = 0; c < te.per_class.size(); ++c) {
        et.tokens.push_back(te.per_class[c].tokens);
        std::copy(te.per_class[c].emb.begin(), te.per_class[c].emb.end(), et.global.row(c).begin());
    }
    return et;
}

bool is_zero(const RealMatrix& m) {
    for (double v : m.data)
        if (v != 0.0) return false;
    return true;
}

struct EvalOut {
    double accuracy = 0.0;
    double mnn = 0.0;
};

EvalOut evaluate(const RunConfig& cfg, const OtaModel& model, const Episode& ep) {
    const auto cls = support_by_class(ep);
    std::vector<ItemEncoding> support;
    if (model_has_cmam(model)) {
        support.reserve(ep.support.size());
        for (const auto& item : ep.support)
            support.push_back(encode_item(item.tokens.data, model.vision, {}));
    }
    const TextEncodings text = encode_text_side(model, ep, support, cls);
    const EnhancedText et = enhanced_from(text, cfg.model.dim);

    EvalOut out;
    RealMatrix class_means(ep.spec.n_classes, cfg.model.dim);
    std::vector<std::size_t> counts(ep.spec.n_classes, 0);
    for (const auto& item : ep.query) {
        ItemEncoding q = encode_item(item.tokens.data, model.vision, {});
        const ClassifyResult r = classify(EmbeddingSet(q.tokens), et, ClassifyMode::Cosine,
                                          cfg.weights.tau, cfg.sinkhorn, cfg.cost);
        if (r.predicted == item.label) out.accuracy += 1.0;
        for (std::size_t j = 0; j < cfg.model.dim; ++j) class_means(item.label, j) += q.emb[j];
        ++counts[item.label];
    }
    out.accuracy /= static_cast<double>(ep.query.size());
    for (std::size_t c = 0; c < ep.spec.n_classes; ++c)
        for (std::size_t j = 0; j < cfg.model.dim; ++j)
            class_means(c, j) /= static_cast<double>(counts[c]);
    out.mnn = mnn_alignment(class_means, et.global);
    return out;
}

StepLosses train_step(const RunConfig& cfg, OtaModel& model, ModelGrads& grads,
                      std::span<ParamView> gviews, const Episode& ep,
                      const std::vector<std::vector<std::size_t>>& cls, PrototypeBank& bank,
                      std::size_t step, const Rng& seed_rng) {
    zero_views(gviews);
    const std::size_t dim = cfg.model.dim;
    const std::size_t n_classes = ep.spec.n_classes;
    const bool use_ota = cfg.arm != Arm::Baseline;
    const bool use_eaw = cfg.arm == Arm::OtaOtoEaw;

    std::vector<ItemEncoding> support;
    support.reserve(ep.support.size());
    for (const auto& item : ep.support)
        support.push_back(encode_item(item.tokens.data, model.vision, {}));
    TextEncodings text = encode_text_side(model, ep, support, cls);

    std::vector<std::size_t> batch(ep.support.size());
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
    if (cfg.batch < batch.size()) {
        Rng rng = seed_rng.derive("batch", step);
        for (std::size_t i = batch.size(); i > 1; --i)
            std::swap(batch[i - 1], batch[rng.index(i)]);
        batch.resize(cfg.batch);
    }
    const std::size_t b = batch.size();

    RealMatrix img_embs(b, dim);
    RealMatrix text_embs(n_classes, dim);
    std::vector<std::size_t> labels(b);
    for (std::size_t i = 0; i < b; ++i) {
        const ItemEncoding& e = support[batch[i]];
        std::copy(e.emb.begin(), e.emb.end(), img_embs.row(i).begin());
        labels[i] = ep.support[batch[i]].label;
    }
    for (std::size_t c = 0; c < n_classes; ++c)
        std::copy(text.per_class[c].emb.begin(), text.per_class[c].emb.end(),
                  text_embs.row(c).begin());

    StepLosses sl;
    sl.step = step;
    const CosLossResult lc = loss_cos(img_embs, text_embs, labels, cfg.weights.tau);
    sl.l_cos = lc.value;

    OtaLossResult lo;
    std::vector<std::vector<TransportPlan>> plans;
    std::vector<std::vector<CostMatrix>> costs;
    if (use_ota) {
        RealMatrix distances(b, n_classes);
        plans.resize(b);
        costs.resize(b);
        const Marginals marg = Marginals::uniform(ep.spec.visual_tokens, ep.text[0].tokens());
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t c = 0; c < n_classes; ++c) {
                CostMatrix cost = build_cost(EmbeddingSet(support[batch[i]].tokens),
                                             EmbeddingSet(text.per_class[c].tokens), cfg.cost);
                TransportPlan plan = sinkhorn(cost, marg, cfg.sinkhorn);
                distances(i, c) = ot_distance(plan, cost);
                plans[i].push_back(std::move(plan));
                costs[i].push_back(std::move(cost));
            }
        }
        lo = loss_ota(distances, labels, cfg.weights.tau);
        sl.l_ota = lo.value;
    }

    EawLossResult le;
    if (use_eaw) {
        update_prototypes(bank, img_embs, labels);
        le = loss_eaw(bank, text_embs, cfg.weights);
        sl.l_eaw = le.value;
    }
    sl.mu = bank.mu;
    if (!std::isfinite(sl.l_cos) || !std::isfinite(sl.l_ota) || !std::isfinite(sl.l_eaw))
        throw NumericalError("non-finite training loss at step " + std::to_string(step) +
                             ": l_cos=" + format_real(sl.l_cos) + " l_ota=" +
                             format_real(sl.l_ota) + " l_eaw=" + format_real(sl.l_eaw));
    sl.total = loss_total(sl.l_cos, use_ota ? sl.l_ota : 0.0, use_eaw ? sl.l_eaw : 0.0,
                          cfg.weights);

    // ---- backward ----
    std::vector<RealMatrix> d_support(ep.support.size());
    for (std::size_t i = 0; i < d_support.size(); ++i)
        d_support[i] = RealMatrix(support[i].tokens.rows, dim);
    std::vector<RealMatrix> d_text_tokens(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c)
        d_text_tokens[c] = RealMatrix(text.per_class[c].tokens.rows, dim);

    RealMatrix d_text_embs = lc.d_text;
    if (use_eaw) axpy_inplace(d_text_embs, cfg.weights.nu, le.d_text);

    RealVector row(dim);
    for (std::size_t i = 0; i < b; ++i) {
        std::copy(lc.d_image.row(i).begin(), lc.d_image.row(i).end(), row.begin());
        pooled_embedding_backward(row, support[batch[i]].pool, d_support[batch[i]]);
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::copy(d_text_embs.row(c).begin(), d_text_embs.row(c).end(), row.begin());
        pooled_embedding_backward(row, text.per_class[c].pool, d_text_tokens[c]);
    }
    if (use_ota) {
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t c = 0; c < n_classes; ++c) {
                const double coeff = cfg.weights.xi * lo.d_distances(i, c);
                if (coeff == 0.0) continue;
                const RealMatrix d_cost = scaled(plans[i][c].plan, coeff);
                cost_backward(EmbeddingSet(support[batch[i]].tokens),
                              EmbeddingSet(text.per_class[c].tokens), cfg.cost, d_cost,
                              d_support[batch[i]], d_text_tokens[c]);
            }
        }
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
        std::vector<RealMatrix> d_images;
        std::vector<RealMatrix>* dip = nullptr;
        if (!text.images_by_class[c].empty()) {
            d_images.assign(text.images_by_class[c].size(),
                            RealMatrix(ep.spec.visual_tokens, dim));
            dip = &d_images;
        }
        encode_backward(d_text_tokens[c], text.per_class[c].cache, model.text,
                        text.images_by_class[c], grads.text, dip);
        if (dip)
            for (std::size_t k = 0; k < d_images.size(); ++k)
                add_inplace(d_support[cls[c][k]], d_images[k]);
    }
    for (std::size_t i = 0; i < ep.support.size(); ++i) {
        if (is_zero(d_support[i])) continue;
        encode_backward(d_support[i], support[i].cache, model.vision, {}, grads.vision, nullptr);
    }
    return sl;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string rgb_hex(double t, double lo_r, double lo_g, double lo_b, double hi_r, double hi_g,
                    double hi_b) {
    const auto ch = [&](double a, double z) {
        const int v = static_cast<int>(std::lround(a + (z - a) * t));
        return std::clamp(v, 0, 255);
    };
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", ch(lo_r, hi_r), ch(lo_g, hi_g),
                  ch(lo_b, hi_b));
    return buf;
}

}  // namespace

// ---- model -------------------------------------------------------------------

OtaModel make_model(const RunConfig& cfg, const Rng& rng) {
    OtaModel model;
    const bool with_cmam = cfg.arm == Arm::OtaOto || cfg.arm == Arm::OtaOtoEaw;
    for (std::size_t l = 0; l < cfg.model.depth_vision; ++l)
        model.vision.push_back(make_block(rng.derive("vision_block", l), cfg.model.dim,
                                          cfg.model.adapter_rank, cfg.model.ffn_hidden,
                                          cfg.model.alpha, BlockRole::Vision));
    for (std::size_t l = 0; l < cfg.model.depth_text; ++l) {
        const BlockRole role = (with_cmam && l >= cfg.model.cmam_start_layer)
                                   ? BlockRole::TextCmam
                                   : BlockRole::TextPlain;
        model.text.push_back(make_block(rng.derive("text_block", l), cfg.model.dim,
                                        cfg.model.adapter_rank, cfg.model.ffn_hidden,
                                        cfg.model.alpha, role, cfg.model.gamma_init,
                                        cfg.model.beta_init));
    }
    return model;
}

ModelGrads make_model_grads(const OtaModel& model) {
    ModelGrads g;
    for (const auto& blk : model.vision) g.vision.push_back(make_grads(blk));
    for (const auto& blk : model.text) g.text.push_back(make_grads(blk));
    return g;
}

std::vector<ParamView> trainable_views(OtaModel& model) {
    std::vector<ParamView> out;
    for (std::size_t l = 0; l < model.vision.size(); ++l)
        collect_trainable(model.vision[l], "vision." + std::to_string(l) + ".", out);
    for (std::size_t l = 0; l < model.text.size(); ++l)
        collect_trainable(model.text[l], "text." + std::to_string(l) + ".", out);
    return out;
}

std::vector<ParamView> grad_views(ModelGrads& grads) {
    std::vector<ParamView> out;
    for (std::size_t l = 0; l < grads.vision.size(); ++l)
        collect_grads(grads.vision[l], "vision." + std::to_string(l) + ".", out);
    for (std::size_t l = 0; l < grads.text.size(); ++l)
        collect_grads(grads.text[l], "text." + std::to_string(l) + ".", out);
    return out;
}

void save_params(const OtaModel& model, const std::string& dir) {
    ensure_dir(dir);
    auto refs = collect_model_tensors(const_cast<OtaModel&>(model));
    nlohmann::json manifest;
    manifest["tensors"] = nlohmann::json::array();
    for (const auto& ref : refs) {
        const RealMatrix m = tensor_as_matrix(ref);
        manifest["tensors"].push_back(
            {{"name", ref.name}, {"rows", m.rows}, {"cols", m.cols}});
        write_matrix(dir + "/" + ref.name + ".mtx", m);
    }
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw IoError("cannot write " + dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
}

void load_params(OtaModel& model, const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw IoError("cannot open " + dir + "/manifest.json");
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad checkpoint manifest: " + std::string(e.what()));
    }
    std::map<std::string, bool> listed;
    for (const auto& entry : manifest.at("tensors"))
        listed[entry.at("name").get<std::string>()] = true;
    auto refs = collect_model_tensors(model);
    if (listed.size() != refs.size())
        throw IoError("checkpoint lists " + std::to_string(listed.size()) + " tensors, model has " +
                      std::to_string(refs.size()));
    for (const auto& ref : refs) {
        if (!listed.count(ref.name)) throw IoError("checkpoint missing tensor " + ref.name);
        tensor_from_matrix(ref, read_matrix(dir + "/" + ref.name + ".mtx"));
    }
}

// ---- optimizer -----------------------------------------------------------------

double cosine_lr(double lr0, std::size_t step, std::size_t total_steps) {
    if (total_steps <= 1) return lr0;
    // anneal over the step indices actually taken, so the last step reaches 0
    const double frac = static_cast<double>(std::min(step, total_steps - 1)) /
                        static_cast<double>(total_steps - 1);
    return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * frac));
}

AdamW::AdamW(std::size_t n_params, OptimConfig cfg)
    : cfg_(cfg), m_(n_params, 0.0), v_(n_params, 0.0) {}

void AdamW::step(std::span<ParamView> params, std::span<const ParamView> grads, double lr) {
    if (params.size() != grads.size())
        throw ShapeError("optimizer: parameter and gradient view counts differ");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t off = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].size != grads[k].size)
            throw ShapeError("optimizer: view size mismatch at " + params[k].name);
        if (off + params[k].size > m_.size())
            throw ShapeError("optimizer: more parameters than allocated state");
        for (std::size_t i = 0; i < params[k].size; ++i, ++off) {
            double& th = params[k].data[i];
            const double g = grads[k].data[i];
            th *= 1.0 - lr * cfg_.weight_decay;
            m_[off] = cfg_.beta1 * m_[off] + (1.0 - cfg_.beta1) * g;
            v_[off] = cfg_.beta2 * v_[off] + (1.0 - cfg_.beta2) * g * g;
            th -= lr * (m_[off] / bc1) / (std::sqrt(v_[off] / bc2) + cfg_.eps);
        }
    }
    if (off != m_.size()) throw ShapeError("optimizer: fewer parameters than allocated state");
}

// ---- classification --------------------------------------------------------------

ClassifyResult classify(const EmbeddingSet& query_tokens, const EnhancedText& text,
                        ClassifyMode mode, double tau, const SinkhornConfig& sinkhorn_cfg,
                        CostKind kind) {
    const std::size_t n_classes = text.global.rows;
    if (n_classes == 0) throw StateError("classify: text bank has not been built");
    if (text.tokens.size() != n_classes)
        throw ShapeError("classify: inconsistent text bank");
    ClassifyResult r;
    if (mode == ClassifyMode::Cosine) {
        PoolCache pc;
        const RealVector emb = pooled_embedding(query_tokens.data, pc);
        r.scores.resize(n_classes);
        for (std::size_t c = 0; c < n_classes; ++c) r.scores[c] = dot(emb, text.global.row(c));
    } else {
        RealVector distances(n_classes);
        for (std::size_t c = 0; c < n_classes; ++c) {
            const CostMatrix cost =
                build_cost(query_tokens, EmbeddingSet(text.tokens[c]), kind);
            const Marginals marg = Marginals::uniform(cost.values.rows, cost.values.cols);
            distances[c] = ot_distance(sinkhorn(cost, marg, sinkhorn_cfg), cost);
        }
        r.scores = ot_match_probs(distances, tau);
    }
    for (std::size_t c = 1; c < n_classes; ++c)
        if (r.scores[c] > r.scores[r.predicted]) r.predicted = c;
    return r;
}

// ---- training ----------------------------------------------------------------------

SeedResult run_seed(const RunConfig& cfg, std::uint64_t seed) {
    SeedResult result;
    result.seed = seed;
    result.episode = generate_episode(cfg.episode, seed);
    const Rng seed_rng(seed);
    result.model = make_model(cfg, seed_rng.derive("model"));
    ModelGrads grads = make_model_grads(result.model);
    std::vector<ParamView> params = trainable_views(result.model);
    std::vector<ParamView> gviews = grad_views(grads);
    AdamW opt(total_size(params), cfg.optim);
    result.bank = PrototypeBank::zeros(cfg.episode.n_classes, cfg.model.dim);
    const auto cls = support_by_class(result.episode);

    EpochMetrics first;
    first.epoch = 0;
    first.lr = cfg.optim.lr;
    const EvalOut e0 = evaluate(cfg, result.model, result.episode);
    first.accuracy = e0.accuracy;
    first.mnn = e0.mnn;
    first.losses.mu = result.bank.mu;
    result.epochs.push_back(first);

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const double lr = cosine_lr(cfg.optim.lr, step, cfg.steps);
        StepLosses sl = train_step(cfg, result.model, grads, gviews, result.episode, cls,
                                   result.bank, step, seed_rng);
        opt.step(params, gviews, lr);
        result.steps.push_back(sl);
        const std::size_t done = step + 1;
        if (done % cfg.eval_every == 0 || done == cfg.steps) {
            EpochMetrics em;
            em.epoch = done;
            em.lr = lr;
            em.losses = sl;
            const EvalOut ev = evaluate(cfg, result.model, result.episode);
            em.accuracy = ev.accuracy;
            em.mnn = ev.mnn;
            result.epochs.push_back(em);
            if (!std::isfinite(ev.accuracy) || !std::isfinite(ev.mnn))
                throw NumericalError("non-finite evaluation metric at step " +
                                     std::to_string(done));
        }
    }
    return result;
}

TrainOutput train(const RunConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainOutput out;
    std::vector<double> accs, mnns;
    for (std::uint64_t seed : cfg.seeds) {
        out.seeds.push_back(run_seed(cfg, seed));
        const auto& epochs = out.seeds.back().epochs;
        accs.push_back(epochs.back().accuracy);
        mnns.push_back(epochs.back().mnn);
    }
    out.report.final_accuracy_mean = mean_of(accs);
    out.report.final_accuracy_std = sample_std(accs);
    out.report.final_mnn_mean = mean_of(mnns);
    out.report.final_mnn_std = sample_std(mnns);
    out.report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---- artifacts -----------------------------------------------------------------------

void write_metrics_csv(const std::string& path, const std::string& run_id,
                       std::span<const SeedResult> seeds, bool append) {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    if (!append) out << "run_id,seed,epoch,split,metric,value\n";
    for (const auto& sr : seeds) {
        for (const auto& em : sr.epochs) {
            const std::string head =
                run_id + "," + std::to_string(sr.seed) + "," + std::to_string(em.epoch) + ",";
            if (em.epoch > 0) {
                out << head << "train,loss_cos," << format_real(em.losses.l_cos) << "\n";
                out << head << "train,loss_ota," << format_real(em.losses.l_ota) << "\n";
                out << head << "train,loss_eaw," << format_real(em.losses.l_eaw) << "\n";
                out << head << "train,loss_total," << format_real(em.losses.total) << "\n";
                out << head << "train,lr," << format_real(em.lr) << "\n";
            }
            out << head << "val,accuracy," << format_real(em.accuracy) << "\n";
            out << head << "val,mnn," << format_real(em.mnn) << "\n";
        }
    }
    if (!out) throw IoError("failed writing " + path);
}

void write_loss_csv(const std::string& path, const SeedResult& seed) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "step,l_cos,l_ota,l_eaw,total,mu\n";
    for (const auto& sl : seed.steps)
        out << sl.step << "," << format_real(sl.l_cos) << "," << format_real(sl.l_ota) << ","
            << format_real(sl.l_eaw) << "," << format_real(sl.total) << "," << format_real(sl.mu)
            << "\n";
    if (!out) throw IoError("failed writing " + path);
}

std::string summarize(const TrainOutput& out, const RunConfig& cfg) {
    std::ostringstream os;
    os << "run " << cfg.run_id << ": arm=" << to_string(cfg.arm) << " cost=" << to_string(cfg.cost)
       << " seeds=" << cfg.seeds.size() << " steps=" << cfg.steps << "\n";
    os << "  final accuracy " << format_real(out.report.final_accuracy_mean) << " +/- "
       << format_real(out.report.final_accuracy_std) << "\n";
    os << "  final mnn      " << format_real(out.report.final_mnn_mean) << " +/- "
       << format_real(out.report.final_mnn_std) << "\n";
    os << "  wall clock     " << format_real(out.report.wall_clock_seconds) << "s\n";
    return os.str();
}

std::string report_from_csv(const std::string& metrics_path, const std::string& summary_path) {
    std::ifstream in(metrics_path);
    if (!in) throw IoError("cannot open " + metrics_path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty metrics file: " + metrics_path);

    struct Cell {
        std::size_t epoch = 0;
        double value = 0.0;
    };
    // (run_id, metric) -> seed -> value at the largest epoch seen
    std::map<std::pair<std::string, std::string>, std::map<std::string, Cell>> final_values;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::array<std::string, 6> fields;
        std::size_t start = 0;
        for (std::size_t f = 0; f < 6; ++f) {
            const std::size_t comma = line.find(',', start);
            if (f < 5) {
                if (comma == std::string::npos)
                    throw IoError(metrics_path + ":" + std::to_string(lineno) +
                                  ": expected 6 fields");
                fields[f] = line.substr(start, comma - start);
                start = comma + 1;
            } else {
                fields[f] = line.substr(start);
            }
        }
        Cell cell;
        try {
            cell.epoch = static_cast<std::size_t>(std::stoull(fields[2]));
            cell.value = std::stod(fields[5]);
        } catch (const std::exception&) {
            throw IoError(metrics_path + ":" + std::to_string(lineno) + ": bad numeric field");
        }
        auto& per_seed = final_values[{fields[0], fields[4]}];
        auto it = per_seed.find(fields[1]);
        if (it == per_seed.end() || cell.epoch >= it->second.epoch) per_seed[fields[1]] = cell;
    }

    std::ofstream sum(summary_path);
    if (!sum) throw IoError("cannot write " + summary_path);
    sum << "run_id,metric,final_epoch,seeds,mean,std\n";
    std::ostringstream os;
    for (const auto& [key, per_seed] : final_values) {
        std::vector<double> vals;
        std::size_t max_epoch = 0;
        for (const auto& [seed, cell] : per_seed) {
            vals.push_back(cell.value);
            max_epoch = std::max(max_epoch, cell.epoch);
        }
        const double m = mean_of(vals);
        const double s = sample_std(vals);
        sum << key.first << "," << key.second << "," << max_epoch << "," << vals.size() << ","
            << format_real(m) << "," << format_real(s) << "\n";
        os << key.first << " " << key.second << "@" << max_epoch << ": " << format_real(m)
           << " +/- " << format_real(s) << " over " << vals.size() << " seed(s)\n";
    }
    if (!sum) throw IoError("failed writing " + summary_path);
    return os.str();
}

void ablation_suite(const RunConfig& base, const SweepGrid& grid, const std::string& out_dir) {
    ensure_dir(out_dir);
    for (const auto& [key, values] : grid)
        if (values.empty()) throw ConfigError("sweep axis '" + key + "' has no values");
    const std::string metrics_path = out_dir + "/ablation.csv";
    const std::string summary_path = out_dir + "/ablation_summary.csv";
    std::ofstream sum(summary_path);
    if (!sum) throw IoError("cannot write " + summary_path);
    sum << "run_id,seeds,accuracy_mean,accuracy_std,mnn_mean,mnn_std\n";

    std::vector<std::size_t> idx(grid.size(), 0);
    bool first = true;
    while (true) {
        RunConfig cfg = base;
        std::string id = base.run_id.empty() ? "ablation" : base.run_id;
        for (std::size_t k = 0; k < grid.size(); ++k) {
            apply_override(cfg, grid[k].first, grid[k].second[idx[k]]);
            id += ";" + grid[k].first + "=" + grid[k].second[idx[k]];
        }
        cfg.run_id = id;
        cfg.finalize();
        const TrainOutput out = train(cfg);
        write_metrics_csv(metrics_path, id, out.seeds, !first);
        sum << id << "," << cfg.seeds.size() << "," << format_real(out.report.final_accuracy_mean)
            << "," << format_real(out.report.final_accuracy_std) << ","
            << format_real(out.report.final_mnn_mean) << ","
            << format_real(out.report.final_mnn_std) << "\n";
        first = false;

        std::size_t k = grid.size();
        while (k > 0) {
            --k;
            if (++idx[k] < grid[k].second.size()) break;
            idx[k] = 0;
            if (k == 0) return;
        }
        if (grid.empty()) return;
    }
}

void export_heatmaps(const RunConfig& cfg, const std::string& out_dir) {
    ensure_dir(out_dir);
    const SeedResult sr = run_seed(cfg, cfg.seeds.front());
    const Episode& ep = sr.episode;
    const auto cls = support_by_class(ep);
    std::vector<ItemEncoding> support;
    if (model_has_cmam(sr.model)) {
        support.reserve(ep.support.size());
        for (const auto& item : ep.support)
            support.push_back(encode_item(item.tokens.data, sr.model.vision, {}));
    }
    const TextEncodings text = encode_text_side(sr.model, ep, support, cls);

    std::ofstream csv(out_dir + "/heatmaps.csv");
    if (!csv) throw IoError("cannot write " + out_dir + "/heatmaps.csv");
    csv << "query,label,ot_distance";
    for (std::size_t i = 0; i < ep.spec.visual_tokens; ++i) csv << ",h_" << i;
    csv << "\n";

    const std::size_t grid_cols = static_cast<std::size_t>(
        std::ceil(std::sqrt(static_cast<double>(ep.spec.visual_tokens))));
    for (std::size_t q = 0; q < ep.query.size(); ++q) {
        ItemEncoding enc = encode_item(ep.query[q].tokens.data, sr.model.vision, {});
        const std::size_t label = ep.query[q].label;
        const CostMatrix cost = build_cost(EmbeddingSet(enc.tokens),
                                           EmbeddingSet(text.per_class[label].tokens), cfg.cost);
        const Marginals marg = Marginals::uniform(cost.values.rows, cost.values.cols);
        const TransportPlan plan = sinkhorn(cost, marg, cfg.sinkhorn);
        const RealVector h = heatmap_values(plan, cost);
        csv << q << "," << label << "," << format_real(ot_distance(plan, cost));
        for (double v : h) csv << "," << format_real(v);
        csv << "\n";

        char name[32];
        std::snprintf(name, sizeof name, "heatmap_q%03zu.svg", q);
        std::ofstream svg(out_dir + "/" + name);
        if (!svg) throw IoError("cannot write " + out_dir + "/" + name);
        svg << svg_heatmap(h, grid_cols);
    }
    if (!csv) throw IoError("failed writing " + out_dir + "/heatmaps.csv");
}

std::string svg_heatmap(const RealVector& values, std::size_t grid_cols, std::size_t cell_px) {
    if (values.empty()) throw ShapeError("svg_heatmap: no values");
    if (grid_cols == 0) throw ShapeError("svg_heatmap: zero columns");
    const std::size_t rows = (values.size() + grid_cols - 1) / grid_cols;
    double vmin = values[0], vmax = values[0];
    for (double v : values) {
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
    }
    const double span = vmax - vmin;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << grid_cols * cell_px
       << "\" height=\"" << rows * cell_px << "\">\n";
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double t = span > 0.0 ? (values[i] - vmin) / span : 0.5;
        // cold blue for low attention, warm red for high
        const std::string fill = t < 0.5 ? rgb_hex(2.0 * t, 42, 60, 140, 235, 235, 235)
                                         : rgb_hex(2.0 * t - 1.0, 235, 235, 235, 188, 57, 43);
        const std::size_t x = (i % grid_cols) * cell_px;
        const std::size_t y = (i / grid_cols) * cell_px;
        os << "  <rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_px << "\" height=\""
           << cell_px << "\" fill=\"" << fill << "\"><title>h_" << i << " = "
           << format_real(values[i]) << "</title></rect>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace otat
