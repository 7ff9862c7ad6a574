#include "otat/blocks.hpp"

#include <cmath>
#include <numbers>

#include "otat/error.hpp"

namespace otat {

namespace {

RealMatrix add(const RealMatrix& a, const RealMatrix& b) {
    RealMatrix out = a;
    add_inplace(out, b);
    return out;
}

RealMatrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale) {
    RealMatrix m(r, c);
    for (double& v : m.data) v = scale * rng.normal();
    return m;
}

}  // namespace

RealMatrix gelu(const RealMatrix& x) {
    RealMatrix out = x;
    for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    return out;
}

RealMatrix gelu_grad(const RealMatrix& x) {
    RealMatrix out = x;
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (double& v : out.data) {
        const double z = v;
        v = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2)) +
            z * inv_sqrt2pi * std::exp(-0.5 * z * z);
    }
    return out;
}

RealMatrix attention_forward(const RealMatrix& x, const FrozenAttention& p, AttentionCache& c) {
    c.q = matmul(x, p.w_q);
    c.k = matmul(x, p.w_k);
    c.v = matmul(x, p.w_v);
    const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols));
    RealMatrix scores = matmul(c.q, transpose(c.k));
    for (double& s : scores.data) s *= scale;
    c.weights = softmax_rows(scores, 1.0);
    return matmul(matmul(c.weights, c.v), p.w_o);
}

RealMatrix attention_backward(const RealMatrix& d_out, const AttentionCache& c,
                              const FrozenAttention& p) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(c.q.cols));
    const RealMatrix d_ctx = matmul(d_out, transpose(p.w_o));
    const RealMatrix d_weights = matmul(d_ctx, transpose(c.v));
    const RealMatrix d_v = matmul(transpose(c.weights), d_ctx);
    RealMatrix d_scores = softmax_rows_backward(c.weights, d_weights);
    for (double& s : d_scores.data) s *= scale;
    const RealMatrix d_q = matmul(d_scores, c.k);
    const RealMatrix d_k = matmul(transpose(d_scores), c.q);
    RealMatrix d_x = matmul(d_q, transpose(p.w_q));
    add_inplace(d_x, matmul(d_k, transpose(p.w_k)));
    add_inplace(d_x, matmul(d_v, transpose(p.w_v)));
    return d_x;
}

RealMatrix adapter_forward(const RealMatrix& x_main, const RealMatrix& x_prev,
                           const AdapterParams& p, AdapterCache& c) {
    if (p.w_down.rows != x_prev.cols)
        throw ShapeError("adapter_forward: w_down does not match the token dimension");
    c.input = x_prev;
    c.pre = matmul(x_prev, p.w_down);
    c.act = gelu(c.pre);
    RealMatrix out = x_main;
    axpy_inplace(out, p.alpha, matmul(c.act, p.w_up));
    return out;
}

RealMatrix adapter_backward(const RealMatrix& d_out, const AdapterCache& c,
                            const AdapterParams& p, AdapterGrads& g) {
    add_inplace(g.w_up, scaled(matmul(transpose(c.act), d_out), p.alpha));
    RealMatrix d_act = scaled(matmul(d_out, transpose(p.w_up)), p.alpha);
    RealMatrix d_pre = d_act;
    const RealMatrix gg = gelu_grad(c.pre);
    for (std::size_t i = 0; i < d_pre.data.size(); ++i) d_pre.data[i] *= gg.data[i];
    add_inplace(g.w_down, matmul(transpose(c.input), d_pre));
    return matmul(d_pre, transpose(p.w_down));
}

RealMatrix layer_norm_forward(const RealMatrix& x, const LayerNormParams& p, LayerNormCache& c,
                              double eps) {
    if (p.gain.size() != x.cols || p.bias.size() != x.cols)
        throw ShapeError("layer_norm_forward: affine size mismatch");
    c.input = x;
    c.mean.assign(x.rows, 0.0);
    c.inv_std.assign(x.rows, 0.0);
    RealMatrix out(x.rows, x.cols);
    const double n = static_cast<double>(x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double mean = 0.0;
        for (const double v : x.row(i)) mean += v;
        mean /= n;
        double var = 0.0;
        for (const double v : x.row(i)) var += (v - mean) * (v - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        c.mean[i] = mean;
        c.inv_std[i] = inv;
        for (std::size_t j = 0; j < x.cols; ++j)
            out(i, j) = p.gain[j] * ((x(i, j) - mean) * inv) + p.bias[j];
    }
    return out;
}

RealMatrix layer_norm_backward(const RealMatrix& d_out, const LayerNormCache& c,
                               const LayerNormParams& p, LayerNormGrads& g, double /*eps*/) {
    const std::size_t cols = c.input.cols;
    const double n = static_cast<double>(cols);
    RealMatrix d_x(c.input.rows, cols);
    for (std::size_t i = 0; i < c.input.rows; ++i) {
        const double inv = c.inv_std[i];
        const double mean = c.mean[i];
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        RealVector xhat(cols), dxhat(cols);
        for (std::size_t j = 0; j < cols; ++j) {
            xhat[j] = (c.input(i, j) - mean) * inv;
            dxhat[j] = d_out(i, j) * p.gain[j];
            g.gain[j] += d_out(i, j) * xhat[j];
            g.bias[j] += d_out(i, j);
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xhat[j];
        }
        for (std::size_t j = 0; j < cols; ++j)
            d_x(i, j) = inv * (dxhat[j] - sum_dxhat / n - xhat[j] * sum_dxhat_xhat / n);
    }
    return d_x;
}

RealMatrix ffn_forward(const RealMatrix& x, const FrozenFfn& p, FfnCache& c) {
    c.input = x;
    c.pre = matmul(x, p.w1);
    for (std::size_t i = 0; i < c.pre.rows; ++i)
        for (std::size_t j = 0; j < c.pre.cols; ++j) c.pre(i, j) += p.b1[j];
    c.act = gelu(c.pre);
    RealMatrix out = matmul(c.act, p.w2);
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += p.b2[j];
    return out;
}

RealMatrix ffn_backward(const RealMatrix& d_out, const FfnCache& c, const FrozenFfn& p) {
    RealMatrix d_pre = matmul(d_out, transpose(p.w2));
    const RealMatrix gg = gelu_grad(c.pre);
    for (std::size_t i = 0; i < d_pre.data.size(); ++i) d_pre.data[i] *= gg.data[i];
    return matmul(d_pre, transpose(p.w1));
}

RealMatrix cmam_forward(const RealMatrix& t_res, std::span<const RealMatrix> images,
                        const CmamParams& p, CmamCache& c) {
    if (images.empty())
        throw DegenerateInputError("cmam_forward: needs at least one image token set");
    const std::size_t n_img = images.size();
    c.input = t_res;
    c.q = matmul(t_res, p.w_q);
    c.keys.assign(n_img, {});
    c.vals.assign(n_img, {});
    c.weights.assign(n_img, {});
    c.agg = RealMatrix(t_res.rows, t_res.cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(t_res.cols));
    for (std::size_t im = 0; im < n_img; ++im) {
        c.keys[im] = matmul(images[im], p.w_k);
        c.vals[im] = matmul(images[im], p.w_v);
        RealMatrix scores = matmul(c.q, transpose(c.keys[im]));
        for (double& s : scores.data) s *= scale;
        c.weights[im] = softmax_rows(scores, 1.0);
        axpy_inplace(c.agg, 1.0 / static_cast<double>(n_img),
                     matmul(c.weights[im], c.vals[im]));
    }
    RealMatrix out = t_res;
    axpy_inplace(out, p.gamma, c.agg);
    return out;
}

RealMatrix cmam_backward(const RealMatrix& d_out, std::span<const RealMatrix> images,
                         const CmamCache& c, const CmamParams& p, CmamGrads& g,
                         std::vector<RealMatrix>* d_images) {
    const std::size_t n_img = images.size();
    const double inv_n = 1.0 / static_cast<double>(n_img);
    const double scale = 1.0 / std::sqrt(static_cast<double>(c.input.cols));

    for (std::size_t i = 0; i < d_out.data.size(); ++i) g.gamma += d_out.data[i] * c.agg.data[i];

    RealMatrix d_q(c.q.rows, c.q.cols);
    RealMatrix d_t_res = d_out;
    for (std::size_t im = 0; im < n_img; ++im) {
        // agg += inv_n * weights * vals, scaled into the output by gamma
        RealMatrix d_av = scaled(d_out, p.gamma * inv_n);
        RealMatrix d_weights = matmul(d_av, transpose(c.vals[im]));
        RealMatrix d_vals = matmul(transpose(c.weights[im]), d_av);
        RealMatrix d_scores = softmax_rows_backward(c.weights[im], d_weights);
        for (double& s : d_scores.data) s *= scale;
        add_inplace(d_q, matmul(d_scores, c.keys[im]));
        RealMatrix d_keys = matmul(transpose(d_scores), c.q);
        add_inplace(g.w_k, matmul(transpose(images[im]), d_keys));
        add_inplace(g.w_v, matmul(transpose(images[im]), d_vals));
        if (d_images) {
            RealMatrix d_img = matmul(d_keys, transpose(p.w_k));
            add_inplace(d_img, matmul(d_vals, transpose(p.w_v)));
            add_inplace((*d_images)[im], d_img);
        }
    }
    add_inplace(g.w_q, matmul(transpose(c.input), d_q));
    add_inplace(d_t_res, matmul(d_q, transpose(p.w_q)));
    return d_t_res;
}

namespace {

RealMatrix block_forward_impl(const RealMatrix& x, std::span<const RealMatrix> images,
                              const OtaBlockParams& blk, BlockCache& c) {
    RealMatrix res = add(x, attention_forward(x, blk.attn, c.attn));
    res = adapter_forward(res, x, blk.adapter, c.adapter);
    c.res = res;
    const RealMatrix ln_out = layer_norm_forward(res, blk.ln, c.ln);
    const RealMatrix ffn_out = ffn_forward(ln_out, blk.ffn, c.ffn);
    if (blk.cmam) {
        c.cmam.emplace();
        c.t_cmam = cmam_forward(res, images, *blk.cmam, *c.cmam);
        RealMatrix out = ffn_out;
        axpy_inplace(out, blk.cmam->beta, c.t_cmam);
        return out;
    }
    RealMatrix out = add(res, ffn_out);
    if (blk.ffn_adapter) {
        c.ffn_adapter.emplace();
        out = adapter_forward(out, res, *blk.ffn_adapter, *c.ffn_adapter);
    }
    return out;
}

RealMatrix block_backward_impl(const RealMatrix& d_out, std::span<const RealMatrix> images,
                               const BlockCache& c, const OtaBlockParams& blk, OtaBlockGrads& g,
                               std::vector<RealMatrix>* d_images) {
    RealMatrix d_res(c.res.rows, c.res.cols);
    if (blk.cmam) {
        for (std::size_t i = 0; i < d_out.data.size(); ++i)
            g.cmam->beta += d_out.data[i] * c.t_cmam.data[i];
        const RealMatrix d_t_cmam = scaled(d_out, blk.cmam->beta);
        add_inplace(d_res, cmam_backward(d_t_cmam, images, *c.cmam, *blk.cmam, *g.cmam,
                                         d_images));
    } else {
        add_inplace(d_res, d_out);
        if (blk.ffn_adapter)
            add_inplace(d_res, adapter_backward(d_out, *c.ffn_adapter, *blk.ffn_adapter,
                                                *g.ffn_adapter));
    }
    const RealMatrix d_ln_out = ffn_backward(d_out, c.ffn, blk.ffn);
    add_inplace(d_res, layer_norm_backward(d_ln_out, c.ln, blk.ln, g.ln));

    // res = x + attention(x) + alpha * adapter(x)
    RealMatrix d_x = d_res;
    add_inplace(d_x, adapter_backward(d_res, c.adapter, blk.adapter, g.adapter));
    add_inplace(d_x, attention_backward(d_res, c.attn, blk.attn));
    return d_x;
}

}  // namespace

RealMatrix vision_block_forward(const RealMatrix& x, const OtaBlockParams& blk, BlockCache& c) {
    if (blk.cmam) throw StateError("vision_block_forward: vision blocks cannot carry cmam");
    return block_forward_impl(x, {}, blk, c);
}

RealMatrix vision_block_backward(const RealMatrix& d_out, const BlockCache& c,
                                 const OtaBlockParams& blk, OtaBlockGrads& g) {
    return block_backward_impl(d_out, {}, c, blk, g, nullptr);
}

RealMatrix text_block_forward(const RealMatrix& x, std::span<const RealMatrix> images,
                              const OtaBlockParams& blk, BlockCache& c) {
    if (blk.cmam && blk.ffn_adapter)
        throw StateError("text_block_forward: cmam replaces the ffn adapter");
    return block_forward_impl(x, images, blk, c);
}

RealMatrix text_block_backward(const RealMatrix& d_out, std::span<const RealMatrix> images,
                               const BlockCache& c, const OtaBlockParams& blk, OtaBlockGrads& g,
                               std::vector<RealMatrix>* d_images) {
    return block_backward_impl(d_out, images, c, blk, g, d_images);
}

RealMatrix encode_tokens(const RealMatrix& tokens, std::span<const OtaBlockParams> blocks,
                         std::span<const RealMatrix> cmam_images, EncoderCache& cache) {
    cache.blocks.assign(blocks.size(), {});
    RealMatrix x = tokens;
    for (std::size_t l = 0; l < blocks.size(); ++l)
        x = block_forward_impl(x, cmam_images, blocks[l], cache.blocks[l]);
    return x;
}

RealMatrix encode_backward(const RealMatrix& d_final, const EncoderCache& cache,
                           std::span<const OtaBlockParams> blocks,
                           std::span<const RealMatrix> cmam_images,
                           std::span<OtaBlockGrads> grads, std::vector<RealMatrix>* d_images) {
    if (cache.blocks.size() != blocks.size() || grads.size() != blocks.size())
        throw ShapeError("encode_backward: cache/grads do not match the block stack");
    RealMatrix d_x = d_final;
    for (std::size_t l = blocks.size(); l-- > 0;)
        d_x = block_backward_impl(d_x, cmam_images, cache.blocks[l], blocks[l], grads[l],
                                  d_images);
    return d_x;
}

RealVector pooled_embedding(const RealMatrix& final_tokens, PoolCache& cache) {
    cache.rows = final_tokens.rows;
    cache.mean = mean_rows(final_tokens);
    cache.norm = norm2(cache.mean);
    if (cache.norm == 0.0)
        throw DegenerateInputError("pooled_embedding: mean token has zero norm");
    cache.normalized = cache.mean;
    for (double& v : cache.normalized) v /= cache.norm;
    return cache.normalized;
}

void pooled_embedding_backward(const RealVector& d_emb, const PoolCache& cache,
                               RealMatrix& d_tokens) {
    const std::size_t dim = cache.mean.size();
    if (d_tokens.cols != dim || d_tokens.rows != cache.rows)
        throw ShapeError("pooled_embedding_backward: token gradient shape mismatch");
    const double proj = dot(d_emb, cache.normalized);
    RealVector d_mean(dim);
    for (std::size_t j = 0; j < dim; ++j)
        d_mean[j] = (d_emb[j] - proj * cache.normalized[j]) / cache.norm;
    const double inv_rows = 1.0 / static_cast<double>(cache.rows);
    for (std::size_t i = 0; i < cache.rows; ++i)
        for (std::size_t j = 0; j < dim; ++j) d_tokens(i, j) += d_mean[j] * inv_rows;
}

// ---- initialization ----------------------------------------------------------

FrozenAttention make_attention(Rng& rng, std::size_t dim) {
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));
    FrozenAttention p;
    p.w_q = random_matrix(rng, dim, dim, s);
    p.w_k = random_matrix(rng, dim, dim, s);
    p.w_v = random_matrix(rng, dim, dim, s);
    p.w_o = random_matrix(rng, dim, dim, s);
    return p;
}

FrozenFfn make_ffn(Rng& rng, std::size_t dim, std::size_t hidden) {
    FrozenFfn p;
    p.w1 = random_matrix(rng, dim, hidden, 1.0 / std::sqrt(static_cast<double>(dim)));
    p.b1.assign(hidden, 0.0);
    p.w2 = random_matrix(rng, hidden, dim, 1.0 / std::sqrt(static_cast<double>(hidden)));
    p.b2.assign(dim, 0.0);
    return p;
}

FrozenFfn make_identity_ffn(std::size_t dim) {
    // gelu(x + 10) = x + 10 up to ~1e-22 for |x| of order one
    FrozenFfn p;
    p.w1 = RealMatrix::identity(dim);
    p.b1.assign(dim, 10.0);
    p.w2 = RealMatrix::identity(dim);
    p.b2.assign(dim, -10.0);
    return p;
}

AdapterParams make_adapter(Rng& rng, std::size_t dim, std::size_t rank, double alpha,
                           bool zero_up) {
    if (rank == 0 || rank >= dim)
        throw ConfigError("adapter rank must satisfy 0 < r < D, got r=" + std::to_string(rank) +
                          " D=" + std::to_string(dim));
    AdapterParams p;
    p.alpha = alpha;
    p.w_down = random_matrix(rng, dim, rank, 1.0 / std::sqrt(static_cast<double>(dim)));
    p.w_up = zero_up ? RealMatrix(rank, dim)
                     : random_matrix(rng, rank, dim, 1.0 / std::sqrt(static_cast<double>(rank)));
    return p;
}

CmamParams make_cmam(Rng& rng, std::size_t dim, double gamma, double beta) {
    const double s = 1.0 / std::sqrt(static_cast<double>(dim));
    CmamParams p;
    p.w_q = random_matrix(rng, dim, dim, s);
    p.w_k = random_matrix(rng, dim, dim, s);
    p.w_v = random_matrix(rng, dim, dim, s);
    p.gamma = gamma;
    p.beta = beta;
    return p;
}

LayerNormParams make_layer_norm(std::size_t dim) {
    LayerNormParams p;
    p.gain.assign(dim, 1.0);
    p.bias.assign(dim, 0.0);
    return p;
}

OtaBlockParams make_block(const Rng& rng, std::size_t dim, std::size_t rank, std::size_t hidden,
                          double alpha, BlockRole role, double gamma, double beta, bool zero_up) {
    // per-component substreams keep the frozen backbone and the adapter
    // draws identical across roles, so ablation arms share weights
    OtaBlockParams blk;
    Rng attn_rng = rng.derive("attn");
    Rng ffn_rng = rng.derive("ffn");
    Rng adapter_rng = rng.derive("adapter");
    blk.attn = make_attention(attn_rng, dim);
    blk.ffn = make_ffn(ffn_rng, dim, hidden);
    blk.adapter = make_adapter(adapter_rng, dim, rank, alpha, zero_up);
    blk.ln = make_layer_norm(dim);
    if (role == BlockRole::TextCmam) {
        Rng cmam_rng = rng.derive("cmam");
        blk.cmam = make_cmam(cmam_rng, dim, gamma, beta);
    } else {
        Rng ffn_adapter_rng = rng.derive("ffn_adapter");
        blk.ffn_adapter = make_adapter(ffn_adapter_rng, dim, rank, alpha, zero_up);
    }
    return blk;
}

OtaBlockGrads make_grads(const OtaBlockParams& blk) {
    OtaBlockGrads g;
    g.adapter.w_down = RealMatrix(blk.adapter.w_down.rows, blk.adapter.w_down.cols);
    g.adapter.w_up = RealMatrix(blk.adapter.w_up.rows, blk.adapter.w_up.cols);
    if (blk.ffn_adapter) {
        g.ffn_adapter.emplace();
        g.ffn_adapter->w_down =
            RealMatrix(blk.ffn_adapter->w_down.rows, blk.ffn_adapter->w_down.cols);
        g.ffn_adapter->w_up = RealMatrix(blk.ffn_adapter->w_up.rows, blk.ffn_adapter->w_up.cols);
    }
    if (blk.cmam) {
        g.cmam.emplace();
        g.cmam->w_q = RealMatrix(blk.cmam->w_q.rows, blk.cmam->w_q.cols);
        g.cmam->w_k = RealMatrix(blk.cmam->w_k.rows, blk.cmam->w_k.cols);
        g.cmam->w_v = RealMatrix(blk.cmam->w_v.rows, blk.cmam->w_v.cols);
    }
    g.ln.gain.assign(blk.ln.gain.size(), 0.0);
    g.ln.bias.assign(blk.ln.bias.size(), 0.0);
    return g;
}

// ---- flat parameter plumbing ---------------------------------------------------

void collect_trainable(OtaBlockParams& blk, const std::string& prefix,
                       std::vector<ParamView>& out) {
    out.push_back({prefix + ".adapter.w_down", blk.adapter.w_down.data.data(),
                   blk.adapter.w_down.data.size()});
    out.push_back(
        {prefix + ".adapter.w_up", blk.adapter.w_up.data.data(), blk.adapter.w_up.data.size()});
    if (blk.ffn_adapter) {
        out.push_back({prefix + ".ffn_adapter.w_down", blk.ffn_adapter->w_down.data.data(),
                       blk.ffn_adapter->w_down.data.size()});
        out.push_back({prefix + ".ffn_adapter.w_up", blk.ffn_adapter->w_up.data.data(),
                       blk.ffn_adapter->w_up.data.size()});
    }
    if (blk.cmam) {
        out.push_back({prefix + ".cmam.w_q", blk.cmam->w_q.data.data(),
                       blk.cmam->w_q.data.size()});
        out.push_back({prefix + ".cmam.w_k", blk.cmam->w_k.data.data(),
                       blk.cmam->w_k.data.size()});
        out.push_back({prefix + ".cmam.w_v", blk.cmam->w_v.data.data(),
                       blk.cmam->w_v.data.size()});
        out.push_back({prefix + ".cmam.gamma", &blk.cmam->gamma, 1});
        out.push_back({prefix + ".cmam.beta", &blk.cmam->beta, 1});
    }
    out.push_back({prefix + ".ln.gain", blk.ln.gain.data(), blk.ln.gain.size()});
    out.push_back({prefix + ".ln.bias", blk.ln.bias.data(), blk.ln.bias.size()});
}

void collect_grads(OtaBlockGrads& g, const std::string& prefix, std::vector<ParamView>& out) {
    out.push_back(
        {prefix + ".adapter.w_down", g.adapter.w_down.data.data(), g.adapter.w_down.data.size()});
    out.push_back(
        {prefix + ".adapter.w_up", g.adapter.w_up.data.data(), g.adapter.w_up.data.size()});
    if (g.ffn_adapter) {
        out.push_back({prefix + ".ffn_adapter.w_down", g.ffn_adapter->w_down.data.data(),
                       g.ffn_adapter->w_down.data.size()});
        out.push_back({prefix + ".ffn_adapter.w_up", g.ffn_adapter->w_up.data.data(),
                       g.ffn_adapter->w_up.data.size()});
    }
    if (g.cmam) {
        out.push_back({prefix + ".cmam.w_q", g.cmam->w_q.data.data(), g.cmam->w_q.data.size()});
        out.push_back({prefix + ".cmam.w_k", g.cmam->w_k.data.data(), g.cmam->w_k.data.size()});
        out.push_back({prefix + ".cmam.w_v", g.cmam->w_v.data.data(), g.cmam->w_v.data.size()});
        out.push_back({prefix + ".cmam.gamma", &g.cmam->gamma, 1});
        out.push_back({prefix + ".cmam.beta", &g.cmam->beta, 1});
    }
    out.push_back({prefix + ".ln.gain", g.ln.gain.data(), g.ln.gain.size()});
    out.push_back({prefix + ".ln.bias", g.ln.bias.data(), g.ln.bias.size()});
}

std::size_t total_size(std::span<const ParamView> views) {
    std::size_t n = 0;
    for (const auto& v : views) n += v.size;
    return n;
}

RealVector pack(std::span<const ParamView> views) {
    RealVector flat;
    flat.reserve(total_size(views));
    for (const auto& v : views) flat.insert(flat.end(), v.data, v.data + v.size);
    return flat;
}

void unpack(std::span<ParamView> views, std::span<const double> flat) {
    if (flat.size() != total_size(views)) throw ShapeError("unpack: flat size mismatch");
    std::size_t off = 0;
    for (auto& v : views) {
        for (std::size_t i = 0; i < v.size; ++i) v.data[i] = flat[off + i];
        off += v.size;
    }
}

void zero_views(std::span<ParamView> views) {
    for (auto& v : views)
        for (std::size_t i = 0; i < v.size; ++i) v.data[i] = 0.0;
}

double grad_check(std::span<ParamView> params, const std::function<double()>& loss,
                  std::span<const double> analytic, double h) {
    if (h <= 0.0) throw DomainError("grad_check: step must be positive");
    if (analytic.size() != total_size(params))
        throw ShapeError("grad_check: analytic gradient length mismatch");
    double worst = 0.0;
    std::size_t off = 0;
    for (auto& view : params) {
        for (std::size_t i = 0; i < view.size; ++i) {
            const double saved = view.data[i];
            view.data[i] = saved + h;
            const double up = loss();
            view.data[i] = saved - h;
            const double down = loss();
            view.data[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double ga = analytic[off + i];
            const double err = std::abs(ga - numeric) / std::max({1.0, std::abs(ga),
                                                                  std::abs(numeric)});
            worst = std::max(worst, err);
        }
        off += view.size;
    }
    return worst;
}

}  // namespace otat
