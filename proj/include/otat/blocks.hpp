#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otat/matrix.hpp"
#include "otat/rng.hpp"

namespace otat {

// ---- parameters ------------------------------------------------------------

// Bottleneck adapter, applied in parallel to a frozen sub-block:
// out = x_main + alpha * gelu(x_prev * w_down) * w_up.
// alpha is a fixed scale hyperparameter, not trained.
struct AdapterParams {
    RealMatrix w_down;  // D x r
    RealMatrix w_up;    // r x D
    double alpha = 1.0;
};

// Cross-modal attention: text queries against per-image keys/values, the
// per-image attention outputs averaged and scaled by gamma. beta weighs the
// enriched stream in the block combination. Both scalars are trainable.
struct CmamParams {
    RealMatrix w_q;  // D x D
    RealMatrix w_k;  // D x D
    RealMatrix w_v;  // D x D
    double gamma = 0.1;
    double beta = 1.0;
};

struct LayerNormParams {
    RealVector gain;
    RealVector bias;
};

struct FrozenAttention {
    RealMatrix w_q, w_k, w_v, w_o;  // D x D each, single head
};

struct FrozenFfn {
    RealMatrix w1;  // D x H
    RealVector b1;
    RealMatrix w2;  // H x D
    RealVector b2;
};

// One encoder block. Vision blocks and plain text blocks carry adapters
// parallel to both MHSA and FFN; text blocks at or after the configured
// start layer replace the FFN-parallel adapter with the cross-modal module.
struct OtaBlockParams {
    FrozenAttention attn;
    FrozenFfn ffn;
    AdapterParams adapter;                     // parallel to MHSA
    std::optional<AdapterParams> ffn_adapter;  // parallel to FFN
    std::optional<CmamParams> cmam;
    LayerNormParams ln;
};

// ---- gradients (trainable leaves only) --------------------------------------

struct AdapterGrads {
    RealMatrix w_down, w_up;
};
struct CmamGrads {
    RealMatrix w_q, w_k, w_v;
    double gamma = 0.0;
    double beta = 0.0;
};
struct LayerNormGrads {
    RealVector gain, bias;
};
struct OtaBlockGrads {
    AdapterGrads adapter;
    std::optional<AdapterGrads> ffn_adapter;
    std::optional<CmamGrads> cmam;
    LayerNormGrads ln;
};

OtaBlockGrads make_grads(const OtaBlockParams& blk);

// ---- forward caches ----------------------------------------------------------

struct AttentionCache {
    RealMatrix q, k, v, weights;
};
struct AdapterCache {
    RealMatrix input, pre, act;
};
struct FfnCache {
    RealMatrix input, pre, act;
};
struct LayerNormCache {
    RealMatrix input;
    RealVector mean, inv_std;
};
struct CmamCache {
    RealMatrix input;  // t_res
    RealMatrix q;
    std::vector<RealMatrix> keys, vals, weights;
    RealMatrix agg;
};
struct BlockCache {
    AttentionCache attn;
    AdapterCache adapter;
    RealMatrix res;
    LayerNormCache ln;
    FfnCache ffn;
    std::optional<AdapterCache> ffn_adapter;
    std::optional<CmamCache> cmam;
    RealMatrix t_cmam;
};

// ---- primitive ops -----------------------------------------------------------

RealMatrix gelu(const RealMatrix& x);
RealMatrix gelu_grad(const RealMatrix& x);

RealMatrix attention_forward(const RealMatrix& x, const FrozenAttention& p, AttentionCache& c);
RealMatrix attention_backward(const RealMatrix& d_out, const AttentionCache& c,
                              const FrozenAttention& p);

RealMatrix adapter_forward(const RealMatrix& x_main, const RealMatrix& x_prev,
                           const AdapterParams& p, AdapterCache& c);
// returns d_x_prev; the x_main path is the identity, so its gradient is d_out
RealMatrix adapter_backward(const RealMatrix& d_out, const AdapterCache& c,
                            const AdapterParams& p, AdapterGrads& g);

RealMatrix layer_norm_forward(const RealMatrix& x, const LayerNormParams& p, LayerNormCache& c,
                              double eps = 1e-5);
RealMatrix layer_norm_backward(const RealMatrix& d_out, const LayerNormCache& c,
                               const LayerNormParams& p, LayerNormGrads& g, double eps = 1e-5);

RealMatrix ffn_forward(const RealMatrix& x, const FrozenFfn& p, FfnCache& c);
RealMatrix ffn_backward(const RealMatrix& d_out, const FfnCache& c, const FrozenFfn& p);

RealMatrix cmam_forward(const RealMatrix& t_res, std::span<const RealMatrix> images,
                        const CmamParams& p, CmamCache& c);
RealMatrix cmam_backward(const RealMatrix& d_out, std::span<const RealMatrix> images,
                         const CmamCache& c, const CmamParams& p, CmamGrads& g,
                         std::vector<RealMatrix>* d_images);

// ---- blocks ------------------------------------------------------------------

RealMatrix vision_block_forward(const RealMatrix& x, const OtaBlockParams& blk, BlockCache& c);
RealMatrix vision_block_backward(const RealMatrix& d_out, const BlockCache& c,
                                 const OtaBlockParams& blk, OtaBlockGrads& g);

RealMatrix text_block_forward(const RealMatrix& x, std::span<const RealMatrix> images,
                              const OtaBlockParams& blk, BlockCache& c);
RealMatrix text_block_backward(const RealMatrix& d_out, std::span<const RealMatrix> images,
                               const BlockCache& c, const OtaBlockParams& blk, OtaBlockGrads& g,
                               std::vector<RealMatrix>* d_images);

// ---- encoder stacks ----------------------------------------------------------

struct EncoderCache {
    std::vector<BlockCache> blocks;
};

RealMatrix encode_tokens(const RealMatrix& tokens, std::span<const OtaBlockParams> blocks,
                         std::span<const RealMatrix> cmam_images, EncoderCache& cache);
RealMatrix encode_backward(const RealMatrix& d_final, const EncoderCache& cache,
                           std::span<const OtaBlockParams> blocks,
                           std::span<const RealMatrix> cmam_images,
                           std::span<OtaBlockGrads> grads, std::vector<RealMatrix>* d_images);

struct PoolCache {
    std::size_t rows = 0;
    RealVector mean;        // pre-normalization mean token
    double norm = 0.0;
    RealVector normalized;  // unit global embedding
};

RealVector pooled_embedding(const RealMatrix& final_tokens, PoolCache& cache);
void pooled_embedding_backward(const RealVector& d_emb, const PoolCache& cache,
                               RealMatrix& d_tokens);

// ---- initialization ----------------------------------------------------------

FrozenAttention make_attention(Rng& rng, std::size_t dim);
FrozenFfn make_ffn(Rng& rng, std::size_t dim, std::size_t hidden);
// realizes f(x) = x through the gelu linear region; handy as a stub in tests
FrozenFfn make_identity_ffn(std::size_t dim);
AdapterParams make_adapter(Rng& rng, std::size_t dim, std::size_t rank, double alpha,
                           bool zero_up);
CmamParams make_cmam(Rng& rng, std::size_t dim, double gamma, double beta);
LayerNormParams make_layer_norm(std::size_t dim);

enum class BlockRole { Vision, TextPlain, TextCmam };

OtaBlockParams make_block(const Rng& rng, std::size_t dim, std::size_t rank, std::size_t hidden,
                          double alpha, BlockRole role, double gamma = 0.1, double beta = 1.0,
                          bool zero_up = true);

// ---- flat parameter access and the finite-difference harness ------------------

struct ParamView {
    std::string name;
    double* data = nullptr;
    std::size_t size = 0;
};

void collect_trainable(OtaBlockParams& blk, const std::string& prefix,
                       std::vector<ParamView>& out);
void collect_grads(OtaBlockGrads& g, const std::string& prefix, std::vector<ParamView>& out);

RealVector pack(std::span<const ParamView> views);
void unpack(std::span<ParamView> views, std::span<const double> flat);
void zero_views(std::span<ParamView> views);
std::size_t total_size(std::span<const ParamView> views);

// Central-difference check of an analytic gradient. loss() must read the
// parameters through the same views. Error metric per coordinate:
// |g_a - g_n| / max(1, |g_a|, |g_n|).
double grad_check(std::span<ParamView> params, const std::function<double()>& loss,
                  std::span<const double> analytic, double h);

}  // namespace otat
