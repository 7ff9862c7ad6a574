#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "otat/embedding.hpp"
#include "otat/matrix.hpp"

namespace otat {

// Few-shot episode recipe. Visual items carry visual_tokens dense tokens from
// a full-rank projection of the class latent; text carries text_tokens sparse
// tokens from a rank-limited projection plus two constant sentinel rows, so
// the text side provably holds less information whenever gap_rank < latent_dim.
struct EpisodeSpec {
    std::size_t n_classes = 5;
    std::size_t shots = 5;
    std::size_t queries = 20;
    std::size_t latent_dim = 8;
    std::size_t embed_dim = 16;
    std::size_t visual_tokens = 16;  // L1
    std::size_t text_tokens = 4;     // L2, sentinels not included
    double visual_noise = 0.5;
    double text_noise = 0.7;
    std::size_t gap_rank = 2;

    void validate() const;
};

struct LabeledSet {
    EmbeddingSet tokens;
    std::size_t label = 0;
};

struct Episode {
    EpisodeSpec spec;
    std::uint64_t seed = 0;
    RealMatrix latents;               // n_classes x latent_dim, unit rows
    std::vector<LabeledSet> support;  // class-major order
    std::vector<LabeledSet> query;
    std::vector<EmbeddingSet> text;   // per class, (text_tokens + 2) x embed_dim
};

Episode generate_episode(const EpisodeSpec& spec, std::uint64_t seed);

// Mutual cosine 1-NN rate between paired rows; ties resolve to the lowest
// index on both sides.
double mnn_alignment(const RealMatrix& image_rows, const RealMatrix& text_rows);

// Directory of golden matrices plus manifest.json for cross-language replay.
void export_episode(const Episode& episode, const std::string& dir);
Episode import_episode(const std::string& dir);

}  // namespace otat
