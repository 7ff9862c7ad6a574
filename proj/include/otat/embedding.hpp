#pragma once

#include "otat/matrix.hpp"

namespace otat {

// A set of token embeddings for one item (image patches or text tokens),
// one token per row.
struct EmbeddingSet {
    RealMatrix data;

    EmbeddingSet() = default;
    explicit EmbeddingSet(RealMatrix m) : data(std::move(m)) {}
    EmbeddingSet(std::size_t tokens, std::size_t dim) : data(tokens, dim) {}

    std::size_t tokens() const { return data.rows; }
    std::size_t dim() const { return data.cols; }
};

}  // namespace otat
