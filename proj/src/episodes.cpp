#include "otat/episodes.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "otat/error.hpp"
#include "otat/rng.hpp"

namespace otat {

namespace {

constexpr double kSeparationLimit = 0.8;
constexpr std::size_t kPlacementRetries = 1000;
constexpr double kSentinelScale = 0.1;

RealMatrix gaussian(Rng& rng, std::size_t r, std::size_t c) {
    RealMatrix m(r, c);
    for (double& v : m.data) v = rng.normal();
    return m;
}

// Gram-Schmidt over columns; callers keep cols <= rows so a Gaussian draw is
// full column rank almost surely.
RealMatrix orthonormal_columns(Rng& rng, std::size_t rows, std::size_t cols) {
    RealMatrix m = gaussian(rng, rows, cols);
    for (std::size_t j = 0; j < cols; ++j) {
        for (std::size_t prev = 0; prev < j; ++prev) {
            double proj = 0.0;
            for (std::size_t i = 0; i < rows; ++i) proj += m(i, j) * m(i, prev);
            for (std::size_t i = 0; i < rows; ++i) m(i, j) -= proj * m(i, prev);
        }
        double n = 0.0;
        for (std::size_t i = 0; i < rows; ++i) n += m(i, j) * m(i, j);
        n = std::sqrt(n);
        if (n < 1e-12) throw GenerationError("orthonormal basis draw degenerated");
        for (std::size_t i = 0; i < rows; ++i) m(i, j) /= n;
    }
    return m;
}

std::string item_path(const std::string& dir, const char* stem, std::size_t idx) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03zu.mtx", stem, idx);
    return dir + "/" + buf;
}

}  // namespace

void EpisodeSpec::validate() const {
    if (n_classes == 0) throw ConfigError("episode: n_classes must be at least 1");
    if (shots == 0) throw ConfigError("episode: shots must be at least 1");
    if (latent_dim == 0) throw ConfigError("episode: latent_dim must be positive");
    if (embed_dim < latent_dim)
        throw ConfigError("episode: embed_dim must be at least latent_dim");
    if (visual_tokens == 0 || text_tokens == 0)
        throw ConfigError("episode: token counts must be positive");
    if (visual_tokens <= text_tokens)
        throw ConfigError("episode: visual_tokens must exceed text_tokens");
    if (gap_rank == 0 || gap_rank > latent_dim)
        throw ConfigError("episode: gap_rank must lie in [1, latent_dim]");
    if (visual_noise < 0.0 || text_noise < 0.0)
        throw ConfigError("episode: noise levels must be nonnegative");
}

Episode generate_episode(const EpisodeSpec& spec, std::uint64_t seed) {
    spec.validate();
    const Rng root(seed);
    Episode ep;
    ep.spec = spec;
    ep.seed = seed;

    // class latents: unit vectors, pairwise cosine below the separation limit
    {
        Rng rng = root.derive("latents");
        ep.latents = RealMatrix(spec.n_classes, spec.latent_dim);
        std::size_t attempts = 0;
        for (std::size_t c = 0; c < spec.n_classes;) {
            if (attempts++ > kPlacementRetries)
                throw GenerationError("could not place " + std::to_string(spec.n_classes) +
                                      " latents with pairwise cosine < " +
                                      format_real(kSeparationLimit));
            RealVector z(spec.latent_dim);
            for (double& v : z) v = rng.normal();
            const double n = norm2(z);
            if (n < 1e-12) continue;
            for (double& v : z) v /= n;
            bool ok = true;
            for (std::size_t prev = 0; prev < c && ok; ++prev)
                ok = dot(z, ep.latents.row(prev)) < kSeparationLimit;
            if (!ok) continue;
            std::copy(z.begin(), z.end(), ep.latents.row(c).begin());
            ++c;
        }
    }

    // one shared isometric embedding keeps latent geometry intact; the text
    // side first passes through a rank-limited projector in latent space
    Rng proj_rng = root.derive("projection");
    const RealMatrix embed = orthonormal_columns(proj_rng, spec.embed_dim, spec.latent_dim);
    Rng basis_rng = root.derive("rank_basis");
    const RealMatrix basis = orthonormal_columns(basis_rng, spec.latent_dim, spec.latent_dim);

    auto embed_latent = [&](std::span<const double> z) {
        RealVector out(spec.embed_dim, 0.0);
        for (std::size_t i = 0; i < spec.embed_dim; ++i)
            for (std::size_t j = 0; j < spec.latent_dim; ++j) out[i] += embed(i, j) * z[j];
        return out;
    };
    auto rank_project = [&](std::span<const double> z) {
        RealVector coeff(spec.gap_rank, 0.0);
        for (std::size_t r = 0; r < spec.gap_rank; ++r)
            for (std::size_t j = 0; j < spec.latent_dim; ++j) coeff[r] += basis(j, r) * z[j];
        RealVector out(spec.latent_dim, 0.0);
        for (std::size_t j = 0; j < spec.latent_dim; ++j)
            for (std::size_t r = 0; r < spec.gap_rank; ++r) out[j] += basis(j, r) * coeff[r];
        return out;
    };

    Rng sentinel_rng = root.derive("sentinels");
    RealMatrix sentinels = gaussian(sentinel_rng, 2, spec.embed_dim);
    for (double& v : sentinels.data) v *= kSentinelScale;

    auto make_visual = [&](std::size_t cls, Rng rng) {
        const RealVector center = embed_latent(ep.latents.row(cls));
        EmbeddingSet set(spec.visual_tokens, spec.embed_dim);
        for (std::size_t t = 0; t < spec.visual_tokens; ++t)
            for (std::size_t d = 0; d < spec.embed_dim; ++d)
                set.data(t, d) = center[d] + spec.visual_noise * rng.normal();
        return set;
    };

    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        for (std::size_t s = 0; s < spec.shots; ++s)
            ep.support.push_back(
                {make_visual(c, root.derive("support", c * spec.shots + s)), c});
        for (std::size_t q = 0; q < spec.queries; ++q)
            ep.query.push_back({make_visual(c, root.derive("query", c * spec.queries + q)), c});

        Rng text_rng = root.derive("text", c);
        const RealVector center = embed_latent(rank_project(ep.latents.row(c)));
        EmbeddingSet text(spec.text_tokens + 2, spec.embed_dim);
        for (std::size_t d = 0; d < spec.embed_dim; ++d) text.data(0, d) = sentinels(0, d);
        for (std::size_t t = 0; t < spec.text_tokens; ++t)
            for (std::size_t d = 0; d < spec.embed_dim; ++d)
                text.data(1 + t, d) = center[d] + spec.text_noise * text_rng.normal();
        for (std::size_t d = 0; d < spec.embed_dim; ++d)
            text.data(spec.text_tokens + 1, d) = sentinels(1, d);
        ep.text.push_back(std::move(text));
    }
    return ep;
}

double mnn_alignment(const RealMatrix& image_rows, const RealMatrix& text_rows) {
    if (image_rows.rows == 0 || text_rows.rows == 0)
        throw DegenerateInputError("mnn_alignment: empty input");
    if (image_rows.rows != text_rows.rows || image_rows.cols != text_rows.cols)
        throw ShapeError("mnn_alignment: paired rows must have matching shapes");
    const std::size_t n = image_rows.rows;

    auto nearest = [&](const RealMatrix& from, const RealMatrix& to, std::size_t i) {
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double sim = cosine_similarity(from.row(i), to.row(j));
            if (sim > best_sim) {
                best_sim = sim;
                best = j;
            }
        }
        return best;
    };

    std::size_t mutual = 0;
    std::vector<std::size_t> img_to_txt(n), txt_to_img(n);
    for (std::size_t i = 0; i < n; ++i) img_to_txt[i] = nearest(image_rows, text_rows, i);
    for (std::size_t j = 0; j < n; ++j) txt_to_img[j] = nearest(text_rows, image_rows, j);
    for (std::size_t i = 0; i < n; ++i)
        if (img_to_txt[i] == i && txt_to_img[i] == i) ++mutual;
    return static_cast<double>(mutual) / static_cast<double>(n);
}

void export_episode(const Episode& episode, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["seed"] = episode.seed;
    manifest["spec"] = {{"n_classes", episode.spec.n_classes},
                        {"shots", episode.spec.shots},
                        {"queries", episode.spec.queries},
                        {"latent_dim", episode.spec.latent_dim},
                        {"embed_dim", episode.spec.embed_dim},
                        {"visual_tokens", episode.spec.visual_tokens},
                        {"text_tokens", episode.spec.text_tokens},
                        {"visual_noise", episode.spec.visual_noise},
                        {"text_noise", episode.spec.text_noise},
                        {"gap_rank", episode.spec.gap_rank}};
    std::vector<std::size_t> support_labels, query_labels;
    for (const auto& s : episode.support) support_labels.push_back(s.label);
    for (const auto& q : episode.query) query_labels.push_back(q.label);
    manifest["support_labels"] = support_labels;
    manifest["query_labels"] = query_labels;

    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw IoError("cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";

    write_matrix(dir + "/latents.mtx", episode.latents);
    for (std::size_t i = 0; i < episode.support.size(); ++i)
        write_matrix(item_path(dir, "support", i), episode.support[i].tokens.data);
    for (std::size_t i = 0; i < episode.query.size(); ++i)
        write_matrix(item_path(dir, "query", i), episode.query[i].tokens.data);
    for (std::size_t i = 0; i < episode.text.size(); ++i)
        write_matrix(item_path(dir, "text", i), episode.text[i].data);
}

Episode import_episode(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw IoError("cannot read manifest in " + dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad manifest in " + dir + ": " + e.what());
    }

    Episode ep;
    const auto& spec = manifest.at("spec");
    ep.spec.n_classes = spec.at("n_classes").get<std::size_t>();
    ep.spec.shots = spec.at("shots").get<std::size_t>();
    ep.spec.queries = spec.at("queries").get<std::size_t>();
    ep.spec.latent_dim = spec.at("latent_dim").get<std::size_t>();
    ep.spec.embed_dim = spec.at("embed_dim").get<std::size_t>();
    ep.spec.visual_tokens = spec.at("visual_tokens").get<std::size_t>();
    ep.spec.text_tokens = spec.at("text_tokens").get<std::size_t>();
    ep.spec.visual_noise = spec.at("visual_noise").get<double>();
    ep.spec.text_noise = spec.at("text_noise").get<double>();
    ep.spec.gap_rank = spec.at("gap_rank").get<std::size_t>();
    ep.seed = manifest.at("seed").get<std::uint64_t>();

    ep.latents = read_matrix(dir + "/latents.mtx");
    const auto support_labels = manifest.at("support_labels").get<std::vector<std::size_t>>();
    const auto query_labels = manifest.at("query_labels").get<std::vector<std::size_t>>();
    for (std::size_t i = 0; i < support_labels.size(); ++i)
        ep.support.push_back(
            {EmbeddingSet(read_matrix(item_path(dir, "support", i))), support_labels[i]});
    for (std::size_t i = 0; i < query_labels.size(); ++i)
        ep.query.push_back(
            {EmbeddingSet(read_matrix(item_path(dir, "query", i))), query_labels[i]});
    for (std::size_t c = 0; c < ep.spec.n_classes; ++c)
        ep.text.emplace_back(read_matrix(item_path(dir, "text", c)));
    return ep;
}

}  // namespace otat
