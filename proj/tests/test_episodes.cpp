#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "otat/episodes.hpp"
#include "otat/error.hpp"
#include "otat/matrix.hpp"
#include "otat/rng.hpp"

using namespace otat;

namespace {

EpisodeSpec small_spec() {
    EpisodeSpec s;
    s.n_classes = 3;
    s.shots = 2;
    s.queries = 4;
    s.latent_dim = 4;
    s.embed_dim = 8;
    s.visual_tokens = 6;
    s.text_tokens = 3;
    s.visual_noise = 0.3;
    s.text_noise = 0.4;
    s.gap_rank = 2;
    return s;
}

// class center as seen by the episode's isometric embedding, recovered from
// the noiseless generator output itself
RealVector first_token(const EmbeddingSet& set) {
    RealVector out(set.dim());
    for (std::size_t d = 0; d < set.dim(); ++d) out[d] = set.data(0, d);
    return out;
}

}  // namespace

TEST_CASE("episode generation is bit-reproducible per seed") {
    const EpisodeSpec spec = small_spec();
    const Episode a = generate_episode(spec, 123);
    const Episode b = generate_episode(spec, 123);
    CHECK(max_abs_diff(a.latents, b.latents) == 0.0);
    REQUIRE(a.support.size() == b.support.size());
    for (std::size_t i = 0; i < a.support.size(); ++i) {
        CHECK(a.support[i].label == b.support[i].label);
        CHECK(max_abs_diff(a.support[i].tokens.data, b.support[i].tokens.data) == 0.0);
    }
    for (std::size_t i = 0; i < a.query.size(); ++i)
        CHECK(max_abs_diff(a.query[i].tokens.data, b.query[i].tokens.data) == 0.0);
    for (std::size_t c = 0; c < a.text.size(); ++c)
        CHECK(max_abs_diff(a.text[c].data, b.text[c].data) == 0.0);

    const Episode other = generate_episode(spec, 124);
    CHECK(max_abs_diff(a.latents, other.latents) > 0.0);
}

TEST_CASE("episode sizes, labels and token layout") {
    EpisodeSpec spec = small_spec();
    spec.queries = 0;  // support-only episode is legal
    spec.shots = 1;
    const Episode ep = generate_episode(spec, 7);
    CHECK(ep.support.size() == spec.n_classes);
    CHECK(ep.query.empty());
    CHECK(ep.text.size() == spec.n_classes);
    for (std::size_t c = 0; c < spec.n_classes; ++c) {
        CHECK(ep.support[c].label == c);  // class-major order
        CHECK(ep.support[c].tokens.tokens() == spec.visual_tokens);
        CHECK(ep.support[c].tokens.dim() == spec.embed_dim);
        CHECK(ep.text[c].tokens() == spec.text_tokens + 2);
        CHECK(ep.text[c].dim() == spec.embed_dim);
    }

    const Episode full = generate_episode(small_spec(), 7);
    std::vector<std::size_t> support_counts(3, 0), query_counts(3, 0);
    for (const auto& s : full.support) ++support_counts[s.label];
    for (const auto& q : full.query) ++query_counts[q.label];
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(support_counts[c] == 2);
        CHECK(query_counts[c] == 4);
    }
}

TEST_CASE("latents are unit rows with bounded pairwise cosine") {
    const Episode ep = generate_episode(small_spec(), 77);
    for (std::size_t c = 0; c < ep.latents.rows; ++c)
        CHECK(std::abs(norm2(ep.latents.row(c)) - 1.0) < 1e-12);
    for (std::size_t a = 0; a < ep.latents.rows; ++a)
        for (std::size_t b = a + 1; b < ep.latents.rows; ++b)
            CHECK(dot(ep.latents.row(a), ep.latents.row(b)) < 0.8);
}

TEST_CASE("impossible separation request fails loudly") {
    EpisodeSpec spec = small_spec();
    spec.n_classes = 40;
    spec.latent_dim = 2;
    spec.embed_dim = 8;
    CHECK_THROWS_AS(generate_episode(spec, 5), GenerationError);
}

TEST_CASE("spec validation rejects inconsistent recipes") {
    EpisodeSpec s = small_spec();
    s.n_classes = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small_spec();
    s.shots = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small_spec();
    s.embed_dim = 2;  // smaller than latent_dim
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small_spec();
    s.visual_tokens = s.text_tokens;  // text may not carry as many tokens
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small_spec();
    s.gap_rank = 0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small_spec();
    s.gap_rank = s.latent_dim + 1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = small_spec();
    s.visual_noise = -0.1;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("noiseless episodes put every item exactly on its class center") {
    EpisodeSpec spec = small_spec();
    spec.visual_noise = 0.0;
    const Episode ep = generate_episode(spec, 31);

    // all tokens of an item coincide, and nearest-center classification by
    // cosine recovers the label for every support and query item
    std::vector<RealVector> centers;
    for (std::size_t c = 0; c < spec.n_classes; ++c)
        centers.push_back(first_token(ep.support[c * spec.shots].tokens));

    auto check_item = [&](const LabeledSet& item) {
        for (std::size_t t = 1; t < item.tokens.tokens(); ++t)
            for (std::size_t d = 0; d < item.tokens.dim(); ++d)
                CHECK(item.tokens.data(t, d) == item.tokens.data(0, d));
        const RealVector tok = first_token(item.tokens);
        std::size_t best = 0;
        double best_sim = -2.0;
        for (std::size_t c = 0; c < centers.size(); ++c) {
            const double sim = cosine_similarity(tok, centers[c]);
            if (sim > best_sim) {
                best_sim = sim;
                best = c;
            }
        }
        CHECK(best == item.label);
    };
    for (const auto& s : ep.support) check_item(s);
    for (const auto& q : ep.query) check_item(q);

    // the isometric embedding preserves latent geometry
    for (std::size_t a = 0; a < spec.n_classes; ++a)
        for (std::size_t b = 0; b < spec.n_classes; ++b)
            CHECK(cosine_similarity(centers[a], centers[b]) ==
                  doctest::Approx(dot(ep.latents.row(a), ep.latents.row(b))).epsilon(1e-10));
}

TEST_CASE("sentinel rows are shared across classes and small") {
    const Episode ep = generate_episode(small_spec(), 13);
    const std::size_t last = ep.spec.text_tokens + 1;
    for (std::size_t c = 1; c < ep.text.size(); ++c)
        for (std::size_t d = 0; d < ep.spec.embed_dim; ++d) {
            CHECK(ep.text[c].data(0, d) == ep.text[0].data(0, d));
            CHECK(ep.text[c].data(last, d) == ep.text[0].data(last, d));
        }
    CHECK(norm2(ep.text[0].data.row(0)) < 1.0);  // 0.1-scaled gaussian stays small
}

TEST_CASE("text fidelity grows monotonically with the information rank") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        EpisodeSpec spec = small_spec();
        spec.visual_noise = 0.0;
        spec.text_noise = 0.0;
        double prev = -1.0;
        for (std::size_t rank = 1; rank <= spec.latent_dim; ++rank) {
            spec.gap_rank = rank;
            const Episode ep = generate_episode(spec, seed);
            double mean_sim = 0.0;
            for (std::size_t c = 0; c < spec.n_classes; ++c) {
                const RealVector vis = first_token(ep.support[c * spec.shots].tokens);
                RealVector txt(spec.embed_dim);
                for (std::size_t d = 0; d < spec.embed_dim; ++d) txt[d] = ep.text[c].data(1, d);
                mean_sim += cosine_similarity(vis, txt) / static_cast<double>(spec.n_classes);
            }
            CHECK(mean_sim >= prev - 1e-12);
            prev = mean_sim;
        }
        CHECK(prev == doctest::Approx(1.0).epsilon(1e-10));  // full rank closes the gap
    }
}

TEST_CASE("mnn alignment on constructed instances") {
    const RealMatrix eye = RealMatrix::identity(3);
    CHECK(mnn_alignment(eye, eye) == 1.0);

    // text rows cyclically shifted: no pair is mutual
    RealMatrix shifted(3, 3);
    shifted(0, 2) = 1.0;
    shifted(1, 0) = 1.0;
    shifted(2, 1) = 1.0;
    CHECK(mnn_alignment(eye, shifted) == 0.0);

    Rng rng(71);
    RealMatrix rnd(5, 4);
    for (double& v : rnd.data) v = rng.normal();
    CHECK(mnn_alignment(rnd, rnd) == 1.0);
    CHECK(mnn_alignment(rnd, scaled(rnd, 3.0)) == 1.0);  // cosine ignores row scale
}

TEST_CASE("mnn ties resolve to the lowest index") {
    const RealMatrix dup = RealMatrix::from_rows({{1.0, 0.0}, {1.0, 0.0}});
    // both sides tie everywhere; only pair 0 survives the lowest-index rule
    CHECK(mnn_alignment(dup, dup) == 0.5);
}

TEST_CASE("constant text rows cap the alignment at one pair") {
    Rng rng(72);
    RealMatrix img(4, 3);
    for (double& v : img.data) v = rng.normal();
    RealMatrix txt(4, 3);
    for (std::size_t i = 0; i < 4; ++i) {
        txt(i, 0) = 0.3;
        txt(i, 1) = -0.7;
        txt(i, 2) = 0.2;
    }
    CHECK(mnn_alignment(img, txt) <= 0.25 + 1e-15);
}

TEST_CASE("mnn alignment is symmetric") {
    Rng rng(73);
    RealMatrix a(6, 5), b(6, 5);
    for (double& v : a.data) v = rng.normal();
    for (double& v : b.data) v = rng.normal();
    CHECK(mnn_alignment(a, b) == mnn_alignment(b, a));
}

TEST_CASE("mnn alignment validation") {
    CHECK_THROWS_AS(mnn_alignment(RealMatrix(0, 3), RealMatrix(0, 3)), DegenerateInputError);
    CHECK_THROWS_AS(mnn_alignment(RealMatrix(2, 3, 1.0), RealMatrix(3, 3, 1.0)), ShapeError);
}

TEST_CASE("episodes survive an export/import round-trip exactly") {
    namespace fs = std::filesystem;
    const Episode ep = generate_episode(small_spec(), 99);
    const std::string dir = (fs::temp_directory_path() / "otat_episode_rt").string();
    fs::remove_all(dir);
    export_episode(ep, dir);
    const Episode back = import_episode(dir);

    CHECK(back.seed == ep.seed);
    CHECK(back.spec.n_classes == ep.spec.n_classes);
    CHECK(back.spec.gap_rank == ep.spec.gap_rank);
    CHECK(back.spec.visual_noise == ep.spec.visual_noise);
    CHECK(max_abs_diff(back.latents, ep.latents) == 0.0);
    REQUIRE(back.support.size() == ep.support.size());
    REQUIRE(back.query.size() == ep.query.size());
    REQUIRE(back.text.size() == ep.text.size());
    for (std::size_t i = 0; i < ep.support.size(); ++i) {
        CHECK(back.support[i].label == ep.support[i].label);
        CHECK(max_abs_diff(back.support[i].tokens.data, ep.support[i].tokens.data) == 0.0);
    }
    for (std::size_t i = 0; i < ep.query.size(); ++i)
        CHECK(max_abs_diff(back.query[i].tokens.data, ep.query[i].tokens.data) == 0.0);
    for (std::size_t c = 0; c < ep.text.size(); ++c)
        CHECK(max_abs_diff(back.text[c].data, ep.text[c].data) == 0.0);
    fs::remove_all(dir);

    CHECK_THROWS_AS(import_episode((fs::temp_directory_path() / "otat_missing_dir").string()),
                    IoError);
}
