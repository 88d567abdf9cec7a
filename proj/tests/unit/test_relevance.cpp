#include <doctest.h>

#include <algorithm>
#include <random>

#include "ctrlcic/relevance.hpp"

using namespace ctrlcic;
using namespace ctrlcic::relevance;

TEST_SUITE("relevance") {

TEST_CASE("pooling is the row mean") {
    Matrix m(2, 2);
    m << 1, 0, 0, 1;
    const Vector p = pool_caption_embedding(m);
    CHECK(p(0) == 0.5);
    CHECK(p(1) == 0.5);

    Matrix one(1, 3);
    one << 0.25, -1, 4;
    CHECK(pool_caption_embedding(one) == Vector(one.row(0).transpose()));

    std::mt19937_64 rng(3);
    std::normal_distribution<double> n;
    Matrix r(5, 4);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) r(i, j) = n(rng);
    const Vector got = pool_caption_embedding(r);
    for (int j = 0; j < 4; ++j) {
        double sum = 0;
        for (int i = 0; i < 5; ++i) sum += r(i, j);
        CHECK(std::abs(got(j) - sum / 5) < 1e-9);
    }

    CHECK_THROWS_AS(pool_caption_embedding(Matrix(0, 3)), Error);
}

TEST_CASE("token relevance is cosine similarity") {
    Matrix ctx(3, 2);
    ctx << 1, 1, 1, -1, -2, -2;
    Vector pooled(2);
    pooled << 1, 1;
    const auto s = token_relevance(ctx, pooled);
    CHECK(s[0] == doctest::Approx(1.0));
    CHECK(s[1] == doctest::Approx(0.0));
    CHECK(s[2] == doctest::Approx(-1.0));

    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    Matrix r(8, 4);
    Vector q(4);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 4; ++j) r(i, j) = n(rng);
    for (int j = 0; j < 4; ++j) q(j) = n(rng);
    const auto got = token_relevance(r, q);
    for (int i = 0; i < 8; ++i) {
        double dot = 0, a = 0, b = 0;
        for (int j = 0; j < 4; ++j) {
            dot += r(i, j) * q(j);
            a += r(i, j) * r(i, j);
            b += q(j) * q(j);
        }
        CHECK(std::abs(got[i] - dot / std::sqrt(a * b)) < 1e-6);
    }

    Matrix zero_row(2, 2);
    zero_row << 1, 0, 0, 0;
    CHECK_THROWS_AS(token_relevance(zero_row, pooled), Error);
    CHECK_THROWS_AS(token_relevance(ctx, Vector::Zero(2)), Error);
}

TEST_CASE("word scores average their tokens") {
    std::vector<core::WordGroup> groups{{"ab", 0, 2, 0, 2}, {"c", 3, 4, 2, 1}};
    const std::vector<double> scores{0.2, 0.4, 0.7};
    const auto w = aggregate_word_scores(scores, groups);
    CHECK(w[0] == doctest::Approx(0.3));
    CHECK(w[1] == 0.7);

    // Token-count weighted mean of word scores equals the token mean.
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1, 1);
    std::uniform_int_distribution<std::size_t> k(1, 4);
    std::vector<double> t(30);
    for (auto& x : t) x = u(rng);
    std::vector<core::WordGroup> g;
    for (std::size_t at = 0; at < t.size();) {
        const std::size_t n = std::min(k(rng), t.size() - at);
        g.push_back({"w", 0, 0, at, n});
        at += n;
    }
    const auto ws = aggregate_word_scores(t, g);
    double weighted = 0, direct = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double mean = 0;
        for (std::size_t j = 0; j < g[i].token_count; ++j) mean += t[g[i].first_token + j];
        mean /= static_cast<double>(g[i].token_count);
        CHECK(std::abs(ws[i] - mean) < 1e-12);
        weighted += ws[i] * static_cast<double>(g[i].token_count);
    }
    for (double x : t) direct += x;
    CHECK(std::abs(weighted - direct) < 1e-12);
}

TEST_CASE("highlights use a strict threshold") {
    const auto c = core::Context::from_text("alpha beta gamma");
    const std::vector<double> s{0.50, 0.29, 0.31};
    const auto h = derive_training_highlights(s, c, 0.3, 40);
    REQUIRE(h.size() == 2);
    CHECK(h.spans()[0].text == "alpha");
    CHECK(h.spans()[1].text == "gamma");

    CHECK(derive_training_highlights(std::vector<double>{0.3, 0.3, 0.3}, c, 0.3, 40).empty());
    CHECK(derive_training_highlights(std::vector<double>{0.1, -0.2, 0.0}, c, 0.3, 40).empty());
}

TEST_CASE("adjacent selected words merge") {
    const auto c = core::Context::from_text("a red fox runs home");
    const auto h = derive_training_highlights(std::vector<double>{0, 0.9, 0.8, 0, 0.7}, c, 0.3, 40);
    REQUIRE(h.size() == 2);
    CHECK(h.spans()[0].text == "red fox");
    CHECK(h.spans()[1].text == "home");
}

TEST_CASE("the word cap keeps the highest scores") {
    std::string text;
    for (int i = 0; i < 45; ++i) text += (i ? " w" : "w") + std::to_string(i);
    const auto c = core::Context::from_text(text);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.31, 1.0);
    std::vector<double> s(45);
    for (auto& x : s) x = u(rng);
    const auto h = derive_training_highlights(s, c, 0.3, 40);

    std::vector<bool> selected(45, false);
    for (std::size_t i = 0; i < c.words().size(); ++i) {
        for (const auto& span : h.spans()) {
            if (c.words()[i].begin >= span.begin && c.words()[i].end <= span.end) selected[i] = true;
        }
    }
    CHECK(std::count(selected.begin(), selected.end(), true) == 40);
    double sel_min = 2, rej_max = -2;
    for (std::size_t i = 0; i < 45; ++i) (selected[i] ? sel_min : rej_max) = selected[i] ? std::min(sel_min, s[i]) : std::max(rej_max, s[i]);
    CHECK(sel_min >= rej_max);
}

TEST_CASE("weights map scores affinely onto [0, 1]") {
    const auto w = normalize_to_weights(std::vector<double>{-1, 0, 1}, 0.1);
    CHECK(w.token_weights[0] == 0.0);
    CHECK(w.token_weights[1] == 0.5);
    CHECK(w.token_weights[2] == 1.0);
    CHECK(w.alpha == 0.1);
}

TEST_CASE("one-hot provider highlights a repeated context word") {
    const auto provider = modeling::make_provider("hash-onehot-4096");
    const core::Context c("", "", "The lighthouse stands on a granite cliff.", {});
    const auto scores = score_context(c, "granite", *provider);
    REQUIRE(scores.word_scores.size() == c.words().size());
    CHECK(scores.word_scores[5] == doctest::Approx(1.0));
    CHECK(scores.word_scores[0] == doctest::Approx(0.0));
    const auto h = derive_training_highlights(scores.word_scores, c, 0.3, 40);
    REQUIRE(h.size() == 1);
    CHECK(h.spans()[0].text == "granite");

    const auto j = scores_to_json(c, scores);
    CHECK(j.at("words").size() == c.words().size());
    CHECK(j.at("tokens").size() == c.tokens().size());
}

TEST_CASE("orthogonal caption leaves weights at one half") {
    const auto provider = modeling::make_provider("hash-onehot-4096");
    const core::Context c("", "", "The lighthouse stands tall.", {});
    const auto scores = score_context(c, "zebra crossing", *provider);
    const auto w = normalize_to_weights(scores.token_scores);
    for (double x : w.token_weights) CHECK(x == 0.5);
    CHECK(derive_training_highlights(scores.word_scores, c, 0.3, 40).empty());
}

}  // TEST_SUITE
