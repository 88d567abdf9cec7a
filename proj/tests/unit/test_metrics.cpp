#include <doctest.h>

#include <random>
#include <set>

#include "ctrlcic/embedding.hpp"
#include "ctrlcic/metrics.hpp"

using namespace ctrlcic;
using namespace ctrlcic::metrics;

TEST_SUITE("metrics") {

TEST_CASE("highlight recall") {
    CHECK(highlight_recall("Connecticut-class battleship USS Vermont sailing",
                           std::vector<std::string>{"Connecticut-class battleship", "USS Vermont"}) == 1.0);
    CHECK(highlight_recall("a red fox in the park", std::vector<std::string>{"red fox", "blue bird"}) == 0.5);
    CHECK(highlight_recall("zebra crossing", std::vector<std::string>{"Zebra"}) == 1.0);
    CHECK(highlight_recall("red  fox", std::vector<std::string>{"red fox"}) == 1.0);
    CHECK_THROWS_AS(highlight_recall("x", std::vector<std::string>{}), Error);
}

TEST_CASE("Div-N over five captions") {
    const std::vector<std::string> same(5, "a b");
    CHECK(div_n(same, 1) == doctest::Approx(0.2));
    const std::vector<std::string> distinct{"a", "b", "c", "d", "e"};
    CHECK(div_n(distinct, 1) == 1.0);
    // Bigrams never span two captions.
    const std::vector<std::string> pairs{"a b", "b a", "a b", "c d", "d c"};
    CHECK(div_n(pairs, 2) == doctest::Approx(4.0 / 5.0));
    try {
        (void)div_n(std::vector<std::string>(4, "a"), 1);
        FAIL("expected GroupSizeError");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::GroupSizeError);
    }
}

TEST_CASE("Div-N matches a set-count oracle on random groups") {
    std::mt19937_64 rng(31);
    const std::vector<std::string> words{"a", "red", "fox", "blue", "bird", "the", "park"};
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1), len(1, 6);
    for (int t = 0; t < 100; ++t) {
        std::vector<std::string> group(5);
        std::vector<std::vector<std::string>> tokens(5);
        for (std::size_t c = 0; c < 5; ++c) {
            for (std::size_t i = 0, n = len(rng); i < n; ++i) {
                tokens[c].push_back(words[pick(rng)]);
                group[c] += (i ? " " : "") + tokens[c].back();
            }
        }
        for (int n = 1; n <= 2; ++n) {
            std::set<std::vector<std::string>> distinct;
            std::size_t total = 0;
            for (const auto& tk : tokens) {
                for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tk.size(); ++i, ++total) {
                    distinct.emplace(tk.begin() + static_cast<long>(i), tk.begin() + static_cast<long>(i) + n);
                }
            }
            if (total == 0) continue;
            CHECK(div_n(group, n) == static_cast<double>(distinct.size()) / static_cast<double>(total));
        }
    }
}

TEST_CASE("CLIPScore scaling and clipping") {
    Vector a(2), b(2);
    a << 1, 0;
    b << 2, 0;
    CHECK(clip_score(a, b) == doctest::Approx(2.5));
    b << -1, 0;
    CHECK(clip_score(a, b) == 0.0);
    b << 0, 1;
    CHECK(clip_score(a, b) == doctest::Approx(0.0));
    CHECK_THROWS_AS(clip_score(Vector::Zero(2), a), Error);
    CHECK_THROWS_AS(clip_score(a, Vector::Ones(3)), Error);
}

TEST_CASE("sentence splitting") {
    const auto s = split_sentences("One two. Three? Four 2.5 five");
    REQUIRE(s.size() == 3);
    CHECK(s[0] == std::pair<std::size_t, std::size_t>{0, 8});
    CHECK(s[1] == std::pair<std::size_t, std::size_t>{9, 15});
    CHECK(s[2].second == 29);
}

TEST_CASE("sentence-anchored CLIPScore uses highlighted sentences only") {
    const auto provider = modeling::make_provider("hash-onehot-4096");
    const auto c = core::Context::from_text("The park has a red fox. The farm has a blue bird.");
    const auto first = core::HighlightSet::from_offsets(c, {{15, 22}});
    const double on = clip_score_sent("the park has a red fox.", c, first, *provider);
    const double off = clip_score_sent("the farm has a blue bird.", c, first, *provider);
    CHECK(on == doctest::Approx(1.0));
    CHECK(off < on);
    CHECK_THROWS_AS(clip_score_sent("x", c, core::HighlightSet{}, *provider), Error);
}

TEST_CASE("two highlighted sentences anchor on their mean embedding") {
    const auto provider = modeling::make_provider("hash-dense-64");
    const auto c = core::Context::from_text("The park has a red fox. The farm has a blue bird. The bay is calm.");
    const auto h = core::HighlightSet::from_offsets(c, {{15, 22}, {54, 57}});
    const std::string caption = "a fox near the bay";
    const Vector anchor = (provider->encode_sentence("The park has a red fox.") + provider->encode_sentence("The bay is calm.")) / 2;
    const Vector cap = provider->encode_sentence(caption);
    CHECK(std::abs(clip_score_sent(caption, c, h, *provider) - cap.dot(anchor) / (cap.norm() * anchor.norm())) < 1e-6);
}

TEST_CASE("lexical overlap extremes") {
    CHECK(bleu4("the cat sat on the mat", "the cat sat on the mat") == doctest::Approx(100.0));
    CHECK(bleu4("dog runs", "the cat sat on the mat") == 0.0);
    CHECK(rouge_l("the cat sat", "the cat sat") == doctest::Approx(100.0));
    CHECK(rouge_l("dog", "the cat sat") == 0.0);
    // LCS "the sat" of lengths 3 and 3: P = R = 2/3.
    CHECK(rouge_l("the dog sat", "the cat sat") == doctest::Approx(200.0 / 3.0));
}

TEST_CASE("lexical overlap on hand-worked cases") {
    // p1..p4 = 5/6, 3/5, 2/4, 1/3; equal lengths; LCS of 5 tokens.
    CHECK(bleu4("the cat sat on the mat", "the cat sat on a mat") == doctest::Approx(100.0 * std::pow(1.0 / 12.0, 0.25)));
    CHECK(rouge_l("the cat sat on the mat", "the cat sat on a mat") == doctest::Approx(500.0 / 6.0));
    // Two orders only, both exact; brevity penalty exp(1 - 6/2).
    CHECK(bleu4("the cat", "the cat sat on the mat") == doctest::Approx(100.0 * std::exp(-2.0)));
    CHECK(rouge_l("the cat", "the cat sat on the mat") == doctest::Approx(50.0));
    // Three exact orders; brevity penalty exp(1 - 5/3); P = 1, R = 3/5.
    CHECK(bleu4("red fox runs", "the red fox runs fast") == doctest::Approx(100.0 * std::exp(-2.0 / 3.0)));
    CHECK(rouge_l("red fox runs", "the red fox runs fast") == doctest::Approx(75.0));
}

TEST_CASE("correlation coefficients") {
    const std::vector<double> x{1, 2, 3, 4, 5};
    std::vector<double> y;
    for (double v : x) y.push_back(2 * v + 1);
    auto c = correlations(x, y);
    CHECK(c.pearson == doctest::Approx(1.0));
    CHECK(c.spearman == doctest::Approx(1.0));
    CHECK(c.kendall_tau == doctest::Approx(1.0));
    for (auto& v : y) v = -v;
    c = correlations(x, y);
    CHECK(c.pearson == doctest::Approx(-1.0));
    CHECK(c.spearman == doctest::Approx(-1.0));
    CHECK(c.kendall_tau == doctest::Approx(-1.0));
    CHECK(average_ranks(std::vector<double>{10, 20, 20, 30}) == std::vector<double>{1, 2.5, 2.5, 4});
    CHECK_THROWS_AS(correlations(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), Error);
    CHECK_THROWS_AS(correlations(std::vector<double>{1, 2}, std::vector<double>{1, 2}), Error);
}

TEST_CASE("caption records round trip and aggregate") {
    const auto provider = modeling::make_provider("hash-onehot-4096");
    const auto c = core::Context::from_text("The park has a red fox. The farm has a blue bird.");
    std::vector<CaptionRecord> records;
    for (int i = 0; i < 5; ++i) {
        CaptionRecord r;
        r.sample_id = "g-" + std::to_string(i);
        r.group_id = "g";
        r.context = c;
        r.highlights = core::HighlightSet::from_offsets(c, {{15, 22}});
        r.caption = i % 2 ? "a red fox" : "a blue bird";
        r.reference = "a red fox";
        records.push_back(caption_record_from_json(caption_record_to_json(r)));
    }
    const auto report = compute_report(records, *provider);
    CHECK(report.captions == 5);
    CHECK(report.recall == doctest::Approx(40.0));
    CHECK(report.div_groups == 1);
    CHECK(report.div_1 == doctest::Approx(100.0 * 5.0 / 15.0));
    REQUIRE(report.bleu4.has_value());
    CHECK(report.to_json().at("counts").at("captions") == 5);
}

}  // TEST_SUITE
