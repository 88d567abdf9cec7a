#pragma once

// Reference-free caption metrics (highlight recall, Div-N, CLIPScore and its
// sentence-anchored variant), simplified BLEU-4 / ROUGE-L, and correlation
// coefficients.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcic/core.hpp"
#include "ctrlcic/embedding.hpp"

namespace ctrlcic::metrics {

/// Fraction of highlights whose case-folded, whitespace-collapsed text occurs
/// as a substring of the caption. Throws EmptyHighlights.
double highlight_recall(std::string_view caption, const std::vector<std::string>& highlights);
double highlight_recall(std::string_view caption, const core::HighlightSet& highlights);

/// Case-folded word-punct tokens used by the lexical metrics.
std::vector<std::string> metric_tokens(std::string_view text);

/// Distinct n-grams over total n-grams pooled across exactly five captions;
/// n-grams never cross caption boundaries. Throws GroupSizeError.
double div_n(std::span<const std::string> captions, int n);

/// 2.5 * max(cos, 0). Throws DegenerateEmbedding for a near-zero vector and
/// DimensionMismatch for unequal lengths.
double clip_score(const Vector& caption_embedding, const Vector& image_embedding);

/// Sentence character spans: a sentence ends at '.', '!' or '?' followed by
/// whitespace or the end of the text.
std::vector<std::pair<std::size_t, std::size_t>> split_sentences(std::string_view text);

/// Cosine between the caption embedding and the mean embedding of context
/// sentences that intersect any highlight. Throws NoHighlightedSentence.
double clip_score_sent(std::string_view caption, const core::Context& context, const core::HighlightSet& highlights,
                       const modeling::EmbeddingProvider& provider);

/// Clipped n-gram precision up to order 4 with brevity penalty, x100. Orders
/// longer than the candidate are left out of the geometric mean; no smoothing.
double bleu4(std::string_view candidate, std::string_view reference);

/// LCS F1 over tokens, x100.
double rouge_l(std::string_view candidate, std::string_view reference);

struct Correlations {
    double pearson = 0.0;
    double spearman = 0.0;
    double kendall_tau = 0.0;
};

/// Spearman uses average ranks for ties; Kendall is tau-b. Throws
/// DegenerateInput for unequal lengths, fewer than 3 points, or a constant
/// vector.
Correlations correlations(std::span<const double> x, std::span<const double> y);

/// Averages ranks of tied values; ranks start at 1.
std::vector<double> average_ranks(std::span<const double> values);

/// One generated caption with what the metrics need to score it.
struct CaptionRecord {
    std::string sample_id;
    std::string group_id;  // captions of one context-image pair share a group
    core::Context context;
    core::HighlightSet highlights;
    std::string caption;
    std::optional<Vector> image_embedding;
    std::optional<std::string> reference;
};

/// Every value is x100, so clip_score ranges over [0, 250].
struct MetricReport {
    double recall = 0.0;
    double div_1 = 0.0;
    double div_2 = 0.0;
    double clip_score = 0.0;
    double clip_score_sent = 0.0;
    std::optional<double> bleu4;
    std::optional<double> rouge_l;
    std::optional<double> cider;   // external value slot
    std::optional<double> meteor;  // external value slot
    std::size_t captions = 0;
    std::size_t recall_count = 0;
    std::size_t div_groups = 0;
    std::size_t skipped_groups = 0;
    std::size_t clip_count = 0;
    std::size_t clip_sent_count = 0;

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

MetricReport compute_report(const std::vector<CaptionRecord>& records, const modeling::EmbeddingProvider& provider);

nlohmann::json caption_record_to_json(const CaptionRecord& record);
CaptionRecord caption_record_from_json(const nlohmann::json& j);

}  // namespace ctrlcic::metrics
