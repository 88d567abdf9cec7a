#pragma once

// Weakly supervised relevance between a context and its target caption:
// token scores are cosines against the mean-pooled caption embedding, word
// scores average their tokens, and highlights/weights are derived from them.

#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcic/core.hpp"
#include "ctrlcic/embedding.hpp"

namespace ctrlcic::relevance {

struct RelevanceScores {
    std::vector<double> token_scores;  // aligned with context tokens, each in [-1, 1]
    std::vector<double> word_scores;   // aligned with context words
};

struct RecalibrationWeights {
    std::vector<double> token_weights;  // in [0, 1]
    double alpha = 0.0;
};

/// Column-wise mean of the caption token embeddings. Throws EmptyCaption for
/// zero rows.
Vector pool_caption_embedding(const Matrix& caption_token_embeddings);

/// Cosine of every context row against the pooled caption vector. Throws
/// DegenerateEmbedding when a row or the pooled vector has norm < 1e-12.
std::vector<double> token_relevance(const Matrix& context_embeddings, const Vector& pooled_caption);

/// Unweighted mean of token scores per word group.
std::vector<double> aggregate_word_scores(std::span<const double> token_scores,
                                          std::span<const core::WordGroup> word_groups);

/// Words scoring strictly above theta; at most max_words of them (highest
/// scores kept, ties to the earlier word); adjacent selected words merge
/// into one span.
core::HighlightSet derive_training_highlights(std::span<const double> word_scores, const core::Context& context,
                                              double theta, std::size_t max_words);

/// w = s / 2 + 0.5 elementwise.
RecalibrationWeights normalize_to_weights(std::span<const double> token_scores, double alpha = 0.0);

/// Full pipeline for one (context, caption) pair.
RelevanceScores score_context(const core::Context& context, std::string_view caption,
                              const modeling::EmbeddingProvider& provider);

/// Scores aligned with token and word spans, for the heatmap and datasets.
nlohmann::json scores_to_json(const core::Context& context, const RelevanceScores& scores);

}  // namespace ctrlcic::relevance
