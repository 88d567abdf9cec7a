#include "ctrlcic/relevance.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace ctrlcic::relevance {

namespace {
constexpr double kMinNorm = 1e-12;
}

Vector pool_caption_embedding(const Matrix& caption_token_embeddings) {
    if (caption_token_embeddings.rows() == 0) throw Error(Errc::EmptyCaption, "caption has no tokens");
    return caption_token_embeddings.colwise().mean().transpose();
}

std::vector<double> token_relevance(const Matrix& context_embeddings, const Vector& pooled_caption) {
    if (context_embeddings.cols() != pooled_caption.size()) {
        throw Error(Errc::ShapeMismatch, fmt::format("context dim {} != caption dim {}", context_embeddings.cols(),
                                                     pooled_caption.size()));
    }
    const double pooled_norm = pooled_caption.norm();
    if (pooled_norm < kMinNorm) throw Error(Errc::DegenerateEmbedding, "pooled caption embedding has zero norm");
    std::vector<double> scores(static_cast<std::size_t>(context_embeddings.rows()));
    for (Eigen::Index i = 0; i < context_embeddings.rows(); ++i) {
        const double row_norm = context_embeddings.row(i).norm();
        if (row_norm < kMinNorm) {
            throw Error(Errc::DegenerateEmbedding, fmt::format("context token {} has zero-norm embedding", i));
        }
        const double cosine = context_embeddings.row(i).dot(pooled_caption) / (row_norm * pooled_norm);
        scores[static_cast<std::size_t>(i)] = std::clamp(cosine, -1.0, 1.0);
    }
    return scores;
}

std::vector<double> aggregate_word_scores(std::span<const double> token_scores,
                                          std::span<const core::WordGroup> word_groups) {
    std::vector<double> out;
    out.reserve(word_groups.size());
    for (const auto& group : word_groups) {
        double sum = 0.0;
        for (std::size_t k = 0; k < group.token_count; ++k) sum += token_scores[group.first_token + k];
        out.push_back(sum / static_cast<double>(group.token_count));
    }
    return out;
}

core::HighlightSet derive_training_highlights(std::span<const double> word_scores, const core::Context& context,
                                              double theta, std::size_t max_words) {
    const auto& words = context.words();
    if (word_scores.size() != words.size()) {
        throw Error(Errc::ShapeMismatch,
                    fmt::format("{} word scores for {} context words", word_scores.size(), words.size()));
    }
    std::vector<std::size_t> selected;
    for (std::size_t j = 0; j < words.size(); ++j) {
        if (word_scores[j] > theta) selected.push_back(j);
    }
    if (selected.size() > max_words) {
        std::stable_sort(selected.begin(), selected.end(),
                         [&](std::size_t a, std::size_t b) { return word_scores[a] > word_scores[b]; });
        selected.resize(max_words);
        std::sort(selected.begin(), selected.end());
    }

    std::vector<std::pair<std::size_t, std::size_t>> offsets;
    for (std::size_t k = 0; k < selected.size(); ++k) {
        const auto& word = words[selected[k]];
        if (k > 0 && selected[k] == selected[k - 1] + 1) {
            offsets.back().second = word.end;
        } else {
            offsets.emplace_back(word.begin, word.end);
        }
    }
    return core::HighlightSet::from_offsets(context, offsets);
}

RecalibrationWeights normalize_to_weights(std::span<const double> token_scores, double alpha) {
    RecalibrationWeights out;
    out.alpha = alpha;
    out.token_weights.reserve(token_scores.size());
    for (double s : token_scores) out.token_weights.push_back(s / 2.0 + 0.5);
    return out;
}

RelevanceScores score_context(const core::Context& context, std::string_view caption,
                              const modeling::EmbeddingProvider& provider) {
    const std::string normalized_caption = core::normalize_text(caption);
    const auto caption_tokens = core::default_tokenizer().segment(normalized_caption);
    const Matrix caption_embeddings = provider.encode_tokens(caption_tokens);
    const Vector pooled = pool_caption_embedding(caption_embeddings);
    const Matrix context_embeddings = provider.encode_tokens(context.tokens());

    RelevanceScores scores;
    scores.token_scores = token_relevance(context_embeddings, pooled);
    scores.word_scores = aggregate_word_scores(scores.token_scores, context.words());
    return scores;
}

nlohmann::json scores_to_json(const core::Context& context, const RelevanceScores& scores) {
    nlohmann::json tokens = nlohmann::json::array();
    for (std::size_t i = 0; i < context.tokens().size(); ++i) {
        const auto& t = context.tokens()[i];
        tokens.push_back({{"text", t.text}, {"span", {t.begin, t.end}}, {"score", scores.token_scores.at(i)}});
    }
    nlohmann::json words = nlohmann::json::array();
    for (std::size_t j = 0; j < context.words().size(); ++j) {
        const auto& w = context.words()[j];
        words.push_back({{"text", w.text}, {"span", {w.begin, w.end}}, {"score", scores.word_scores.at(j)}});
    }
    return {{"tokens", std::move(tokens)}, {"words", std::move(words)}};
}

}  // namespace ctrlcic::relevance
