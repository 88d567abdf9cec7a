#pragma once

// Comparative judge evaluation: highlight candidate selection, prompt
// rendering, response parsing, slot-order randomization and log-mean
// aggregation of candidate/anchor score ratios.

#include <array>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcic/core.hpp"
#include "ctrlcic/judge.hpp"

namespace ctrlcic::evaluator {

enum class Metric : std::size_t { CR = 0, HR = 1, IC = 2, OQ = 3 };
inline constexpr std::size_t kMetricCount = 4;

/// Criterion names as they appear in prompts and responses.
std::string_view metric_name(Metric m);
/// Short column label ("CR", "HR", "IC", "OQ").
std::string_view metric_label(Metric m);

using MetricScores = std::array<int, kMetricCount>;
using MetricRatios = std::array<double, kMetricCount>;

struct EvalScores {
    MetricScores assistant1{};
    MetricScores assistant2{};
};

inline constexpr std::size_t kMaxHighlightCandidates = 10;

std::string build_highlight_selection_prompt(const core::Context& context);

/// Splits a "a | b | c" response into at most ten trimmed candidates.
/// Throws UnparseableResponse when nothing usable remains.
std::vector<std::string> parse_highlight_candidates(std::string_view response);

std::vector<std::string> select_highlight_candidates(const core::Context& context, JudgeClient& client);

/// Resolves each candidate to its first word-aligned occurrence in the
/// context and drops candidates that are absent or overlap an earlier kept
/// span.
core::HighlightSet filter_candidates(const std::vector<std::string>& candidates, const core::Context& context);

struct EvalPromptInput {
    std::optional<std::string> image_ref;
    core::Context context;
    std::vector<std::string> highlights;
    std::string caption_a;
    std::string caption_b;
};

/// Throws DataFormatError for an empty caption.
std::string build_eval_prompt(const EvalPromptInput& input);

/// Reads the four scores of each assistant from the last [ASSISTANT1-Score]
/// / [ASSISTANT2-Score] sections. Throws MissingSection or OutOfRangeScore.
EvalScores parse_eval_response(std::string_view text);

struct SlotAssignment {
    std::string slot1;
    std::string slot2;
    OrderFlag flag = OrderFlag::CandidateFirst;
};

SlotAssignment randomize_order(const std::string& candidate, const std::string& anchor, std::mt19937_64& rng);

/// (candidate, anchor) scores regardless of slot order.
std::pair<MetricScores, MetricScores> dealias(const EvalScores& scores, OrderFlag flag);

struct ComparativeResult {
    MetricRatios ratios{};
    OrderFlag order_flag = OrderFlag::CandidateFirst;
};

ComparativeResult comparative_ratios(const MetricScores& candidate, const MetricScores& anchor);

/// exp(mean(log r)). Throws NonPositiveRatio.
double aggregate_log_mean(std::span<const double> ratios);

struct EvalItem {
    std::string sample_id;
    core::Context context;
    std::vector<std::string> highlights;
    std::optional<std::string> image_ref;
    std::string candidate;
    std::string anchor;
};

struct EvalConfig {
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> transcript_dir;  // one JSON per call when set
};

struct SampleOutcome {
    std::string sample_id;
    OrderFlag order_flag = OrderFlag::CandidateFirst;
    std::optional<EvalScores> scores;
    std::optional<ComparativeResult> result;
    std::string response;
    std::string error;
};

struct EvalReport {
    MetricRatios candidate{};
    MetricRatios anchor{1.0, 1.0, 1.0, 1.0};
    std::size_t evaluated = 0;
    std::size_t failures = 0;
    std::vector<SampleOutcome> outcomes;

    nlohmann::json to_json() const;
};

/// Per item: draw the slot order, prompt, parse, de-alias and take ratios;
/// each metric is aggregated with aggregate_log_mean over the successful
/// items. Failed items are kept with their raw response and never
/// contribute partial scores.
EvalReport run_evaluation(const std::vector<EvalItem>& items, JudgeClient& client, const EvalConfig& config);

nlohmann::json eval_item_to_json(const EvalItem& item);
EvalItem eval_item_from_json(const nlohmann::json& j);

}  // namespace ctrlcic::evaluator
