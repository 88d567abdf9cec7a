#include "ctrlcic/evaluator.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <regex>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace ctrlcic::evaluator {

namespace {

constexpr std::array<std::string_view, kMetricCount> kNames{"Relevance with Context", "Relevance with Highlight",
                                                            "Consistency with Image", "Overall Quality"};
constexpr std::array<std::string_view, kMetricCount> kLabels{"CR", "HR", "IC", "OQ"};
// Response lines may shorten the last criterion to "Overall".
constexpr std::array<std::string_view, kMetricCount> kPatterns{"relevance with context", "relevance with highlight",
                                                               "consistency with image", "overall"};

constexpr std::string_view kA1Score = "[ASSISTANT1-Score]";
constexpr std::string_view kA2Score = "[ASSISTANT2-Score]";

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

}  // namespace

std::string_view metric_name(Metric m) { return kNames[static_cast<std::size_t>(m)]; }
std::string_view metric_label(Metric m) { return kLabels[static_cast<std::size_t>(m)]; }

// Highlight candidates ------------------------------------------------------

std::string build_highlight_selection_prompt(const core::Context& context) {
    return fmt::format(
        "Pick up to ten short keyphrases from the context below that would help write a caption for an image "
        "that accompanies it. Copy each keyphrase exactly as it appears in the context; a keyphrase may be a "
        "single word or a short phrase. Reply with a single line of keyphrases separated by \" | \" and nothing "
        "else.\n\nContext Section:\n\n{}\n\nKeyphrases:\n",
        context.assembled_text());
}

std::vector<std::string> parse_highlight_candidates(std::string_view response) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= response.size() && out.size() < kMaxHighlightCandidates) {
        const auto bar = response.find('|', start);
        const auto piece = response.substr(start, bar == std::string_view::npos ? std::string_view::npos : bar - start);
        std::string item = core::normalize_text(trim(piece));
        if (!item.empty()) out.push_back(std::move(item));
        if (bar == std::string_view::npos) break;
        start = bar + 1;
    }
    if (out.empty()) throw Error(Errc::UnparseableResponse, fmt::format("no keyphrases in response: '{}'", response));
    return out;
}

std::vector<std::string> select_highlight_candidates(const core::Context& context, JudgeClient& client) {
    JudgeRequest request;
    request.prompt = build_highlight_selection_prompt(context);
    return parse_highlight_candidates(client.complete(request).text);
}

core::HighlightSet filter_candidates(const std::vector<std::string>& candidates, const core::Context& context) {
    const std::string& text = context.assembled_text();
    std::vector<std::pair<std::size_t, std::size_t>> kept;
    for (const auto& raw : candidates) {
        const std::string needle = core::normalize_text(raw);
        if (needle.empty()) continue;
        std::optional<std::pair<std::size_t, std::size_t>> span;
        for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) {
            if (core::is_word_aligned(text, pos, pos + needle.size())) {
                span = std::make_pair(pos, pos + needle.size());
                break;
            }
        }
        if (!span) continue;
        const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](const auto& k) {
            return span->first < k.second && k.first < span->second;
        });
        if (!overlaps) kept.push_back(*span);
    }
    return core::HighlightSet::from_offsets(context, kept);
}

// Prompt and parser ---------------------------------------------------------

std::string build_eval_prompt(const EvalPromptInput& input) {
    if (core::normalize_text(input.caption_a).empty() || core::normalize_text(input.caption_b).empty()) {
        throw Error(Errc::DataFormatError, "both captions must be non-empty");
    }
    std::string criteria_scaffold;
    for (std::size_t m = 0; m < kMetricCount; ++m) criteria_scaffold += fmt::format("- {}: <1-5>\n", kNames[m]);
    std::string highlights;
    for (const auto& h : input.highlights) highlights += core::normalize_text(h) + "\n";
    const std::string image_line = input.image_ref ? fmt::format("[Image]: {}\n\n", *input.image_ref) : std::string();

    return fmt::format(
        "Two assistants each wrote a caption for the same image. A caption should fit the document context the "
        "image appears in and should emphasise the highlighted segments of that context.\n"
        "\n"
        "Procedure:\n"
        "1. Read the [Context Section] (page title, section title and section text) and the [Highlighted "
        "Segments] (one per line), and look at the image.\n"
        "2. Read [ASSISTANT1 Caption] and [ASSISTANT2 Caption].\n"
        "3. Judge each caption on the criteria below, one criterion at a time.\n"
        "4. Write the five output sections in this order: [ASSISTANT1-Reasoning], [ASSISTANT2-Reasoning], "
        "[Comparison-Reasoning], [ASSISTANT1-Score], [ASSISTANT2-Score].\n"
        "\n"
        "Criteria:\n"
        "- {0}: does the caption relate to the document context?\n"
        "- {1}: does the caption cover the highlighted segments and give them prominence?\n"
        "- {2}: does the caption describe only what is visible in the image?\n"
        "- {3}: how well does the caption combine context, highlights and image into one informative "
        "description?\n"
        "\n"
        "Scores are integers from 1 (worst) to 5 (best). Format each score section like this:\n"
        "{4}:\n"
        "{5}"
        "\n"
        "-----------------Evaluation Starts---------------------\n"
        "\n"
        "{6}"
        "[Context Section]:\n"
        "[PageTitle] {7} [SectionTitle] {8} [SectionText] {9}\n"
        "\n"
        "[Highlighted Segments]:\n"
        "{10}"
        "\n"
        "[ASSISTANT1 Caption]:\n"
        "{11}\n"
        "\n"
        "[ASSISTANT2 Caption]:\n"
        "{12}\n"
        "\n"
        "Now write \"[ASSISTANT1-Reasoning]:\", \"[ASSISTANT2-Reasoning]:\", \"[Comparison-Reasoning]:\", "
        "\"{4}:\" and \"{13}:\", in that order.\n",
        kNames[0], kNames[1], kNames[2], kNames[3], kA1Score, criteria_scaffold, image_line,
        core::normalize_text(input.context.page_title()), core::normalize_text(input.context.section_title()),
        core::normalize_text(input.context.body()), highlights, core::normalize_text(input.caption_a),
        core::normalize_text(input.caption_b), kA2Score);
}

namespace {

MetricScores parse_score_section(std::string_view section, std::string_view label) {
    const std::string lowered = core::fold_case(section);
    MetricScores scores{};
    for (std::size_t m = 0; m < kMetricCount; ++m) {
        const std::regex re(fmt::format(R"(-\s*\**\s*{}[^:\n]*:\s*\**\s*(-?\d+))", kPatterns[m]));
        std::smatch match;
        if (!std::regex_search(lowered, match, re)) {
            throw Error(Errc::MissingSection, fmt::format("{} has no '{}' score", label, kNames[m]));
        }
        const int value = std::stoi(match[1].str());
        if (value < 1 || value > 5) {
            throw Error(Errc::OutOfRangeScore, fmt::format("{} '{}' score {} is outside 1..5", label, kNames[m], value));
        }
        scores[m] = value;
    }
    return scores;
}

}  // namespace

EvalScores parse_eval_response(std::string_view text) {
    const auto a2 = text.rfind(kA2Score);
    if (a2 == std::string_view::npos) throw Error(Errc::MissingSection, "response has no [ASSISTANT2-Score] section");
    const auto a1 = text.substr(0, a2).rfind(kA1Score);
    if (a1 == std::string_view::npos) throw Error(Errc::MissingSection, "response has no [ASSISTANT1-Score] section");
    EvalScores scores;
    scores.assistant1 = parse_score_section(text.substr(a1 + kA1Score.size(), a2 - a1 - kA1Score.size()), kA1Score);
    scores.assistant2 = parse_score_section(text.substr(a2 + kA2Score.size()), kA2Score);
    return scores;
}

// Ordering and aggregation ---------------------------------------------------

SlotAssignment randomize_order(const std::string& candidate, const std::string& anchor, std::mt19937_64& rng) {
    const bool candidate_first = (rng() >> 63) == 0;
    if (candidate_first) return {candidate, anchor, OrderFlag::CandidateFirst};
    return {anchor, candidate, OrderFlag::AnchorFirst};
}

std::pair<MetricScores, MetricScores> dealias(const EvalScores& scores, OrderFlag flag) {
    if (flag == OrderFlag::CandidateFirst) return {scores.assistant1, scores.assistant2};
    return {scores.assistant2, scores.assistant1};
}

ComparativeResult comparative_ratios(const MetricScores& candidate, const MetricScores& anchor) {
    ComparativeResult r;
    for (std::size_t m = 0; m < kMetricCount; ++m) {
        r.ratios[m] = static_cast<double>(candidate[m]) / static_cast<double>(anchor[m]);
    }
    return r;
}

double aggregate_log_mean(std::span<const double> ratios) {
    if (ratios.empty()) throw Error(Errc::DegenerateInput, "no ratios to aggregate");
    double sum = 0.0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        if (!(ratios[i] > 0.0)) throw Error(Errc::NonPositiveRatio, fmt::format("ratio {} is {}", i, ratios[i]));
        sum += std::log(ratios[i]);
    }
    return std::exp(sum / static_cast<double>(ratios.size()));
}

// Evaluation run ------------------------------------------------------------

namespace {

nlohmann::json scores_json(const MetricScores& s) {
    nlohmann::json j;
    for (std::size_t m = 0; m < kMetricCount; ++m) j[std::string(kLabels[m])] = s[m];
    return j;
}

nlohmann::json ratios_json(const MetricRatios& r) {
    nlohmann::json j;
    for (std::size_t m = 0; m < kMetricCount; ++m) j[std::string(kLabels[m])] = r[m];
    return j;
}

void store_transcript(const std::filesystem::path& dir, const JudgeRequest& request, const SampleOutcome& outcome) {
    nlohmann::json j = {{"sample_id", request.sample_id},
                        {"request_hash", request_hash(request)},
                        {"prompt", request.prompt},
                        {"response", outcome.response},
                        {"order_flag", to_string(outcome.order_flag)},
                        {"timestamp_ms", std::chrono::duration_cast<std::chrono::milliseconds>(
                                             std::chrono::system_clock::now().time_since_epoch())
                                             .count()}};
    if (outcome.scores) {
        j["parsed"] = {{"assistant1", scores_json(outcome.scores->assistant1)},
                       {"assistant2", scores_json(outcome.scores->assistant2)}};
    }
    if (!outcome.error.empty()) j["error"] = outcome.error;
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / fmt::format("{}.json", request.sample_id), std::ios::binary);
    out << j.dump(2) << '\n';
}

}  // namespace

EvalReport run_evaluation(const std::vector<EvalItem>& items, JudgeClient& client, const EvalConfig& config) {
    // Slot orders are drawn up front in item order so results do not depend
    // on scheduling.
    std::mt19937_64 rng(config.seed);
    std::vector<JudgeRequest> requests(items.size());
    std::vector<SampleOutcome> outcomes(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& item = items[i];
        const auto slots = randomize_order(item.candidate, item.anchor, rng);
        outcomes[i].sample_id = item.sample_id;
        outcomes[i].order_flag = slots.flag;
        requests[i].sample_id = item.sample_id;
        requests[i].image_ref = item.image_ref;
        requests[i].order_flag = slots.flag;
        try {
            requests[i].prompt =
                build_eval_prompt({item.image_ref, item.context, item.highlights, slots.slot1, slots.slot2});
        } catch (const Error& e) {
            outcomes[i].error = e.what();
        }
    }

    std::mutex store_mutex;
    auto work = [&](std::size_t i) {
        auto& outcome = outcomes[i];
        if (!outcome.error.empty()) return;
        try {
            const JudgeResponse response = client.complete(requests[i]);
            outcome.response = response.text;
            if (response.recorded_order) outcome.order_flag = *response.recorded_order;
            outcome.scores = parse_eval_response(response.text);
            const auto [cand, anchor] = dealias(*outcome.scores, outcome.order_flag);
            outcome.result = comparative_ratios(cand, anchor);
            outcome.result->order_flag = outcome.order_flag;
        } catch (const Error& e) {
            outcome.scores.reset();
            outcome.result.reset();
            outcome.error = fmt::format("{}: {}", to_string(e.code()), e.what());
            spdlog::warn("evaluation of sample {} failed: {}", outcome.sample_id, outcome.error);
        }
        if (config.transcript_dir) {
            std::lock_guard lock(store_mutex);
            store_transcript(*config.transcript_dir, requests[i], outcome);
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(client.max_parallel(), items.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < items.size(); ++i) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < items.size(); i = next++) work(i);
            });
        }
        for (auto& t : pool) t.join();
    }

    EvalReport report;
    std::array<std::vector<double>, kMetricCount> columns;
    for (auto& outcome : outcomes) {
        if (outcome.result) {
            ++report.evaluated;
            for (std::size_t m = 0; m < kMetricCount; ++m) columns[m].push_back(outcome.result->ratios[m]);
        } else {
            ++report.failures;
        }
    }
    for (std::size_t m = 0; m < kMetricCount; ++m) {
        report.candidate[m] = columns[m].empty() ? std::nan("") : aggregate_log_mean(columns[m]);
    }
    report.outcomes = std::move(outcomes);
    return report;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& o : outcomes) {
        nlohmann::json s = {{"sample_id", o.sample_id}, {"order_flag", to_string(o.order_flag)}};
        if (o.result) s["ratios"] = ratios_json(o.result->ratios);
        if (!o.error.empty()) {
            s["error"] = o.error;
            s["raw_response"] = o.response;
        }
        samples.push_back(std::move(s));
    }
    nlohmann::json cand;
    for (std::size_t m = 0; m < kMetricCount; ++m) {
        const std::string label(kLabels[m]);
        cand[label] = std::isnan(candidate[m]) ? nlohmann::json(nullptr) : nlohmann::json(candidate[m]);
    }
    return {{"candidate", cand},
            {"anchor", ratios_json(anchor)},
            {"evaluated", evaluated},
            {"failures", failures},
            {"samples", samples}};
}

nlohmann::json eval_item_to_json(const EvalItem& item) {
    nlohmann::json j = {{"sample_id", item.sample_id},
                        {"context",
                         {{"page_title", item.context.page_title()},
                          {"section_title", item.context.section_title()},
                          {"body", item.context.body()},
                          {"aux_captions", item.context.aux_captions()}}},
                        {"highlights", item.highlights},
                        {"candidate", item.candidate},
                        {"anchor", item.anchor}};
    if (item.image_ref) j["image_ref"] = *item.image_ref;
    return j;
}

EvalItem eval_item_from_json(const nlohmann::json& j) {
    try {
        EvalItem item;
        item.sample_id = j.at("sample_id").get<std::string>();
        const auto& c = j.at("context");
        item.context = core::Context(c.value("page_title", ""), c.value("section_title", ""),
                                     c.at("body").get<std::string>(),
                                     c.value("aux_captions", std::vector<std::string>{}));
        item.highlights = j.value("highlights", std::vector<std::string>{});
        if (j.contains("image_ref")) item.image_ref = j.at("image_ref").get<std::string>();
        item.candidate = j.at("candidate").get<std::string>();
        item.anchor = j.at("anchor").get<std::string>();
        return item;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::SchemaViolation, fmt::format("evaluation item: {}", e.what()));
    }
}

}  // namespace ctrlcic::evaluator
