#include "ctrlcic/prompt.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace ctrlcic::controllers {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\n\r\f\v");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\n\r\f\v");
    return std::string(s.substr(first, last - first + 1));
}

std::size_t total_words(const std::vector<std::string>& texts) {
    std::size_t n = 0;
    for (const auto& t : texts) n += core::count_words(t);
    return n;
}

}  // namespace

PromptPrefix assemble_prompt_prefix(const std::vector<std::string>& highlight_texts, std::string_view separator) {
    PromptPrefix prefix;
    for (const auto& raw : highlight_texts) {
        if (raw.find(separator) != std::string::npos) {
            throw Error(Errc::SeparatorCollision,
                        fmt::format("highlight '{}' contains the separator '{}'", raw, separator));
        }
        std::string text = core::normalize_text(raw);
        if (text.empty()) throw Error(Errc::DataFormatError, "empty highlight text");
        prefix.rendered += text;
        prefix.rendered += ' ';
        prefix.rendered += separator;
        prefix.rendered += ' ';
        prefix.highlight_texts.push_back(std::move(text));
    }
    return prefix;
}

PromptPrefix assemble_prompt_prefix(const core::HighlightSet& highlights, std::string_view separator) {
    return assemble_prompt_prefix(highlights.texts(), separator);
}

std::vector<std::string> truncate_highlights_by_position(std::vector<std::string> highlight_texts,
                                                         std::size_t max_words) {
    while (!highlight_texts.empty() && total_words(highlight_texts) > max_words) highlight_texts.pop_back();
    return highlight_texts;
}

std::vector<std::string> truncate_highlights_by_score(const std::vector<std::string>& highlight_texts,
                                                      const std::vector<double>& scores, std::size_t max_words) {
    if (scores.size() != highlight_texts.size()) {
        throw Error(Errc::ShapeMismatch, "one score per highlight required");
    }
    std::vector<std::size_t> order(highlight_texts.size());
    std::iota(order.begin(), order.end(), 0);
    // Drop order: lowest score first, later position first among ties.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return a > b;
    });
    std::vector<bool> keep(highlight_texts.size(), true);
    std::size_t words = total_words(highlight_texts);
    for (std::size_t idx : order) {
        if (words <= max_words) break;
        keep[idx] = false;
        words -= core::count_words(highlight_texts[idx]);
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < highlight_texts.size(); ++i) {
        if (keep[i]) out.push_back(highlight_texts[i]);
    }
    return out;
}

std::size_t count_prefix_tokens(std::string_view text, std::string_view separator) {
    const core::WordPunctTokenizer tokenizer({std::string(separator)});
    return tokenizer.segment(text).size();
}

std::string build_pctrl_training_target(const PromptPrefix& prefix, std::string_view caption,
                                        std::size_t token_budget, std::string_view separator) {
    std::string target = prefix.rendered + core::normalize_text(caption);
    const std::size_t tokens = count_prefix_tokens(target, separator);
    if (tokens > token_budget) {
        throw Error(Errc::BudgetExceeded,
                    fmt::format("prefixed target has {} tokens, budget is {}", tokens, token_budget));
    }
    return target;
}

ParsedOutput parse_pctrl_output(std::string_view decoded, std::string_view separator) {
    ParsedOutput out;
    if (separator.empty()) {
        out.caption = trim(decoded);
        return out;
    }
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = decoded.find(separator, start);
        if (pos == std::string_view::npos) break;
        out.highlight_texts.push_back(trim(decoded.substr(start, pos - start)));
        start = pos + separator.size();
    }
    out.caption = trim(decoded.substr(start));
    return out;
}

}  // namespace ctrlcic::controllers
