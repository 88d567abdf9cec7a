#pragma once

// Highlight prefix construction for the prompting controller.
// A rendered prefix is "h1 <SEP> h2 <SEP> " and the training target is the
// prefix immediately followed by the caption.

#include <string>
#include <string_view>
#include <vector>

#include "ctrlcic/core.hpp"

namespace ctrlcic::controllers {

inline constexpr std::string_view kDefaultSeparator = "<SEP>";

struct PromptPrefix {
    std::vector<std::string> highlight_texts;
    std::string rendered;
};

/// Throws SeparatorCollision when a highlight contains the separator literal.
PromptPrefix assemble_prompt_prefix(const std::vector<std::string>& highlight_texts,
                                    std::string_view separator = kDefaultSeparator);
PromptPrefix assemble_prompt_prefix(const core::HighlightSet& highlights,
                                    std::string_view separator = kDefaultSeparator);

/// Drops highlights from the back until the prefix holds at most max_words
/// words. Inference-time overflow policy (no relevance scores available).
std::vector<std::string> truncate_highlights_by_position(std::vector<std::string> highlight_texts,
                                                         std::size_t max_words);

/// Drops the lowest-scored highlights until at most max_words words remain;
/// survivors keep their original order. Training-time overflow policy.
std::vector<std::string> truncate_highlights_by_score(const std::vector<std::string>& highlight_texts,
                                                      const std::vector<double>& scores, std::size_t max_words);

/// Prefix followed by the caption. `token_budget` is checked against the
/// word-punct token count of the result (separator counts as one token);
/// throws BudgetExceeded when over.
std::string build_pctrl_training_target(const PromptPrefix& prefix, std::string_view caption,
                                        std::size_t token_budget, std::string_view separator = kDefaultSeparator);

struct ParsedOutput {
    std::vector<std::string> highlight_texts;
    std::string caption;
};

/// Total inverse of build_pctrl_training_target: segments before the last
/// separator are highlights, the remainder is the caption.
ParsedOutput parse_pctrl_output(std::string_view decoded, std::string_view separator = kDefaultSeparator);

/// Token count under the word-punct tokenizer with the separator atomic.
std::size_t count_prefix_tokens(std::string_view text, std::string_view separator = kDefaultSeparator);

}  // namespace ctrlcic::controllers
