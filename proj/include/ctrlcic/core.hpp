#pragma once

// Shared domain types: contexts, tokenization with character spans, highlight
// spans and the caption/sample records every other module passes around.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ctrlcic/error.hpp"

namespace ctrlcic {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

}  // namespace ctrlcic

namespace ctrlcic::core {

/// NFC normalization followed by whitespace collapsing and trimming.
/// Idempotent: normalize_text(normalize_text(x)) == normalize_text(x).
std::string normalize_text(std::string_view raw);

/// Lowercase + normalize. Used for matching rules (recall, candidate lookup).
std::string fold_case(std::string_view text);

struct Token {
    std::string text;
    std::size_t begin = 0;  // byte offsets into the segmented text, [begin, end)
    std::size_t end = 0;

    bool operator==(const Token&) const = default;
};

/// A whitespace-delimited word and the contiguous run of tokens it covers.
struct WordGroup {
    std::string text;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t first_token = 0;
    std::size_t token_count = 0;

    bool operator==(const WordGroup&) const = default;
};

struct Tokenization {
    std::vector<Token> tokens;
    std::vector<WordGroup> words;
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;

    /// Tokens in text order; whitespace is never part of a token.
    virtual std::vector<Token> segment(std::string_view text) const = 0;
    virtual std::string id() const = 0;
};

/// One token per UTF-8 code point (whitespace skipped).
class CharTokenizer final : public Tokenizer {
public:
    std::vector<Token> segment(std::string_view text) const override;
    std::string id() const override { return "char"; }
};

/// Alphanumeric runs and single punctuation characters. Literals registered as
/// specials (e.g. the prefix separator) are kept atomic.
class WordPunctTokenizer final : public Tokenizer {
public:
    explicit WordPunctTokenizer(std::vector<std::string> specials = {});

    std::vector<Token> segment(std::string_view text) const override;
    std::string id() const override;

    const std::vector<std::string>& specials() const { return specials_; }

private:
    std::vector<std::string> specials_;
};

/// Segments `text` and groups the tokens into whitespace-delimited words.
/// Throws Errc::TokenizerFailure when a token does not slice the text, crosses
/// a word boundary, or a word ends up with no token.
Tokenization tokenize_with_spans(std::string_view text, const Tokenizer& tokenizer);

/// Page context of one image. Immutable after construction.
class Context {
public:
    Context() = default;
    Context(std::string page_title, std::string section_title, std::string body,
            std::vector<std::string> aux_captions);

    /// Wraps text that is already assembled (e.g. synthetic contexts).
    static Context from_text(std::string text);

    const std::string& page_title() const { return page_title_; }
    const std::string& section_title() const { return section_title_; }
    const std::string& body() const { return body_; }
    const std::vector<std::string>& aux_captions() const { return aux_captions_; }
    const std::string& assembled_text() const { return assembled_; }
    const std::vector<Token>& tokens() const { return tokenization_.tokens; }
    const std::vector<WordGroup>& words() const { return tokenization_.words; }

    bool operator==(const Context& other) const;

private:
    void tokenize();

    std::string page_title_;
    std::string section_title_;
    std::string body_;
    std::vector<std::string> aux_captions_;
    std::string assembled_;
    Tokenization tokenization_;
};

/// Assembly rule: non-empty parts (page title, section title, body, each
/// auxiliary caption) joined by single spaces, then normalized.
std::string assemble_context_text(std::string_view page_title, std::string_view section_title,
                                  std::string_view body, const std::vector<std::string>& aux_captions);

/// The tokenizer contexts are segmented with.
const Tokenizer& default_tokenizer();

struct HighlightSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string text;

    bool operator==(const HighlightSpan&) const = default;
};

/// Ordered, non-overlapping, word-aligned spans of one context.
class HighlightSet {
public:
    HighlightSet() = default;

    /// Validates each span against the context, then sorts and merges
    /// overlapping spans. Throws Errc::InvalidSpan naming the offending
    /// input index when a span is out of range, empty, or not word aligned.
    static HighlightSet from_offsets(const Context& context,
                                     const std::vector<std::pair<std::size_t, std::size_t>>& offsets);

    const std::vector<HighlightSpan>& spans() const { return spans_; }
    bool empty() const { return spans_.empty(); }
    std::size_t size() const { return spans_.size(); }
    std::vector<std::string> texts() const;
    std::vector<std::pair<std::size_t, std::size_t>> offsets() const;

    bool operator==(const HighlightSet&) const = default;

private:
    std::vector<HighlightSpan> spans_;
};

/// A boundary is word aligned when it sits at the text edge, next to
/// whitespace, or between a word character and punctuation.
bool is_word_aligned(std::string_view text, std::size_t begin, std::size_t end);

/// Throws Errc::InvalidSpan if any span violates the HighlightSet invariants.
void validate_highlights(const Context& context, const HighlightSet& highlights);

/// Number of whitespace-delimited words in `text`.
std::size_t count_words(std::string_view text);

struct ImageFeature {
    Vector vector;
    std::string source_id;
};

/// Deterministic unit vector seeded from a string; pseudo features for images
/// that have no extracted feature.
Vector hashed_unit_vector(std::string_view key, std::size_t dim);

/// 64-bit FNV-1a; stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t value);

/// Hyperparameters shared by dataset construction, training and inference.
/// Defaults for theta, alpha, prompt cap, budgets, learning rate and betas are
/// the full-scale values; desk-scale runs override steps, batch and rate.
struct TrainingConfig {
    double theta = 0.3;
    double alpha = 0.1;
    std::size_t max_prompt_words = 40;
    std::size_t input_token_budget = 512;
    std::size_t output_token_budget = 128;
    std::size_t prompting_output_budget = 192;
    double learning_rate = 5e-5;
    std::pair<double, double> adam_betas{0.9, 0.999};
    double weight_decay = 0.01;
    std::size_t batch_size = 12;
    std::size_t total_steps = 3'000'000;
    std::uint64_t rng_seed = 0;
    // Toy backbone shape.
    std::size_t model_dim = 32;
    std::size_t hidden_dim = 64;
    std::size_t vocab_limit = 200;
    std::string separator = "<SEP>";

    /// Throws Errc::DataFormatError on out-of-range values.
    void validate() const;
};

struct CaptionText {
    std::string text;
    std::size_t token_count = 0;
};

struct CICSample {
    std::string sample_id;
    Context context;
    ImageFeature image;
    std::string target_caption;
};

struct CtrlCICSample {
    std::string sample_id;
    Context context;
    ImageFeature image;
    HighlightSet highlights;
    std::string target_caption;
    std::size_t sample_index = 0;
    std::size_t highlight_index = 0;
    /// Per-token weights aligned with context.tokens(); empty when unknown.
    std::vector<double> token_weights;
};

}  // namespace ctrlcic::core
