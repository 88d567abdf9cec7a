#include "ctrlcic/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include <fmt/format.h>
#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

namespace ctrlcic {

std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::TokenizerFailure: return "TokenizerFailure";
        case Errc::InvalidSpan: return "InvalidSpans";
        case Errc::EmptyCaption: return "EmptyCaption";
        case Errc::DegenerateEmbedding: return "DegenerateEmbedding";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::SeparatorCollision: return "SeparatorCollision";
        case Errc::BudgetExceeded: return "BudgetExceeded";
        case Errc::ModelFailure: return "ModelFailure";
        case Errc::DataFormatError: return "DataFormatError";
        case Errc::DivergenceDetected: return "DivergenceDetected";
        case Errc::MalformedRecord: return "MalformedRecord";
        case Errc::SchemaViolation: return "SchemaViolation";
        case Errc::EmptyHighlights: return "EmptyHighlights";
        case Errc::GroupSizeError: return "GroupSizeError";
        case Errc::NoHighlightedSentence: return "NoHighlightedSentence";
        case Errc::DegenerateInput: return "DegenerateInput";
        case Errc::JudgeUnavailable: return "JudgeUnavailable";
        case Errc::UnparseableResponse: return "UnparseableResponse";
        case Errc::MissingSection: return "MissingSection";
        case Errc::OutOfRangeScore: return "OutOfRangeScore";
        case Errc::NonPositiveRatio: return "NonPositiveRatio";
        case Errc::Io: return "IoError";
    }
    return "Unknown";
}

}  // namespace ctrlcic

namespace ctrlcic::core {
namespace {

bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Bytes >= 0x80 belong to multi-byte code points and count as word characters.
bool is_word_char(unsigned char c) {
    return c >= 0x80 || std::isalnum(c) != 0;
}

std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

std::string nfc(std::string_view raw) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) return std::string(raw);
    icu::UnicodeString input = icu::UnicodeString::fromUTF8(
        icu::StringPiece(raw.data(), static_cast<int32_t>(raw.size())));
    icu::UnicodeString output = normalizer->normalize(input, status);
    if (U_FAILURE(status)) return std::string(raw);
    // Unicode spaces (NBSP, thin space, ideographic space, ...) become ASCII.
    for (int32_t i = 0; i < output.length(); ++i) {
        UChar c = output.charAt(i);
        if (c == 0x00A0 || c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 ||
            c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000) {
            output.setCharAt(i, u' ');
        }
    }
    std::string result;
    output.toUTF8String(result);
    return result;
}

}  // namespace

std::string normalize_text(std::string_view raw) {
    const std::string composed = nfc(raw);
    std::string out;
    out.reserve(composed.size());
    bool pending_space = false;
    for (unsigned char c : composed) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(c));
    }
    return out;
}

std::string fold_case(std::string_view text) {
    const std::string normalized = normalize_text(text);
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(
        icu::StringPiece(normalized.data(), static_cast<int32_t>(normalized.size())));
    u.foldCase();
    std::string out;
    u.toUTF8String(out);
    return out;
}

std::vector<Token> CharTokenizer::segment(std::string_view text) const {
    std::vector<Token> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        const std::size_t len = std::min(utf8_length(c), text.size() - i);
        if (!is_space(c)) tokens.push_back({std::string(text.substr(i, len)), i, i + len});
        i += len;
    }
    return tokens;
}

WordPunctTokenizer::WordPunctTokenizer(std::vector<std::string> specials)
    : specials_(std::move(specials)) {
    std::erase_if(specials_, [](const std::string& s) { return s.empty(); });
    // Longest literal wins when several match at one position.
    std::sort(specials_.begin(), specials_.end(),
              [](const std::string& a, const std::string& b) { return a.size() > b.size(); });
}

std::string WordPunctTokenizer::id() const {
    std::string out = "wordpunct";
    for (const auto& s : specials_) out += "+" + s;
    return out;
}

std::vector<Token> WordPunctTokenizer::segment(std::string_view text) const {
    std::vector<Token> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (is_space(c)) {
            ++i;
            continue;
        }
        bool matched = false;
        for (const auto& special : specials_) {
            if (text.substr(i, special.size()) == special) {
                tokens.push_back({special, i, i + special.size()});
                i += special.size();
                matched = true;
                break;
            }
        }
        if (matched) continue;
        if (is_word_char(c)) {
            std::size_t j = i;
            while (j < text.size() && is_word_char(static_cast<unsigned char>(text[j]))) {
                bool special_here = false;
                for (const auto& special : specials_) {
                    if (text.substr(j, special.size()) == special) special_here = true;
                }
                if (special_here) break;
                ++j;
            }
            tokens.push_back({std::string(text.substr(i, j - i)), i, j});
            i = j;
        } else {
            tokens.push_back({std::string(text.substr(i, 1)), i, i + 1});
            ++i;
        }
    }
    return tokens;
}

Tokenization tokenize_with_spans(std::string_view text, const Tokenizer& tokenizer) {
    Tokenization out;
    out.tokens = tokenizer.segment(text);

    std::size_t previous_end = 0;
    for (std::size_t t = 0; t < out.tokens.size(); ++t) {
        const Token& tok = out.tokens[t];
        if (tok.begin >= tok.end || tok.end > text.size() || tok.begin < previous_end ||
            text.substr(tok.begin, tok.end - tok.begin) != tok.text) {
            throw Error(Errc::TokenizerFailure,
                        fmt::format("tokenizer '{}' produced an invalid span for token {}", tokenizer.id(), t));
        }
        previous_end = tok.end;
    }

    std::size_t next_token = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        if (is_space(static_cast<unsigned char>(text[i]))) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
        WordGroup word{std::string(text.substr(i, j - i)), i, j, next_token, 0};
        while (next_token < out.tokens.size() && out.tokens[next_token].begin < j) {
            const Token& tok = out.tokens[next_token];
            if (tok.begin < i || tok.end > j) {
                throw Error(Errc::TokenizerFailure,
                            fmt::format("token '{}' crosses a word boundary at offset {}", tok.text, tok.begin));
            }
            ++word.token_count;
            ++next_token;
        }
        if (word.token_count == 0) {
            throw Error(Errc::TokenizerFailure,
                        fmt::format("tokenizer '{}' left word '{}' without tokens", tokenizer.id(), word.text));
        }
        out.words.push_back(std::move(word));
        i = j;
    }
    return out;
}

const Tokenizer& default_tokenizer() {
    static const WordPunctTokenizer tokenizer;
    return tokenizer;
}

std::string assemble_context_text(std::string_view page_title, std::string_view section_title,
                                  std::string_view body, const std::vector<std::string>& aux_captions) {
    std::string joined;
    auto append = [&joined](std::string_view part) {
        std::string normalized = normalize_text(part);
        if (normalized.empty()) return;
        if (!joined.empty()) joined.push_back(' ');
        joined += normalized;
    };
    append(page_title);
    append(section_title);
    append(body);
    for (const auto& caption : aux_captions) append(caption);
    return joined;
}

Context::Context(std::string page_title, std::string section_title, std::string body,
                 std::vector<std::string> aux_captions)
    : page_title_(std::move(page_title)),
      section_title_(std::move(section_title)),
      body_(std::move(body)),
      aux_captions_(std::move(aux_captions)) {
    assembled_ = assemble_context_text(page_title_, section_title_, body_, aux_captions_);
    tokenize();
}

Context Context::from_text(std::string text) {
    Context ctx;
    ctx.body_ = std::move(text);
    ctx.assembled_ = normalize_text(ctx.body_);
    ctx.tokenize();
    return ctx;
}

void Context::tokenize() {
    tokenization_ = tokenize_with_spans(assembled_, default_tokenizer());
}

bool Context::operator==(const Context& other) const {
    return page_title_ == other.page_title_ && section_title_ == other.section_title_ &&
           body_ == other.body_ && aux_captions_ == other.aux_captions_ && assembled_ == other.assembled_;
}

bool is_word_aligned(std::string_view text, std::size_t begin, std::size_t end) {
    if (begin >= end || end > text.size()) return false;
    auto u = [&text](std::size_t i) { return static_cast<unsigned char>(text[i]); };
    if (is_space(u(begin)) || is_space(u(end - 1))) return false;
    auto cut_ok = [&](std::size_t p) {
        if (p == 0 || p == text.size()) return true;
        return !(is_word_char(u(p - 1)) && is_word_char(u(p)));
    };
    return cut_ok(begin) && cut_ok(end);
}

HighlightSet HighlightSet::from_offsets(const Context& context,
                                        const std::vector<std::pair<std::size_t, std::size_t>>& offsets) {
    const std::string& text = context.assembled_text();
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        const auto [b, e] = offsets[i];
        if (e > text.size() || b >= e) {
            throw SpanError(i, fmt::format("span {} [{}, {}) is empty or outside the context (length {})", i, b,
                                           e, text.size()));
        }
        if (!is_word_aligned(text, b, e)) {
            throw SpanError(i, fmt::format("span {} [{}, {}) is not aligned to word boundaries", i, b, e));
        }
    }
    auto sorted = offsets;
    std::sort(sorted.begin(), sorted.end());
    HighlightSet set;
    for (const auto& [b, e] : sorted) {
        if (!set.spans_.empty() && b < set.spans_.back().end) {
            set.spans_.back().end = std::max(set.spans_.back().end, e);
        } else {
            set.spans_.push_back({b, e, {}});
        }
    }
    for (auto& span : set.spans_) span.text = text.substr(span.begin, span.end - span.begin);
    return set;
}

std::vector<std::string> HighlightSet::texts() const {
    std::vector<std::string> out;
    out.reserve(spans_.size());
    for (const auto& s : spans_) out.push_back(s.text);
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> HighlightSet::offsets() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(spans_.size());
    for (const auto& s : spans_) out.emplace_back(s.begin, s.end);
    return out;
}

void validate_highlights(const Context& context, const HighlightSet& highlights) {
    const std::string& text = context.assembled_text();
    std::size_t previous_end = 0;
    for (std::size_t i = 0; i < highlights.size(); ++i) {
        const auto& s = highlights.spans()[i];
        if (!is_word_aligned(text, s.begin, s.end) || text.substr(s.begin, s.end - s.begin) != s.text) {
            throw SpanError(i, fmt::format("highlight {} does not slice its context", i));
        }
        if (i > 0 && s.begin < previous_end) {
            throw SpanError(i, fmt::format("highlight {} overlaps or precedes highlight {}", i, i - 1));
        }
        previous_end = s.end;
    }
}

std::size_t count_words(std::string_view text) {
    std::size_t count = 0;
    bool in_word = false;
    for (unsigned char c : text) {
        if (is_space(c)) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++count;
        }
    }
    return count;
}

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::string hex64(std::uint64_t value) { return fmt::format("{:016x}", value); }

Vector hashed_unit_vector(std::string_view key, std::size_t dim) {
    std::mt19937_64 rng(fnv1a64(key));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
    const double norm = v.norm();
    if (norm > 0) v /= norm;
    return v;
}

void TrainingConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(Errc::DataFormatError, "invalid config: " + what); };
    if (!(theta > -1.0 && theta < 1.0)) fail("theta must lie in (-1, 1)");
    if (!(alpha >= 0.0)) fail("alpha must be >= 0");
    if (max_prompt_words == 0) fail("max_prompt_words must be > 0");
    if (input_token_budget == 0 || output_token_budget == 0 || prompting_output_budget == 0)
        fail("token budgets must be > 0");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (batch_size == 0) fail("batch_size must be > 0");
    if (model_dim == 0 || hidden_dim == 0) fail("model dimensions must be > 0");
    if (vocab_limit < 8) fail("vocab_limit must be >= 8");
    if (separator.empty()) fail("separator must be non-empty");
}

}  // namespace ctrlcic::core
