#include "ctrlcic/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace ctrlcic::metrics {

double highlight_recall(std::string_view caption, const std::vector<std::string>& highlights) {
    if (highlights.empty()) throw Error(Errc::EmptyHighlights, "recall needs at least one highlight");
    const std::string folded = core::fold_case(caption);
    std::size_t hits = 0;
    for (const auto& h : highlights) {
        const std::string needle = core::fold_case(h);
        if (!needle.empty() && folded.find(needle) != std::string::npos) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(highlights.size());
}

double highlight_recall(std::string_view caption, const core::HighlightSet& highlights) {
    return highlight_recall(caption, highlights.texts());
}

std::vector<std::string> metric_tokens(std::string_view text) {
    std::vector<std::string> out;
    for (const auto& t : core::default_tokenizer().segment(core::fold_case(text))) out.push_back(t.text);
    return out;
}

double div_n(std::span<const std::string> captions, int n) {
    if (captions.size() != 5) {
        throw Error(Errc::GroupSizeError, fmt::format("Div-N needs 5 captions, got {}", captions.size()));
    }
    if (n < 1) throw Error(Errc::DataFormatError, "n must be positive");
    std::set<std::vector<std::string>> distinct;
    std::size_t total = 0;
    for (const auto& c : captions) {
        const auto tokens = metric_tokens(c);
        const auto un = static_cast<std::size_t>(n);
        for (std::size_t i = 0; i + un <= tokens.size(); ++i) {
            distinct.emplace(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                             tokens.begin() + static_cast<std::ptrdiff_t>(i + un));
            ++total;
        }
    }
    if (total == 0) throw Error(Errc::DegenerateInput, fmt::format("no {}-grams in the caption group", n));
    return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

namespace {

double cosine(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) {
        throw Error(Errc::DimensionMismatch, fmt::format("vectors of length {} and {}", a.size(), b.size()));
    }
    const double na = a.norm();
    const double nb = b.norm();
    if (na < 1e-12 || nb < 1e-12) throw Error(Errc::DegenerateEmbedding, "zero-norm embedding");
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

}  // namespace

double clip_score(const Vector& caption_embedding, const Vector& image_embedding) {
    return 2.5 * std::max(cosine(caption_embedding, image_embedding), 0.0);
}

std::vector<std::pair<std::size_t, std::size_t>> split_sentences(std::string_view text) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    std::size_t start = 0;
    auto emit = [&](std::size_t end) {
        std::size_t b = start;
        while (b < end && is_space(text[b])) ++b;
        if (b < end) out.emplace_back(b, end);
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if ((c == '.' || c == '!' || c == '?') && (i + 1 == text.size() || is_space(text[i + 1]))) {
            emit(i + 1);
            start = i + 1;
        }
    }
    emit(text.size());
    return out;
}

double clip_score_sent(std::string_view caption, const core::Context& context, const core::HighlightSet& highlights,
                       const modeling::EmbeddingProvider& provider) {
    const std::string& text = context.assembled_text();
    Vector anchor = Vector::Zero(static_cast<Eigen::Index>(provider.dim()));
    std::size_t count = 0;
    for (const auto& [b, e] : split_sentences(text)) {
        const bool hit = std::any_of(highlights.spans().begin(), highlights.spans().end(),
                                     [&](const core::HighlightSpan& s) { return s.begin < e && b < s.end; });
        if (!hit) continue;
        anchor += provider.encode_sentence(std::string_view(text).substr(b, e - b));
        ++count;
    }
    if (count == 0) throw Error(Errc::NoHighlightedSentence, "no context sentence contains a highlight");
    anchor /= static_cast<double>(count);
    return cosine(provider.encode_sentence(caption), anchor);
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

}  // namespace

double bleu4(std::string_view candidate, std::string_view reference) {
    const auto cand = metric_tokens(candidate);
    const auto ref = metric_tokens(reference);
    if (cand.empty() || ref.empty()) return 0.0;
    const std::size_t max_order = std::min<std::size_t>(4, cand.size());
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= max_order; ++n) {
        const auto cc = ngram_counts(cand, n);
        const auto rc = ngram_counts(ref, n);
        std::size_t matched = 0;
        std::size_t total = 0;
        for (const auto& [gram, count] : cc) {
            total += count;
            const auto it = rc.find(gram);
            if (it != rc.end()) matched += std::min(count, it->second);
        }
        if (matched == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
    }
    const double c = static_cast<double>(cand.size());
    const double r = static_cast<double>(ref.size());
    const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
    return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_order));
}

double rouge_l(std::string_view candidate, std::string_view reference) {
    const auto a = metric_tokens(candidate);
    const auto b = metric_tokens(reference);
    if (a.empty() || b.empty()) return 0.0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[b.size()]);
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(a.size());
    const double r = lcs / static_cast<double>(b.size());
    return 100.0 * 2.0 * p * r / (p + r);
}

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

namespace {

double pearson(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw Error(Errc::DegenerateInput, "constant input vector");
    return sxy / std::sqrt(sxx * syy);
}

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
    double concordant = 0.0, discordant = 0.0, ties_x = 0.0, ties_y = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = i + 1; j < x.size(); ++j) {
            const double dx = x[i] - x[j];
            const double dy = y[i] - y[j];
            if (dx == 0.0 && dy == 0.0) continue;
            if (dx == 0.0) {
                ties_x += 1.0;
            } else if (dy == 0.0) {
                ties_y += 1.0;
            } else if ((dx > 0.0) == (dy > 0.0)) {
                concordant += 1.0;
            } else {
                discordant += 1.0;
            }
        }
    }
    const double denom = std::sqrt((concordant + discordant + ties_x) * (concordant + discordant + ties_y));
    if (denom == 0.0) throw Error(Errc::DegenerateInput, "Kendall tau undefined for constant input");
    return (concordant - discordant) / denom;
}

}  // namespace

Correlations correlations(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw Error(Errc::DegenerateInput, fmt::format("length mismatch: {} vs {}", x.size(), y.size()));
    }
    if (x.size() < 3) throw Error(Errc::DegenerateInput, "at least 3 points required");
    Correlations c;
    c.pearson = pearson(x, y);
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    c.spearman = pearson(rx, ry);
    c.kendall_tau = kendall_tau_b(x, y);
    return c;
}

// Reports ------------------------------------------------------------------

MetricReport compute_report(const std::vector<CaptionRecord>& records, const modeling::EmbeddingProvider& provider) {
    MetricReport report;
    report.captions = records.size();
    double recall_sum = 0.0, clip_sum = 0.0, clip_sent_sum = 0.0, bleu_sum = 0.0, rouge_sum = 0.0;
    std::size_t ref_count = 0;
    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& r : records) {
        if (!r.group_id.empty()) groups[r.group_id].push_back(r.caption);
        if (!r.highlights.empty()) {
            recall_sum += highlight_recall(r.caption, r.highlights);
            ++report.recall_count;
            try {
                clip_sent_sum += clip_score_sent(r.caption, r.context, r.highlights, provider);
                ++report.clip_sent_count;
            } catch (const Error& e) {
                if (e.code() != Errc::NoHighlightedSentence && e.code() != Errc::DegenerateEmbedding &&
                    e.code() != Errc::EmptyCaption) {
                    throw;
                }
            }
        }
        if (r.image_embedding) {
            try {
                clip_sum += clip_score(provider.encode_sentence(r.caption), *r.image_embedding);
                ++report.clip_count;
            } catch (const Error& e) {
                if (e.code() != Errc::DegenerateEmbedding && e.code() != Errc::DimensionMismatch &&
                    e.code() != Errc::EmptyCaption) {
                    throw;
                }
            }
        }
        if (r.reference) {
            bleu_sum += bleu4(r.caption, *r.reference);
            rouge_sum += rouge_l(r.caption, *r.reference);
            ++ref_count;
        }
    }
    double d1 = 0.0, d2 = 0.0;
    for (const auto& [id, captions] : groups) {
        if (captions.size() != 5) {
            ++report.skipped_groups;
            continue;
        }
        try {
            const double g1 = div_n(captions, 1);
            const double g2 = div_n(captions, 2);
            d1 += g1;
            d2 += g2;
            ++report.div_groups;
        } catch (const Error& e) {
            if (e.code() != Errc::DegenerateInput) throw;
            ++report.skipped_groups;
        }
    }
    auto mean100 = [](double sum, std::size_t n) { return n == 0 ? 0.0 : 100.0 * sum / static_cast<double>(n); };
    report.recall = mean100(recall_sum, report.recall_count);
    report.clip_score = mean100(clip_sum, report.clip_count);
    report.clip_score_sent = mean100(clip_sent_sum, report.clip_sent_count);
    report.div_1 = mean100(d1, report.div_groups);
    report.div_2 = mean100(d2, report.div_groups);
    if (ref_count > 0) {
        report.bleu4 = bleu_sum / static_cast<double>(ref_count);
        report.rouge_l = rouge_sum / static_cast<double>(ref_count);
    }
    return report;
}

nlohmann::json MetricReport::to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"recall", recall},
            {"div_1", div_1},
            {"div_2", div_2},
            {"clip_score", clip_score},
            {"clip_score_sent", clip_score_sent},
            {"bleu4", opt(bleu4)},
            {"rouge_l", opt(rouge_l)},
            {"cider", opt(cider)},
            {"meteor", opt(meteor)},
            {"counts",
             {{"captions", captions},
              {"recall", recall_count},
              {"div_groups", div_groups},
              {"skipped_groups", skipped_groups},
              {"clip_score", clip_count},
              {"clip_score_sent", clip_sent_count}}}};
}

std::string MetricReport::to_csv() const {
    auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{:.4f}", *v) : std::string(); };
    std::ostringstream out;
    out << "recall,div_1,div_2,clip_score,clip_score_sent,bleu4,rouge_l,cider,meteor,captions\n";
    out << fmt::format("{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},{},{},{},{},{}\n", recall, div_1, div_2, clip_score,
                       clip_score_sent, opt(bleu4), opt(rouge_l), opt(cider), opt(meteor), captions);
    return out.str();
}

nlohmann::json caption_record_to_json(const CaptionRecord& r) {
    nlohmann::json j = {{"sample_id", r.sample_id},
                        {"group_id", r.group_id},
                        {"context",
                         {{"page_title", r.context.page_title()},
                          {"section_title", r.context.section_title()},
                          {"body", r.context.body()},
                          {"aux_captions", r.context.aux_captions()}}},
                        {"highlights", r.highlights.offsets()},
                        {"caption", r.caption}};
    if (r.image_embedding) {
        j["image_embedding"] = std::vector<double>(r.image_embedding->data(),
                                                   r.image_embedding->data() + r.image_embedding->size());
    }
    if (r.reference) j["reference"] = *r.reference;
    return j;
}

CaptionRecord caption_record_from_json(const nlohmann::json& j) {
    try {
        CaptionRecord r;
        r.sample_id = j.value("sample_id", "");
        r.group_id = j.value("group_id", "");
        const auto& c = j.at("context");
        r.context = core::Context(c.value("page_title", ""), c.value("section_title", ""), c.at("body").get<std::string>(),
                                  c.value("aux_captions", std::vector<std::string>{}));
        r.highlights = core::HighlightSet::from_offsets(
            r.context, j.value("highlights", std::vector<std::pair<std::size_t, std::size_t>>{}));
        r.caption = j.at("caption").get<std::string>();
        if (j.contains("image_embedding")) {
            const auto v = j.at("image_embedding").get<std::vector<double>>();
            r.image_embedding = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
        }
        if (j.contains("reference")) r.reference = j.at("reference").get<std::string>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::SchemaViolation, fmt::format("caption record: {}", e.what()));
    }
}

}  // namespace ctrlcic::metrics
