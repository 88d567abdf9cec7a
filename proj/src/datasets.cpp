#include "ctrlcic/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "ctrlcic/relevance.hpp"

namespace ctrlcic::datasets {

namespace {

using nlohmann::json;

template <typename T>
T field(const json& j, const char* name, Errc code, std::size_t line) {
    const auto where = line == 0 ? std::string() : fmt::format("line {}: ", line);
    if (!j.is_object() || !j.contains(name)) {
        throw Error(code, fmt::format("{}missing field '{}'", where, name));
    }
    try {
        return j.at(name).get<T>();
    } catch (const json::exception&) {
        throw Error(code, fmt::format("{}field '{}' has the wrong type", where, name));
    }
}

template <typename T>
T optional_field(const json& j, const char* name, T fallback, Errc code, std::size_t line) {
    if (!j.contains(name)) return fallback;
    return field<T>(j, name, code, line);
}

Vector to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> from_vector(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

PageRecord page_from_json(const json& j) {
    constexpr auto E = Errc::MalformedRecord;
    PageRecord page;
    page.page_title = field<std::string>(j, "page_title", E, 0);
    const auto sections = field<json>(j, "sections", E, 0);
    if (!sections.is_array()) throw Error(E, "field 'sections' must be an array");
    for (const auto& s : sections) {
        SectionRecord section;
        section.section_title = field<std::string>(s, "section_title", E, 0);
        section.section_text = field<std::string>(s, "section_text", E, 0);
        const auto images = optional_field<json>(s, "images", json::array(), E, 0);
        if (!images.is_array()) throw Error(E, "field 'images' must be an array");
        for (const auto& im : images) {
            ImageRecord image;
            image.image_ref = field<std::string>(im, "image_ref", E, 0);
            image.caption = optional_field<std::string>(im, "caption", "", E, 0);
            image.attribution = optional_field<std::string>(im, "attribution", "", E, 0);
            section.images.push_back(std::move(image));
        }
        page.sections.push_back(std::move(section));
    }
    return page;
}

json page_to_json(const PageRecord& page) {
    json sections = json::array();
    for (const auto& s : page.sections) {
        json images = json::array();
        for (const auto& im : s.images) {
            images.push_back({{"image_ref", im.image_ref}, {"caption", im.caption}, {"attribution", im.attribution}});
        }
        sections.push_back({{"section_title", s.section_title}, {"section_text", s.section_text}, {"images", images}});
    }
    return {{"page_title", page.page_title}, {"sections", sections}};
}

core::ImageFeature FeatureStore::lookup(const std::string& image_ref) const {
    const auto it = vectors.find(image_ref);
    if (it != vectors.end()) return {it->second, image_ref};
    return {core::hashed_unit_vector("image:" + image_ref, dim), image_ref};
}

FeatureStore FeatureStore::load(const std::filesystem::path& path) {
    FeatureStore store;
    bool first = true;
    std::size_t line = 0;
    for (const auto& j : read_jsonl(path)) {
        ++line;
        const auto ref = field<std::string>(j, "image_ref", Errc::SchemaViolation, line);
        const auto values = field<std::vector<double>>(j, "vector", Errc::SchemaViolation, line);
        if (first) {
            store.dim = values.size();
            first = false;
        } else if (values.size() != store.dim) {
            throw Error(Errc::DimensionMismatch,
                        fmt::format("feature '{}' has dim {}, store dim is {}", ref, values.size(), store.dim));
        }
        store.vectors[ref] = to_vector(values);
    }
    return store;
}

std::vector<core::CICSample> samples_from_page(const PageRecord& page, std::size_t page_index,
                                               const FeatureStore& features) {
    std::vector<core::CICSample> out;
    for (std::size_t s = 0; s < page.sections.size(); ++s) {
        const auto& section = page.sections[s];
        for (std::size_t i = 0; i < section.images.size(); ++i) {
            const auto& image = section.images[i];
            if (core::normalize_text(image.caption).empty()) continue;
            std::vector<std::string> aux;
            for (std::size_t k = 0; k < section.images.size(); ++k) {
                if (k != i && !section.images[k].caption.empty()) aux.push_back(section.images[k].caption);
            }
            core::CICSample sample;
            sample.sample_id = fmt::format("p{}-s{}-i{}", page_index, s, i);
            sample.context = core::Context(page.page_title, section.section_title, section.section_text, aux);
            sample.image = features.lookup(image.image_ref);
            sample.target_caption = core::normalize_text(image.caption);
            out.push_back(std::move(sample));
        }
    }
    return out;
}

IngestResult ingest_pages(std::istream& in, const FeatureStore& features) {
    IngestResult result;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto page = page_from_json(json::parse(text));
            auto samples = samples_from_page(page, result.pages, features);
            ++result.pages;
            for (auto& s : samples) result.samples.push_back(std::move(s));
        } catch (const json::exception& e) {
            ++result.malformed;
            result.errors.push_back(fmt::format("line {}: {}", line, e.what()));
        } catch (const Error& e) {
            if (e.code() != Errc::MalformedRecord) throw;
            ++result.malformed;
            result.errors.push_back(fmt::format("line {}: {}", line, e.what()));
        }
    }
    return result;
}

IngestResult ingest_pages(const std::filesystem::path& path, const FeatureStore& features) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, fmt::format("cannot read '{}'", path.string()));
    return ingest_pages(in, features);
}

json BuildReport::to_json() const {
    return {{"emitted", emitted}, {"dropped", dropped}, {"empty_highlight", empty_highlight},
            {"dropped_ids", dropped_ids}};
}

BuildResult build_ctrlcic_dataset(const std::vector<core::CICSample>& samples,
                                  const modeling::EmbeddingProvider& provider, const core::TrainingConfig& config) {
    BuildResult result;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& sample = samples[i];
        relevance::RelevanceScores scores;
        try {
            scores = relevance::score_context(sample.context, sample.target_caption, provider);
        } catch (const Error& e) {
            if (e.code() != Errc::DegenerateEmbedding && e.code() != Errc::EmptyCaption) throw;
            ++result.report.dropped;
            result.report.dropped_ids.push_back(sample.sample_id);
            continue;
        }
        core::CtrlCICSample out;
        out.sample_id = sample.sample_id;
        out.context = sample.context;
        out.image = sample.image;
        out.highlights = relevance::derive_training_highlights(scores.word_scores, sample.context, config.theta,
                                                               config.max_prompt_words);
        out.target_caption = sample.target_caption;
        out.sample_index = i;
        out.highlight_index = 0;
        out.token_weights = relevance::normalize_to_weights(scores.token_scores).token_weights;
        if (out.highlights.empty()) ++result.report.empty_highlight;
        ++result.report.emitted;
        result.samples.push_back(std::move(out));
    }
    return result;
}

std::string synthetic_caption(const std::string& color, const std::string& animal) {
    return fmt::format("a {} {}", color, animal);
}

core::ImageFeature synthetic_image(const std::string& fact, std::size_t dim) {
    return {core::hashed_unit_vector("synthetic-image:" + fact, dim), "synthetic:" + fact};
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
    const auto& colors = synthetic_colors();
    const auto& animals = synthetic_animals();
    static const std::vector<std::string> places{"park", "farm", "zoo", "forest", "garden", "valley", "meadow",
                                                 "island"};
    if (spec.facts_per_context == 0 || spec.facts_per_context > std::min(colors.size(), animals.size())) {
        throw Error(Errc::DataFormatError, fmt::format("facts_per_context must be in [1, {}]",
                                                       std::min(colors.size(), animals.size())));
    }
    if (spec.eval_contexts > spec.num_contexts) {
        throw Error(Errc::DataFormatError, "eval_contexts exceeds num_contexts");
    }
    const auto provider = modeling::make_provider(spec.weight_provider);

    std::mt19937_64 rng(spec.seed);
    std::set<std::vector<std::string>> seen;
    SyntheticCorpus corpus;
    const std::size_t train_contexts = spec.num_contexts - spec.eval_contexts;
    std::vector<std::size_t> color_order(colors.size());
    std::vector<std::size_t> animal_order(animals.size());

    for (std::size_t c = 0; c < spec.num_contexts; ++c) {
        std::vector<std::string> facts;
        std::vector<std::string> combo;
        do {
            std::iota(color_order.begin(), color_order.end(), 0);
            std::iota(animal_order.begin(), animal_order.end(), 0);
            std::shuffle(color_order.begin(), color_order.end(), rng);
            std::shuffle(animal_order.begin(), animal_order.end(), rng);
            facts.clear();
            for (std::size_t k = 0; k < spec.facts_per_context; ++k) {
                facts.push_back(colors[color_order[k]] + " " + animals[animal_order[k]]);
            }
            combo = facts;
            std::sort(combo.begin(), combo.end());
        } while (seen.count(combo) != 0);
        seen.insert(combo);

        const std::string& place = places[c % places.size()];
        std::string text;
        std::vector<std::pair<std::size_t, std::size_t>> spans;
        for (const auto& fact : facts) {
            if (!text.empty()) text += ' ';
            text += fmt::format("The {} has a ", place);
            spans.emplace_back(text.size(), text.size() + fact.size());
            text += fact + ".";
        }
        const core::Context context = core::Context::from_text(text);

        for (std::size_t k = 0; k < facts.size(); ++k) {
            core::CtrlCICSample s;
            s.sample_id = fmt::format("synth-{:03}-{}", c, k);
            s.context = context;
            s.image = synthetic_image(facts[k], spec.image_dim);
            s.highlights = core::HighlightSet::from_offsets(context, {spans[k]});
            s.target_caption = synthetic_caption(colors[color_order[k]], animals[animal_order[k]]);
            s.sample_index = c;
            s.highlight_index = k;
            const auto scores = relevance::score_context(context, s.target_caption, *provider);
            s.token_weights = relevance::normalize_to_weights(scores.token_scores).token_weights;
            (c < train_contexts ? corpus.train : corpus.eval).push_back(std::move(s));
        }
    }
    return corpus;
}

// JSONL --------------------------------------------------------------------

json context_to_json(const core::Context& context) {
    return {{"page_title", context.page_title()},
            {"section_title", context.section_title()},
            {"body", context.body()},
            {"aux_captions", context.aux_captions()},
            {"assembled_text", context.assembled_text()}};
}

core::Context context_from_json(const json& j) {
    constexpr auto E = Errc::SchemaViolation;
    return core::Context(optional_field<std::string>(j, "page_title", "", E, 0),
                         optional_field<std::string>(j, "section_title", "", E, 0),
                         field<std::string>(j, "body", E, 0),
                         optional_field<std::vector<std::string>>(j, "aux_captions", {}, E, 0));
}

namespace {

json image_to_json(const core::ImageFeature& image) {
    return {{"source_id", image.source_id}, {"vector", from_vector(image.vector)}};
}

core::ImageFeature image_from_json(const json& j, std::size_t line) {
    constexpr auto E = Errc::SchemaViolation;
    return {to_vector(field<std::vector<double>>(j, "vector", E, line)),
            optional_field<std::string>(j, "source_id", "", E, line)};
}

core::Context context_field(const json& j, std::size_t line) {
    const auto c = field<json>(j, "context", Errc::SchemaViolation, line);
    if (!c.contains("body")) {
        throw Error(Errc::SchemaViolation,
                    fmt::format("{}missing field 'context.body'", line == 0 ? "" : fmt::format("line {}: ", line)));
    }
    return context_from_json(c);
}

}  // namespace

json sample_to_json(const core::CICSample& s) {
    return {{"sample_id", s.sample_id},
            {"context", context_to_json(s.context)},
            {"image", image_to_json(s.image)},
            {"target_caption", s.target_caption}};
}

json sample_to_json(const core::CtrlCICSample& s) {
    return {{"sample_id", s.sample_id},
            {"context", context_to_json(s.context)},
            {"image", image_to_json(s.image)},
            {"highlights", s.highlights.offsets()},
            {"target_caption", s.target_caption},
            {"sample_index", s.sample_index},
            {"highlight_index", s.highlight_index},
            {"token_weights", s.token_weights}};
}

core::CICSample cic_sample_from_json(const json& j, std::size_t line) {
    constexpr auto E = Errc::SchemaViolation;
    core::CICSample s;
    s.sample_id = field<std::string>(j, "sample_id", E, line);
    s.context = context_field(j, line);
    s.image = image_from_json(field<json>(j, "image", E, line), line);
    s.target_caption = field<std::string>(j, "target_caption", E, line);
    return s;
}

core::CtrlCICSample ctrl_sample_from_json(const json& j, std::size_t line) {
    constexpr auto E = Errc::SchemaViolation;
    core::CtrlCICSample s;
    s.sample_id = field<std::string>(j, "sample_id", E, line);
    s.context = context_field(j, line);
    s.image = image_from_json(field<json>(j, "image", E, line), line);
    const auto offsets = field<std::vector<std::pair<std::size_t, std::size_t>>>(j, "highlights", E, line);
    s.highlights = core::HighlightSet::from_offsets(s.context, offsets);
    s.target_caption = field<std::string>(j, "target_caption", E, line);
    s.sample_index = optional_field<std::size_t>(j, "sample_index", 0, E, line);
    s.highlight_index = optional_field<std::size_t>(j, "highlight_index", 0, E, line);
    s.token_weights = optional_field<std::vector<double>>(j, "token_weights", {}, E, line);
    if (!s.token_weights.empty() && s.token_weights.size() != s.context.tokens().size()) {
        throw Error(E, fmt::format("{}token_weights has {} entries for {} tokens",
                                   line == 0 ? "" : fmt::format("line {}: ", line), s.token_weights.size(),
                                   s.context.tokens().size()));
    }
    return s;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::Io, fmt::format("cannot write '{}'", path.string()));
    for (const auto& r : records) out << r.dump() << '\n';
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, fmt::format("cannot read '{}'", path.string()));
    std::vector<json> out;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(json::parse(text));
        } catch (const json::exception& e) {
            throw Error(Errc::SchemaViolation, fmt::format("line {}: invalid JSON: {}", line, e.what()));
        }
    }
    return out;
}

void write_samples(const std::filesystem::path& path, const std::vector<core::CICSample>& samples) {
    std::vector<json> records;
    for (const auto& s : samples) records.push_back(sample_to_json(s));
    write_jsonl(path, records);
}

void write_samples(const std::filesystem::path& path, const std::vector<core::CtrlCICSample>& samples) {
    std::vector<json> records;
    for (const auto& s : samples) records.push_back(sample_to_json(s));
    write_jsonl(path, records);
}

namespace {

template <typename Sample, typename Parse>
std::vector<Sample> read_samples(const std::filesystem::path& path, Parse parse) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, fmt::format("cannot read '{}'", path.string()));
    std::vector<Sample> out;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw Error(Errc::SchemaViolation, fmt::format("line {}: invalid JSON: {}", line, e.what()));
        }
        try {
            out.push_back(parse(j, line));
        } catch (const SpanError& e) {
            throw Error(Errc::SchemaViolation, fmt::format("line {}: {}", line, e.what()));
        }
    }
    return out;
}

}  // namespace

std::vector<core::CICSample> read_cic_samples(const std::filesystem::path& path) {
    return read_samples<core::CICSample>(path, cic_sample_from_json);
}

std::vector<core::CtrlCICSample> read_ctrl_samples(const std::filesystem::path& path) {
    return read_samples<core::CtrlCICSample>(path, ctrl_sample_from_json);
}

}  // namespace ctrlcic::datasets
