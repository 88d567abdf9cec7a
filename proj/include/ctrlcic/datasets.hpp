#pragma once

// Page-record ingestion, weakly supervised Ctrl-CIC dataset construction,
// the synthetic verification corpus, and JSONL persistence.

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcic/core.hpp"
#include "ctrlcic/embedding.hpp"

namespace ctrlcic::datasets {

struct ImageRecord {
    std::string image_ref;
    std::string caption;
    std::string attribution;
};

struct SectionRecord {
    std::string section_title;
    std::string section_text;
    std::vector<ImageRecord> images;
};

struct PageRecord {
    std::string page_title;
    std::vector<SectionRecord> sections;
};

/// Throws MalformedRecord naming the first missing or mistyped field.
PageRecord page_from_json(const nlohmann::json& j);
nlohmann::json page_to_json(const PageRecord& page);

/// image_ref -> feature vector. Refs missing from the store get a hashed
/// pseudo feature of `dim` entries.
struct FeatureStore {
    std::size_t dim = 64;
    std::unordered_map<std::string, Vector> vectors;

    core::ImageFeature lookup(const std::string& image_ref) const;
    bool contains(const std::string& image_ref) const { return vectors.count(image_ref) != 0; }

    /// JSONL lines of {"image_ref": ..., "vector": [...]}; every vector must
    /// have the same length.
    static FeatureStore load(const std::filesystem::path& path);
};

/// One sample per captioned image. The section's other captions form the
/// auxiliary captions; the image's own caption is the target.
std::vector<core::CICSample> samples_from_page(const PageRecord& page, std::size_t page_index,
                                               const FeatureStore& features);

struct IngestResult {
    std::vector<core::CICSample> samples;
    std::size_t pages = 0;
    std::size_t malformed = 0;
    std::vector<std::string> errors;  // "line N: message" per skipped record
};

/// Malformed lines are skipped and counted.
IngestResult ingest_pages(const std::filesystem::path& path, const FeatureStore& features);
IngestResult ingest_pages(std::istream& in, const FeatureStore& features);

struct BuildReport {
    std::size_t emitted = 0;
    std::size_t dropped = 0;
    std::size_t empty_highlight = 0;
    std::vector<std::string> dropped_ids;

    nlohmann::json to_json() const;
};

struct BuildResult {
    std::vector<core::CtrlCICSample> samples;
    BuildReport report;
};

/// Relevance pipeline per sample: mined highlights (theta, max_prompt_words)
/// and s/2 + 0.5 token weights. Samples with a degenerate embedding or empty
/// caption are dropped and counted.
BuildResult build_ctrlcic_dataset(const std::vector<core::CICSample>& samples,
                                  const modeling::EmbeddingProvider& provider, const core::TrainingConfig& config);

struct SyntheticSpec {
    std::size_t num_contexts = 50;
    std::size_t facts_per_context = 3;
    std::size_t eval_contexts = 10;
    std::uint64_t seed = 0;
    std::size_t image_dim = 64;
    std::string weight_provider = "hash-onehot-4096";
};

struct SyntheticCorpus {
    std::vector<core::CtrlCICSample> train;
    std::vector<core::CtrlCICSample> eval;
};

inline const std::vector<std::string>& synthetic_colors() {
    static const std::vector<std::string> v{"red", "blue", "green", "yellow", "black", "white", "brown", "purple"};
    return v;
}
inline const std::vector<std::string>& synthetic_animals() {
    static const std::vector<std::string> v{"fox", "bird", "cat", "dog", "horse", "rabbit", "bear", "owl"};
    return v;
}

/// Caption for one fact: "a <color> <animal>".
std::string synthetic_caption(const std::string& color, const std::string& animal);

/// Pseudo image feature for a fact ("red fox").
core::ImageFeature synthetic_image(const std::string& fact, std::size_t dim);

/// Contexts list K facts "The <place> has a <color> <animal>." with distinct
/// colors and animals; one sample per fact whose highlight is the
/// "<color> <animal>" span. Train and eval contexts never share a fact
/// combination.
SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec);

// JSONL --------------------------------------------------------------------

nlohmann::json context_to_json(const core::Context& context);
core::Context context_from_json(const nlohmann::json& j);

nlohmann::json sample_to_json(const core::CICSample& sample);
nlohmann::json sample_to_json(const core::CtrlCICSample& sample);
/// Throws SchemaViolation naming the field; `line` is 1-based, 0 when unknown.
core::CICSample cic_sample_from_json(const nlohmann::json& j, std::size_t line = 0);
core::CtrlCICSample ctrl_sample_from_json(const nlohmann::json& j, std::size_t line = 0);

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);
/// Blank lines are skipped. Throws SchemaViolation with the line number on
/// unparseable JSON.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

void write_samples(const std::filesystem::path& path, const std::vector<core::CICSample>& samples);
void write_samples(const std::filesystem::path& path, const std::vector<core::CtrlCICSample>& samples);
std::vector<core::CICSample> read_cic_samples(const std::filesystem::path& path);
std::vector<core::CtrlCICSample> read_ctrl_samples(const std::filesystem::path& path);

}  // namespace ctrlcic::datasets
