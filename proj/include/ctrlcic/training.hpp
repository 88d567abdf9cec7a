#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcic/core.hpp"
#include "ctrlcic/model.hpp"

namespace ctrlcic::modeling {

enum class ControllerKind { Prompting, Recalibration };

std::string_view to_string(ControllerKind kind);
ControllerKind parse_controller_kind(std::string_view name);

nlohmann::json config_to_json(const core::TrainingConfig& config);

/// Settings the toy backbone trains well with on one CPU core: a large
/// rate, strong decoupled decay and a few thousand steps.
core::TrainingConfig desk_config();

/// Missing keys keep the values already in `base`.
core::TrainingConfig config_from_json(const nlohmann::json& j, core::TrainingConfig base = {});

/// Decoupled weight decay Adam.
class AdamW {
public:
    AdamW(const ParamSet& shape, double beta1, double beta2, double weight_decay, double eps = 1e-8);

    void step(ParamSet& params, const ParamSet& grads, double learning_rate);

private:
    ParamSet m_;
    ParamSet v_;
    double beta1_;
    double beta2_;
    double weight_decay_;
    double eps_;
    std::size_t t_ = 0;
};

/// Serialized model state with everything needed to rebuild it for inference.
struct Checkpoint {
    static constexpr int kFormatVersion = 1;

    std::string kind;  // "prompting", "recalibration" or "weight_predictor"
    core::TrainingConfig config;
    std::string separator;
    nlohmann::json providers = nlohmann::json::object();
    std::vector<std::string> vocab;
    nlohmann::json shape = nlohmann::json::object();
    ParamSet params;
    std::vector<double> loss_trace;

    nlohmann::json to_json() const;
    static Checkpoint from_json(const nlohmann::json& j);

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

std::unique_ptr<ToyModel> load_model(const Checkpoint& checkpoint);
std::unique_ptr<ToyWeightPredictor> load_predictor(const Checkpoint& checkpoint);

/// Vocabulary over the contexts and captions of a dataset.
Vocabulary build_vocabulary(std::span<const core::CtrlCICSample> dataset, const core::TrainingConfig& config);

/// Context token ids truncated to the input budget (earliest tokens kept).
std::vector<int> context_ids(const Vocabulary& vocab, const core::Context& context, std::size_t input_budget);

/// Training example for the prompting controller: target = highlight prefix
/// followed by the caption. Overlong prefixes drop their lowest-relevance
/// highlights first.
TrainExample make_prompting_example(const core::CtrlCICSample& sample, const Vocabulary& vocab,
                                    const core::TrainingConfig& config);

/// Training example for the recalibration controller: context embeddings are
/// scaled by the sample's token weights. Throws DataFormatError without them.
TrainExample make_recalibration_example(const core::CtrlCICSample& sample, const Vocabulary& vocab,
                                        const core::TrainingConfig& config);

ToyModelShape shape_for(std::span<const core::CtrlCICSample> dataset, const core::TrainingConfig& config);

/// Trains a toy backbone for one controller regime. Deterministic for a fixed
/// config (including rng_seed) and dataset order.
Checkpoint train_controller(std::span<const core::CtrlCICSample> dataset, ControllerKind kind,
                            const core::TrainingConfig& config);

/// Trains the weight predictor against the samples' token weights as soft
/// binary cross-entropy targets.
Checkpoint train_weight_predictor(std::span<const core::CtrlCICSample> dataset, const core::TrainingConfig& config);

}  // namespace ctrlcic::modeling
