#pragma once

// Inference-time control for both controller regimes and their CIC-mode
// (no highlight) fallbacks.

#include <span>
#include <string>
#include <vector>

#include "ctrlcic/core.hpp"
#include "ctrlcic/model.hpp"
#include "ctrlcic/prompt.hpp"
#include "ctrlcic/training.hpp"

namespace ctrlcic::controllers {

using modeling::ControllerKind;

struct InferenceOptions {
    double alpha = 0.1;
    std::size_t max_prompt_words = 40;
    std::size_t input_token_budget = 512;
    std::size_t prompting_output_budget = 192;
    std::size_t output_token_budget = 128;
    std::string separator = std::string(kDefaultSeparator);
    modeling::DecodeParams decode;

    static InferenceOptions from_config(const core::TrainingConfig& config);
};

struct ControlledGeneration {
    core::CaptionText caption;
    ControllerKind controller_kind = ControllerKind::Prompting;
    core::HighlightSet applied_highlights;
    modeling::DecodeParams decode_params;
    std::vector<std::string> predicted_highlights;  // prompting only: parsed prefix segments
    std::vector<double> token_weights;              // recalibration only: weights applied to context tokens
    std::string raw_output;
};

/// Scales text row i+1 of `fused` by weights[i]; row 0 (the image token) is
/// never scaled. Throws ShapeMismatch unless fused has weights.size()+1 rows,
/// DataFormatError on a negative weight.
Matrix rctrl_apply_weights(const Matrix& fused, std::span<const double> weights);

/// w_i + alpha on masked positions; no clamping.
std::vector<double> rctrl_recalibrate(std::span<const double> predicted_weights, const std::vector<bool>& mask,
                                      double alpha);

/// True for every token whose character span intersects a highlight span.
std::vector<bool> highlight_token_mask(std::span<const core::Token> tokens, const core::HighlightSet& highlights);

ControlledGeneration pctrl_generate(const modeling::EncoderDecoder& model, const core::Context& context,
                                    const core::ImageFeature& image, const core::HighlightSet& highlights,
                                    const InferenceOptions& options = {});

ControlledGeneration pctrl_generate_cic(const modeling::EncoderDecoder& model, const core::Context& context,
                                        const core::ImageFeature& image, const InferenceOptions& options = {});

ControlledGeneration rctrl_generate(const modeling::EncoderDecoder& model, const modeling::WeightPredictor& predictor,
                                    const core::Context& context, const core::ImageFeature& image,
                                    const core::HighlightSet& highlights, const InferenceOptions& options = {});

ControlledGeneration rctrl_generate_cic(const modeling::EncoderDecoder& model,
                                        const modeling::WeightPredictor& predictor, const core::Context& context,
                                        const core::ImageFeature& image, const InferenceOptions& options = {});

}  // namespace ctrlcic::controllers
