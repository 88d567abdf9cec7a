#include "ctrlcic/controllers.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace ctrlcic::controllers {

InferenceOptions InferenceOptions::from_config(const core::TrainingConfig& config) {
    InferenceOptions o;
    o.alpha = config.alpha;
    o.max_prompt_words = config.max_prompt_words;
    o.input_token_budget = config.input_token_budget;
    o.prompting_output_budget = config.prompting_output_budget;
    o.output_token_budget = config.output_token_budget;
    o.separator = config.separator;
    o.decode.seed = config.rng_seed;
    return o;
}

Matrix rctrl_apply_weights(const Matrix& fused, std::span<const double> weights) {
    if (static_cast<std::size_t>(fused.rows()) != weights.size() + 1) {
        throw Error(Errc::ShapeMismatch,
                    fmt::format("{} weights for {} text rows", weights.size(), fused.rows() - 1));
    }
    Matrix out = fused;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] < 0.0) throw Error(Errc::DataFormatError, fmt::format("negative weight at token {}", i));
        out.row(static_cast<Eigen::Index>(i + 1)) *= weights[i];
    }
    return out;
}

std::vector<double> rctrl_recalibrate(std::span<const double> predicted_weights, const std::vector<bool>& mask,
                                      double alpha) {
    if (predicted_weights.size() != mask.size()) {
        throw Error(Errc::ShapeMismatch,
                    fmt::format("{} weights but mask of length {}", predicted_weights.size(), mask.size()));
    }
    std::vector<double> out(predicted_weights.begin(), predicted_weights.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (mask[i]) out[i] += alpha;
    }
    return out;
}

std::vector<bool> highlight_token_mask(std::span<const core::Token> tokens, const core::HighlightSet& highlights) {
    std::vector<bool> mask(tokens.size(), false);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        for (const auto& span : highlights.spans()) {
            if (tokens[i].begin < span.end && span.begin < tokens[i].end) {
                mask[i] = true;
                break;
            }
        }
    }
    return mask;
}

namespace {

Matrix fused_embeddings(const modeling::EncoderDecoder& model, std::span<const int> ids,
                        const core::ImageFeature& image) {
    if (static_cast<std::size_t>(image.vector.size()) != model.image_dim()) {
        throw Error(Errc::DimensionMismatch,
                    fmt::format("image feature has dim {}, model expects {}", image.vector.size(), model.image_dim()));
    }
    return modeling::fuse_image_token(image.vector, model.embed(ids), model.image_projection());
}

modeling::DecodeParams capped(modeling::DecodeParams params, std::size_t budget) {
    params.max_length = std::min(params.max_length, budget);
    return params;
}

std::size_t tokens_after_last_separator(const std::vector<int>& ids) {
    const auto it = std::find(ids.rbegin(), ids.rend(), modeling::Vocabulary::kSep);
    return static_cast<std::size_t>(std::distance(ids.rbegin(), it));
}

ControlledGeneration run_prompting(const modeling::EncoderDecoder& model, const core::Context& context,
                                   const core::ImageFeature& image, const core::HighlightSet& highlights,
                                   const std::vector<std::string>& highlight_texts, const InferenceOptions& options) {
    const auto& vocab = model.vocab();
    const auto ids = modeling::context_ids(vocab, context, options.input_token_budget);
    const Matrix states = model.encode(fused_embeddings(model, ids, image));

    const PromptPrefix prefix = assemble_prompt_prefix(highlight_texts, options.separator);
    const std::vector<int> forced = vocab.encode(prefix.rendered);

    ControlledGeneration g;
    g.controller_kind = ControllerKind::Prompting;
    g.applied_highlights = highlights;
    g.decode_params = capped(options.decode, options.prompting_output_budget);
    const std::vector<int> out = model.generate(states, forced, g.decode_params);
    g.raw_output = vocab.decode(out);
    ParsedOutput parsed = parse_pctrl_output(g.raw_output, vocab.separator());
    g.caption.text = std::move(parsed.caption);
    g.caption.token_count = tokens_after_last_separator(out);
    g.predicted_highlights = std::move(parsed.highlight_texts);
    return g;
}

ControlledGeneration run_recalibration(const modeling::EncoderDecoder& model,
                                       const modeling::WeightPredictor& predictor, const core::Context& context,
                                       const core::ImageFeature& image, const core::HighlightSet& highlights,
                                       const InferenceOptions& options) {
    const auto& vocab = model.vocab();
    const auto ids = modeling::context_ids(vocab, context, options.input_token_budget);
    const std::vector<double> predicted = predictor.predict(modeling::context_ids(predictor.vocab(), context,
                                                                                  options.input_token_budget));
    if (predicted.size() != ids.size()) {
        throw Error(Errc::ModelFailure,
                    fmt::format("weight predictor returned {} weights for {} tokens", predicted.size(), ids.size()));
    }
    const auto& tokens = context.tokens();
    const auto mask = highlight_token_mask(std::span<const core::Token>(tokens.data(), ids.size()), highlights);

    ControlledGeneration g;
    g.controller_kind = ControllerKind::Recalibration;
    g.applied_highlights = highlights;
    g.token_weights = rctrl_recalibrate(predicted, mask, options.alpha);
    g.decode_params = capped(options.decode, options.output_token_budget);
    const Matrix states = model.encode(rctrl_apply_weights(fused_embeddings(model, ids, image), g.token_weights));
    const std::vector<int> out = model.generate(states, {}, g.decode_params);
    g.raw_output = vocab.decode(out);
    g.caption.text = g.raw_output;
    g.caption.token_count = out.size();
    return g;
}

}  // namespace

ControlledGeneration pctrl_generate(const modeling::EncoderDecoder& model, const core::Context& context,
                                    const core::ImageFeature& image, const core::HighlightSet& highlights,
                                    const InferenceOptions& options) {
    core::validate_highlights(context, highlights);
    if (highlights.empty()) return pctrl_generate_cic(model, context, image, options);
    const auto texts = truncate_highlights_by_position(highlights.texts(), options.max_prompt_words);
    return run_prompting(model, context, image, highlights, texts, options);
}

ControlledGeneration pctrl_generate_cic(const modeling::EncoderDecoder& model, const core::Context& context,
                                        const core::ImageFeature& image, const InferenceOptions& options) {
    return run_prompting(model, context, image, {}, {}, options);
}

ControlledGeneration rctrl_generate(const modeling::EncoderDecoder& model, const modeling::WeightPredictor& predictor,
                                    const core::Context& context, const core::ImageFeature& image,
                                    const core::HighlightSet& highlights, const InferenceOptions& options) {
    core::validate_highlights(context, highlights);
    return run_recalibration(model, predictor, context, image, highlights, options);
}

ControlledGeneration rctrl_generate_cic(const modeling::EncoderDecoder& model,
                                        const modeling::WeightPredictor& predictor, const core::Context& context,
                                        const core::ImageFeature& image, const InferenceOptions& options) {
    return run_recalibration(model, predictor, context, image, {}, options);
}

}  // namespace ctrlcic::controllers
