#include "ctrlcic/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "ctrlcic/prompt.hpp"

namespace ctrlcic::modeling {

std::string_view to_string(ControllerKind kind) {
    return kind == ControllerKind::Prompting ? "prompting" : "recalibration";
}

ControllerKind parse_controller_kind(std::string_view name) {
    if (name == "prompting" || name == "p-ctrl") return ControllerKind::Prompting;
    if (name == "recalibration" || name == "r-ctrl") return ControllerKind::Recalibration;
    throw Error(Errc::DataFormatError, fmt::format("unknown controller '{}'", name));
}

nlohmann::json config_to_json(const core::TrainingConfig& c) {
    return {
        {"theta", c.theta},
        {"alpha", c.alpha},
        {"max_prompt_words", c.max_prompt_words},
        {"input_token_budget", c.input_token_budget},
        {"output_token_budget", c.output_token_budget},
        {"prompting_output_budget", c.prompting_output_budget},
        {"learning_rate", c.learning_rate},
        {"adam_betas", {c.adam_betas.first, c.adam_betas.second}},
        {"weight_decay", c.weight_decay},
        {"batch_size", c.batch_size},
        {"total_steps", c.total_steps},
        {"rng_seed", c.rng_seed},
        {"model_dim", c.model_dim},
        {"hidden_dim", c.hidden_dim},
        {"vocab_limit", c.vocab_limit},
        {"separator", c.separator},
    };
}

core::TrainingConfig desk_config() {
    core::TrainingConfig c;
    c.learning_rate = 1e-2;
    c.weight_decay = 0.6;
    c.total_steps = 6000;
    c.batch_size = 12;
    return c;
}

core::TrainingConfig config_from_json(const nlohmann::json& j, core::TrainingConfig c) {
    try {
        auto take = [&j](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        take("theta", c.theta);
        take("alpha", c.alpha);
        take("max_prompt_words", c.max_prompt_words);
        take("input_token_budget", c.input_token_budget);
        take("output_token_budget", c.output_token_budget);
        take("prompting_output_budget", c.prompting_output_budget);
        take("learning_rate", c.learning_rate);
        if (j.contains("adam_betas")) {
            const auto& b = j.at("adam_betas");
            c.adam_betas = {b.at(0).get<double>(), b.at(1).get<double>()};
        }
        take("weight_decay", c.weight_decay);
        take("batch_size", c.batch_size);
        take("total_steps", c.total_steps);
        take("rng_seed", c.rng_seed);
        take("model_dim", c.model_dim);
        take("hidden_dim", c.hidden_dim);
        take("vocab_limit", c.vocab_limit);
        take("separator", c.separator);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::DataFormatError, fmt::format("bad config value: {}", e.what()));
    }
    return c;
}

// ---------------------------------------------------------------------------

AdamW::AdamW(const ParamSet& shape, double beta1, double beta2, double weight_decay, double eps)
    : m_(shape.zeros_like()), v_(shape.zeros_like()), beta1_(beta1), beta2_(beta2),
      weight_decay_(weight_decay), eps_(eps) {}

void AdamW::step(ParamSet& params, const ParamSet& grads, double learning_rate) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = params.values[i];
        const Matrix& g = grads.values[i];
        m_.values[i] = beta1_ * m_.values[i] + (1.0 - beta1_) * g;
        v_.values[i] = beta2_ * v_.values[i] + (1.0 - beta2_) * g.cwiseProduct(g);
        p *= (1.0 - learning_rate * weight_decay_);
        p.array() -= learning_rate * (m_.values[i].array() / bc1) /
                     ((v_.values[i].array() / bc2).sqrt() + eps_);
    }
}

// ---------------------------------------------------------------------------

nlohmann::json Checkpoint::to_json() const {
    return {
        {"format_version", kFormatVersion},
        {"kind", kind},
        {"config", config_to_json(config)},
        {"separator", separator},
        {"providers", providers},
        {"vocab", vocab},
        {"shape", shape},
        {"params", params.to_json()},
        {"loss_trace", loss_trace},
    };
}

Checkpoint Checkpoint::from_json(const nlohmann::json& j) {
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kFormatVersion) {
            throw Error(Errc::DataFormatError, fmt::format("unsupported checkpoint format version {}", version));
        }
        Checkpoint c;
        c.kind = j.at("kind").get<std::string>();
        c.config = config_from_json(j.at("config"));
        c.separator = j.at("separator").get<std::string>();
        c.providers = j.value("providers", nlohmann::json::object());
        c.vocab = j.at("vocab").get<std::vector<std::string>>();
        c.shape = j.at("shape");
        c.params = ParamSet::from_json(j.at("params"));
        c.loss_trace = j.value("loss_trace", std::vector<double>{});
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::DataFormatError, fmt::format("malformed checkpoint: {}", e.what()));
    }
}

void Checkpoint::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::Io, fmt::format("cannot write checkpoint '{}'", path.string()));
    out << to_json().dump() << '\n';
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, fmt::format("cannot read checkpoint '{}'", path.string()));
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::DataFormatError, fmt::format("checkpoint '{}' is not JSON: {}", path.string(), e.what()));
    }
    return from_json(j);
}

std::unique_ptr<ToyModel> load_model(const Checkpoint& c) {
    if (c.kind != "prompting" && c.kind != "recalibration") {
        throw Error(Errc::DataFormatError, fmt::format("checkpoint kind '{}' is not a controller", c.kind));
    }
    ToyModelShape shape;
    shape.model_dim = c.shape.at("model_dim").get<std::size_t>();
    shape.hidden_dim = c.shape.at("hidden_dim").get<std::size_t>();
    shape.image_dim = c.shape.at("image_dim").get<std::size_t>();
    shape.max_output = c.shape.at("max_output").get<std::size_t>();
    return std::make_unique<ToyModel>(Vocabulary(c.vocab), shape, c.params);
}

std::unique_ptr<ToyWeightPredictor> load_predictor(const Checkpoint& c) {
    if (c.kind != "weight_predictor") {
        throw Error(Errc::DataFormatError, fmt::format("checkpoint kind '{}' is not a weight predictor", c.kind));
    }
    return std::make_unique<ToyWeightPredictor>(Vocabulary(c.vocab), c.params);
}

// ---------------------------------------------------------------------------

Vocabulary build_vocabulary(std::span<const core::CtrlCICSample> dataset, const core::TrainingConfig& config) {
    std::vector<std::string> texts;
    texts.reserve(dataset.size() * 2);
    for (const auto& s : dataset) {
        texts.push_back(s.context.assembled_text());
        texts.push_back(s.target_caption);
    }
    return Vocabulary::build(texts, config.separator, config.vocab_limit);
}

std::vector<int> context_ids(const Vocabulary& vocab, const core::Context& context, std::size_t input_budget) {
    const auto& tokens = context.tokens();
    const std::size_t n = std::min(tokens.size(), input_budget);
    return vocab.encode(std::span<const core::Token>(tokens.data(), n));
}

namespace {

std::vector<int> target_ids(const Vocabulary& vocab, std::string_view text, std::size_t budget) {
    std::vector<int> ids = vocab.encode(text);
    if (ids.size() + 1 > budget) ids.resize(budget - 1);
    ids.push_back(Vocabulary::kEos);
    return ids;
}

double span_relevance(const core::CtrlCICSample& sample, const core::HighlightSpan& span) {
    if (sample.token_weights.empty()) return 0.0;
    double sum = 0.0;
    std::size_t n = 0;
    const auto& tokens = sample.context.tokens();
    for (std::size_t i = 0; i < tokens.size() && i < sample.token_weights.size(); ++i) {
        if (tokens[i].begin < span.end && span.begin < tokens[i].end) {
            sum += sample.token_weights[i];
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

TrainExample make_prompting_example(const core::CtrlCICSample& sample, const Vocabulary& vocab,
                                    const core::TrainingConfig& config) {
    TrainExample ex;
    ex.input_ids = context_ids(vocab, sample.context, config.input_token_budget);
    ex.image = sample.image.vector;

    std::vector<std::string> texts = sample.highlights.texts();
    std::vector<double> scores;
    for (const auto& span : sample.highlights.spans()) scores.push_back(span_relevance(sample, span));

    // Word cap first, then drop the weakest highlight until prefix + caption fit.
    const auto capped = controllers::truncate_highlights_by_score(texts, scores, config.max_prompt_words);
    std::vector<std::string> kept_texts;
    std::vector<double> kept_scores;
    for (std::size_t i = 0, k = 0; i < texts.size() && k < capped.size(); ++i) {
        if (texts[i] == capped[k]) {
            kept_texts.push_back(texts[i]);
            kept_scores.push_back(scores[i]);
            ++k;
        }
    }

    std::string target;
    while (true) {
        const auto prefix = controllers::assemble_prompt_prefix(kept_texts, config.separator);
        if (kept_texts.empty()) {
            target = prefix.rendered + core::normalize_text(sample.target_caption);
            break;
        }
        try {
            // One slot is reserved for eos.
            target = controllers::build_pctrl_training_target(prefix, sample.target_caption,
                                                              config.prompting_output_budget - 1, config.separator);
            break;
        } catch (const Error& e) {
            if (e.code() != Errc::BudgetExceeded) throw;
            std::size_t weakest = kept_scores.size() - 1;
            for (std::size_t k = kept_scores.size(); k-- > 0;) {
                if (kept_scores[k] < kept_scores[weakest]) weakest = k;
            }
            kept_texts.erase(kept_texts.begin() + static_cast<std::ptrdiff_t>(weakest));
            kept_scores.erase(kept_scores.begin() + static_cast<std::ptrdiff_t>(weakest));
        }
    }
    ex.target_ids = target_ids(vocab, target, config.prompting_output_budget);
    return ex;
}

TrainExample make_recalibration_example(const core::CtrlCICSample& sample, const Vocabulary& vocab,
                                        const core::TrainingConfig& config) {
    if (sample.token_weights.size() != sample.context.tokens().size()) {
        throw Error(Errc::DataFormatError,
                    fmt::format("sample '{}' has {} token weights for {} tokens", sample.sample_id,
                                sample.token_weights.size(), sample.context.tokens().size()));
    }
    TrainExample ex;
    ex.input_ids = context_ids(vocab, sample.context, config.input_token_budget);
    ex.image = sample.image.vector;
    ex.token_weights.assign(sample.token_weights.begin(),
                            sample.token_weights.begin() + static_cast<std::ptrdiff_t>(ex.input_ids.size()));
    ex.target_ids = target_ids(vocab, core::normalize_text(sample.target_caption), config.output_token_budget);
    return ex;
}

ToyModelShape shape_for(std::span<const core::CtrlCICSample> dataset, const core::TrainingConfig& config) {
    if (dataset.empty()) throw Error(Errc::DataFormatError, "dataset is empty");
    ToyModelShape shape;
    shape.model_dim = config.model_dim;
    shape.hidden_dim = config.hidden_dim;
    shape.image_dim = static_cast<std::size_t>(dataset.front().image.vector.size());
    shape.max_output = std::max(config.prompting_output_budget, config.output_token_budget);
    for (const auto& s : dataset) {
        if (static_cast<std::size_t>(s.image.vector.size()) != shape.image_dim) {
            throw Error(Errc::DataFormatError,
                        fmt::format("sample '{}' has image dim {}, expected {}", s.sample_id, s.image.vector.size(),
                                    shape.image_dim));
        }
    }
    if (shape.image_dim == 0) throw Error(Errc::DataFormatError, "image features are empty");
    return shape;
}

namespace {

template <typename LossFn>
std::vector<double> run_training(ParamSet& params, std::size_t example_count, const core::TrainingConfig& config,
                                 LossFn&& loss_fn) {
    std::vector<double> trace;
    trace.reserve(config.total_steps);
    if (config.total_steps == 0) return trace;
    AdamW optimizer(params, config.adam_betas.first, config.adam_betas.second, config.weight_decay);
    ParamSet grads = params.zeros_like();
    std::mt19937_64 rng(config.rng_seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(example_count);
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    const std::size_t batch = std::min(config.batch_size, example_count);
    for (std::size_t step = 0; step < config.total_steps; ++step) {
        grads.set_zero();
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            batch_loss += loss_fn(order[cursor++], grads);
        }
        batch_loss /= static_cast<double>(batch);
        if (!std::isfinite(batch_loss)) {
            throw Error(Errc::DivergenceDetected, fmt::format("loss became non-finite at step {}", step));
        }
        for (auto& g : grads.values) g /= static_cast<double>(batch);
        const double lr = config.learning_rate *
                          (1.0 - static_cast<double>(step) / static_cast<double>(config.total_steps));
        optimizer.step(params, grads, lr);
        trace.push_back(batch_loss);
    }
    return trace;
}

}  // namespace

Checkpoint train_controller(std::span<const core::CtrlCICSample> dataset, ControllerKind kind,
                            const core::TrainingConfig& config) {
    config.validate();
    const ToyModelShape shape = shape_for(dataset, config);
    Vocabulary vocab = build_vocabulary(dataset, config);

    std::vector<TrainExample> examples;
    examples.reserve(dataset.size());
    for (const auto& sample : dataset) {
        examples.push_back(kind == ControllerKind::Prompting ? make_prompting_example(sample, vocab, config)
                                                             : make_recalibration_example(sample, vocab, config));
    }

    ToyModel model(vocab, shape, config.rng_seed);
    Checkpoint ckpt;
    ckpt.loss_trace = run_training(model.params(), examples.size(), config, [&](std::size_t i, ParamSet& g) {
        return model.loss(examples[i], &g);
    });
    ckpt.kind = std::string(to_string(kind));
    ckpt.config = config;
    ckpt.separator = config.separator;
    ckpt.providers = {{"backbone", model.id()}, {"tokenizer", vocab.tokenizer().id()}};
    ckpt.vocab = vocab.symbols();
    ckpt.shape = {{"model_dim", shape.model_dim},
                  {"hidden_dim", shape.hidden_dim},
                  {"image_dim", shape.image_dim},
                  {"max_output", shape.max_output}};
    ckpt.params = std::move(model.params());
    return ckpt;
}

Checkpoint train_weight_predictor(std::span<const core::CtrlCICSample> dataset, const core::TrainingConfig& config) {
    config.validate();
    if (dataset.empty()) throw Error(Errc::DataFormatError, "dataset is empty");
    Vocabulary vocab = build_vocabulary(dataset, config);

    std::vector<std::vector<int>> inputs;
    std::vector<std::vector<double>> targets;
    for (const auto& sample : dataset) {
        if (sample.token_weights.size() != sample.context.tokens().size()) {
            throw Error(Errc::DataFormatError, fmt::format("sample '{}' has no token weights", sample.sample_id));
        }
        auto ids = context_ids(vocab, sample.context, config.input_token_budget);
        targets.emplace_back(sample.token_weights.begin(),
                             sample.token_weights.begin() + static_cast<std::ptrdiff_t>(ids.size()));
        inputs.push_back(std::move(ids));
    }

    ToyWeightPredictor predictor(vocab, config.model_dim, config.hidden_dim, config.rng_seed);
    Checkpoint ckpt;
    ckpt.loss_trace = run_training(predictor.params(), inputs.size(), config, [&](std::size_t i, ParamSet& g) {
        return predictor.loss(inputs[i], targets[i], &g);
    });
    ckpt.kind = "weight_predictor";
    ckpt.config = config;
    ckpt.separator = config.separator;
    ckpt.providers = {{"backbone", "toy-window-predictor-v1"}, {"tokenizer", vocab.tokenizer().id()}};
    ckpt.vocab = vocab.symbols();
    ckpt.shape = {{"model_dim", config.model_dim}, {"hidden_dim", config.hidden_dim}};
    ckpt.params = std::move(predictor.params());
    return ckpt;
}

}  // namespace ctrlcic::modeling
