// ctrlcic: command-line entry point for every pipeline stage.
//
// Config precedence: command-line flags, then the --config JSON file, then
// built-in defaults (desk-scale training settings). The effective config is
// logged to stderr at start and recorded in the run manifest written next to
// each output.

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "ctrlcic/controllers.hpp"
#include "ctrlcic/datasets.hpp"
#include "ctrlcic/evaluator.hpp"
#include "ctrlcic/metrics.hpp"
#include "ctrlcic/relevance.hpp"
#include "ctrlcic/service.hpp"
#include "ctrlcic/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ctrlcic;

namespace {

constexpr int kManifestVersion = 1;

std::string file_digest(const fs::path& path) {
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(path)) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        std::string all;
        for (const auto& f : files) all += fs::relative(f, path).string() + ":" + file_digest(f) + "\n";
        return core::hex64(core::fnv1a64(all));
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, fmt::format("cannot read '{}'", path.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return core::hex64(core::fnv1a64(buf.str()));
}

/// Inputs, outputs, effective config and timing of one subcommand run.
class RunManifest {
public:
    explicit RunManifest(std::string command)
        : command_(std::move(command)), started_(std::chrono::steady_clock::now()) {}

    void input(const fs::path& p) { inputs_.push_back({{"path", p.string()}, {"fnv1a64", file_digest(p)}}); }
    void output(const fs::path& p) { outputs_.push_back(p); }
    void config(json c) { config_ = std::move(c); }
    void seed(std::uint64_t s) { seed_ = s; }
    void stat(const std::string& key, json value) { stats_[key] = std::move(value); }

    void write(const fs::path& path) const {
        json outputs = json::array();
        for (const auto& p : outputs_) outputs.push_back({{"path", p.string()}, {"fnv1a64", file_digest(p)}});
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
        const json m = {{"manifest_version", kManifestVersion},
                        {"command", command_},
                        {"inputs", inputs_},
                        {"outputs", outputs},
                        {"config", config_},
                        {"config_hash", core::hex64(core::fnv1a64(config_.dump()))},
                        {"seed", seed_},
                        {"stats", stats_},
                        {"duration_seconds", seconds}};
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error(Errc::Io, fmt::format("cannot write manifest '{}'", path.string()));
        out << m.dump(2) << '\n';
    }

private:
    std::string command_;
    std::chrono::steady_clock::time_point started_;
    json inputs_ = json::array();
    std::vector<fs::path> outputs_;
    json config_ = json::object();
    std::uint64_t seed_ = 0;
    json stats_ = json::object();
};

fs::path manifest_path(const fs::path& output) {
    if (fs::is_directory(output)) return output / "manifest.json";
    return fs::path(output.string() + ".manifest.json");
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, fmt::format("cannot read '{}'", path.string()));
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(Errc::DataFormatError, fmt::format("'{}': {}", path.string(), e.what()));
    }
}

void write_json_file(const fs::path& path, const json& j) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::Io, fmt::format("cannot write '{}'", path.string()));
    out << j.dump(2) << '\n';
}

// Group key of a sample id: everything before the last '-' ("p0-s1-i2" ->
// "p0-s1", "synth-040-2" -> "synth-040").
std::string group_of(const std::string& sample_id) {
    const auto dash = sample_id.rfind('-');
    return dash == std::string::npos ? sample_id : sample_id.substr(0, dash);
}

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string log_level = "info";

    std::string input;
    std::string output;
    std::string features;
    std::string provider;
    std::string report;
    std::string checkpoint;
    std::string predictor;
    std::string controller;
    std::string replay;
    std::string transcripts;
    std::string csv;

    std::optional<double> theta;
    std::optional<double> alpha;
    std::optional<std::size_t> max_prompt_words;
    std::optional<std::size_t> steps;
    std::optional<double> learning_rate;
    std::optional<std::size_t> batch_size;
    std::optional<double> weight_decay;

    std::size_t contexts = 50;
    std::size_t facts = 3;
    std::size_t eval_contexts = 10;
    std::size_t image_dim = 64;

    bool cic = false;
    std::size_t beam = 0;

    std::string judge_url;
    std::string judge_model;

    std::string host;
    std::optional<int> port;
};

/// Config file JSON, or an empty object without --config.
json load_config_file(const Options& o) {
    if (o.config_path.empty()) return json::object();
    json j = read_json_file(o.config_path);
    if (!j.is_object()) throw Error(Errc::DataFormatError, "config file must hold a JSON object");
    return j;
}

core::TrainingConfig effective_training_config(const Options& o, const json& file) {
    core::TrainingConfig c = modeling::config_from_json(file.value("training", json::object()), modeling::desk_config());
    if (o.seed) c.rng_seed = *o.seed;
    if (o.theta) c.theta = *o.theta;
    if (o.alpha) c.alpha = *o.alpha;
    if (o.max_prompt_words) c.max_prompt_words = *o.max_prompt_words;
    if (o.steps) c.total_steps = *o.steps;
    if (o.learning_rate) c.learning_rate = *o.learning_rate;
    if (o.batch_size) c.batch_size = *o.batch_size;
    if (o.weight_decay) c.weight_decay = *o.weight_decay;
    c.validate();
    return c;
}

std::string effective_provider(const Options& o, const json& file) {
    if (!o.provider.empty()) return o.provider;
    return file.value("embedding_provider", std::string("hash-onehot-4096"));
}

void echo_config(const json& config) { spdlog::info("effective config: {}", config.dump()); }

// Subcommands ------------------------------------------------------------------

int run_ingest(const Options& o) {
    const json file = load_config_file(o);
    RunManifest manifest("ingest");
    datasets::FeatureStore features;
    features.dim = o.image_dim;
    if (!o.features.empty()) {
        features = datasets::FeatureStore::load(o.features);
        manifest.input(o.features);
    }
    const json config = {{"image_dim", features.dim}, {"features", o.features}};
    echo_config(config);
    manifest.config(config);
    manifest.input(o.input);

    const auto result = datasets::ingest_pages(fs::path(o.input), features);
    for (const auto& e : result.errors) spdlog::warn("skipped record: {}", e);
    ensure_parent(o.output);
    datasets::write_samples(o.output, result.samples);
    manifest.output(o.output);
    manifest.stat("pages", result.pages);
    manifest.stat("malformed", result.malformed);
    manifest.stat("samples", result.samples.size());
    manifest.write(manifest_path(o.output));
    spdlog::info("ingested {} pages into {} samples ({} malformed lines)", result.pages, result.samples.size(),
                 result.malformed);
    return 0;
}

int run_build_dataset(const Options& o) {
    const json file = load_config_file(o);
    const auto config = effective_training_config(o, file);
    const std::string provider_id = effective_provider(o, file);
    const json effective = {{"theta", config.theta},
                            {"max_prompt_words", config.max_prompt_words},
                            {"embedding_provider", provider_id}};
    echo_config(effective);
    RunManifest manifest("build-dataset");
    manifest.config(effective);
    manifest.input(o.input);

    const auto samples = datasets::read_cic_samples(o.input);
    const auto provider = modeling::make_provider(provider_id);
    const auto result = datasets::build_ctrlcic_dataset(samples, *provider, config);
    ensure_parent(o.output);
    datasets::write_samples(o.output, result.samples);
    manifest.output(o.output);
    const fs::path report = o.report.empty() ? fs::path(o.output + ".report.json") : fs::path(o.report);
    write_json_file(report, result.report.to_json());
    manifest.output(report);
    manifest.stat("report", result.report.to_json());
    manifest.write(manifest_path(o.output));
    spdlog::info("emitted {} samples, dropped {}", result.report.emitted, result.report.dropped);
    return 0;
}

int run_synth(const Options& o) {
    datasets::SyntheticSpec spec;
    spec.num_contexts = o.contexts;
    spec.facts_per_context = o.facts;
    spec.eval_contexts = o.eval_contexts;
    spec.image_dim = o.image_dim;
    spec.seed = o.seed.value_or(0);
    const json file = load_config_file(o);
    spec.weight_provider = effective_provider(o, file);
    const json effective = {{"contexts", spec.num_contexts},     {"facts", spec.facts_per_context},
                            {"eval_contexts", spec.eval_contexts}, {"image_dim", spec.image_dim},
                            {"seed", spec.seed},                  {"weight_provider", spec.weight_provider}};
    echo_config(effective);
    RunManifest manifest("synth");
    manifest.config(effective);
    manifest.seed(spec.seed);

    const auto corpus = datasets::generate_synthetic_corpus(spec);
    const fs::path dir = o.output;
    fs::create_directories(dir);
    datasets::write_samples(dir / "train.jsonl", corpus.train);
    datasets::write_samples(dir / "eval.jsonl", corpus.eval);
    manifest.output(dir / "train.jsonl");
    manifest.output(dir / "eval.jsonl");
    manifest.stat("train", corpus.train.size());
    manifest.stat("eval", corpus.eval.size());
    manifest.write(manifest_path(dir));
    spdlog::info("wrote {} train and {} eval samples to {}", corpus.train.size(), corpus.eval.size(), dir.string());
    return 0;
}

int run_train(const Options& o, bool predictor) {
    const json file = load_config_file(o);
    const auto config = effective_training_config(o, file);
    const json effective = modeling::config_to_json(config);
    echo_config(effective);
    RunManifest manifest(predictor ? "train-predictor" : "train");
    manifest.config(effective);
    manifest.seed(config.rng_seed);
    manifest.input(o.input);

    const auto samples = datasets::read_ctrl_samples(o.input);
    modeling::Checkpoint checkpoint;
    if (predictor) {
        checkpoint = modeling::train_weight_predictor(samples, config);
    } else {
        const std::string name = o.controller.empty() ? file.value("controller", std::string()) : o.controller;
        if (name.empty()) throw CLI::ValidationError("--controller", "train needs --controller prompting|recalibration");
        checkpoint = modeling::train_controller(samples, modeling::parse_controller_kind(name), config);
    }
    ensure_parent(o.output);
    checkpoint.save(o.output);
    manifest.output(o.output);
    if (!checkpoint.loss_trace.empty()) {
        manifest.stat("loss_first", checkpoint.loss_trace.front());
        manifest.stat("loss_last", checkpoint.loss_trace.back());
    }
    manifest.write(manifest_path(o.output));
    spdlog::info("saved {} checkpoint to {}", checkpoint.kind, o.output);
    return 0;
}

int run_caption(const Options& o) {
    const json file = load_config_file(o);
    RunManifest manifest("caption");
    manifest.input(o.input);
    manifest.input(o.checkpoint);

    const auto checkpoint = modeling::Checkpoint::load(o.checkpoint);
    const auto kind = modeling::parse_controller_kind(checkpoint.kind);
    if (!o.controller.empty() && modeling::parse_controller_kind(o.controller) != kind) {
        throw Error(Errc::DataFormatError,
                    fmt::format("--controller {} does not match the {} checkpoint", o.controller, checkpoint.kind));
    }
    const auto model = modeling::load_model(checkpoint);
    std::unique_ptr<modeling::ToyWeightPredictor> predictor;
    if (kind == modeling::ControllerKind::Recalibration) {
        if (o.predictor.empty()) throw CLI::ValidationError("--predictor", "recalibration captions need --predictor");
        predictor = modeling::load_predictor(modeling::Checkpoint::load(o.predictor));
        manifest.input(o.predictor);
    }

    // Inference flags override the checkpoint's own settings.
    auto options = controllers::InferenceOptions::from_config(
        modeling::config_from_json(file.value("training", json::object()), checkpoint.config));
    if (o.alpha) options.alpha = *o.alpha;
    if (o.max_prompt_words) options.max_prompt_words = *o.max_prompt_words;
    if (o.seed) options.decode.seed = *o.seed;
    if (o.beam > 1) {
        options.decode.strategy = modeling::DecodeParams::Strategy::Beam;
        options.decode.beam_width = o.beam;
    }
    const json effective = {{"controller", checkpoint.kind},
                            {"alpha", options.alpha},
                            {"max_prompt_words", options.max_prompt_words},
                            {"cic", o.cic},
                            {"beam_width", o.beam > 1 ? o.beam : 1},
                            {"seed", options.decode.seed}};
    echo_config(effective);
    manifest.config(effective);
    manifest.seed(options.decode.seed);

    const auto samples = datasets::read_ctrl_samples(o.input);
    std::vector<json> records;
    records.reserve(samples.size());
    for (const auto& s : samples) {
        const core::HighlightSet none;
        const auto& highlights = o.cic ? none : s.highlights;
        const auto gen = kind == modeling::ControllerKind::Prompting
                             ? controllers::pctrl_generate(*model, s.context, s.image, highlights, options)
                             : controllers::rctrl_generate(*model, *predictor, s.context, s.image, highlights, options);
        metrics::CaptionRecord r;
        r.sample_id = s.sample_id;
        r.group_id = group_of(s.sample_id);
        r.context = s.context;
        r.highlights = s.highlights;
        r.caption = gen.caption.text;
        r.reference = s.target_caption;
        records.push_back(metrics::caption_record_to_json(r));
    }
    ensure_parent(o.output);
    datasets::write_jsonl(o.output, records);
    manifest.output(o.output);
    manifest.stat("captions", records.size());
    manifest.write(manifest_path(o.output));
    spdlog::info("wrote {} captions to {}", records.size(), o.output);
    return 0;
}

int run_eval_metrics(const Options& o) {
    const json file = load_config_file(o);
    const std::string provider_id = effective_provider(o, file);
    const json effective = {{"embedding_provider", provider_id}};
    echo_config(effective);
    RunManifest manifest("eval-metrics");
    manifest.config(effective);
    manifest.input(o.input);

    std::vector<metrics::CaptionRecord> records;
    for (const auto& j : datasets::read_jsonl(o.input)) records.push_back(metrics::caption_record_from_json(j));
    const auto provider = modeling::make_provider(provider_id);
    const auto report = metrics::compute_report(records, *provider);
    write_json_file(o.output, report.to_json());
    manifest.output(o.output);
    if (!o.csv.empty()) {
        ensure_parent(o.csv);
        std::ofstream(o.csv, std::ios::binary) << report.to_csv();
        manifest.output(o.csv);
    }
    manifest.write(manifest_path(o.output));
    std::cout << report.to_json().dump(2) << '\n';
    return 0;
}

int run_eval_judge(const Options& o) {
    const json file = load_config_file(o);
    evaluator::EvalConfig config;
    config.seed = o.seed.value_or(file.value("seed", std::uint64_t{0}));
    if (!o.transcripts.empty()) config.transcript_dir = o.transcripts;

    std::unique_ptr<evaluator::JudgeClient> client;
    json judge_json;
    if (!o.replay.empty()) {
        client = std::make_unique<evaluator::ReplayJudgeClient>(o.replay);
        judge_json = {{"mode", "replay"}, {"transcripts", o.replay}};
    } else {
        evaluator::HttpJudgeConfig http;
        const json j = file.value("judge", json::object());
        http.base_url = o.judge_url.empty() ? j.value("base_url", http.base_url) : o.judge_url;
        http.path = j.value("path", http.path);
        http.model = o.judge_model.empty() ? j.value("model", http.model) : o.judge_model;
        http.api_key_env = j.value("api_key_env", http.api_key_env);
        http.max_parallel = j.value("max_parallel", http.max_parallel);
        judge_json = {{"mode", "http"}, {"base_url", http.base_url}, {"model", http.model},
                      {"api_key_env", http.api_key_env}};
        client = std::make_unique<evaluator::HttpJudgeClient>(http);
    }
    const json effective = {{"seed", config.seed}, {"judge", judge_json}, {"transcripts_out", o.transcripts}};
    echo_config(effective);
    RunManifest manifest("eval-judge");
    manifest.config(effective);
    manifest.seed(config.seed);
    manifest.input(o.input);
    if (!o.replay.empty()) manifest.input(o.replay);

    std::vector<evaluator::EvalItem> items;
    for (const auto& j : datasets::read_jsonl(o.input)) items.push_back(evaluator::eval_item_from_json(j));
    const auto report = evaluator::run_evaluation(items, *client, config);
    write_json_file(o.output, report.to_json());
    manifest.output(o.output);
    manifest.stat("evaluated", report.evaluated);
    manifest.stat("failures", report.failures);
    manifest.write(manifest_path(o.output));
    std::cout << report.to_json().dump(2) << '\n';
    return 0;
}

service::CaptionService* g_service = nullptr;

extern "C" void handle_signal(int) {
    if (g_service != nullptr) g_service->stop();
}

int run_serve(const Options& o) {
    const json file = load_config_file(o);
    const fs::path base = o.config_path.empty() ? fs::path() : fs::path(o.config_path).parent_path();
    auto config = service::ServiceConfig::from_json(file.value("service", json::object()), base);
    if (!o.host.empty()) config.host = o.host;
    if (o.port) config.port = *o.port;
    if (!o.checkpoint.empty()) {
        const auto kind = modeling::parse_controller_kind(modeling::Checkpoint::load(o.checkpoint).kind);
        (kind == modeling::ControllerKind::Prompting ? config.prompting_checkpoint : config.recalibration_checkpoint) =
            fs::path(o.checkpoint);
    }
    if (!o.predictor.empty()) config.predictor_checkpoint = fs::path(o.predictor);
    if (!o.input.empty()) config.samples_path = fs::path(o.input);
    if (!o.features.empty()) config.features_path = fs::path(o.features);
    if (!o.provider.empty()) config.embedding_provider = o.provider;
    echo_config(config.to_json());

    service::CaptionService svc(config);
    svc.load_from_config();
    g_service = &svc;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    svc.serve();
    g_service = nullptr;
    return 0;
}

void print_error(std::string_view code, std::string_view message) {
    std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_logger_mt("ctrlcic"));

    CLI::App app{"Controllable contextualized image captioning toolkit"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config_path, "JSON config file (flags override it)")->check(CLI::ExistingFile);
    app.add_option("--log-level", o.log_level, "trace, debug, info, warn, error")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    auto with_io = [&](CLI::App* sub, bool input_required = true) {
        sub->add_option("--input", o.input, "Input path")->required(input_required);
        sub->add_option("--output", o.output, "Output path")->required();
        sub->add_option("--seed", o.seed, "Random seed");
    };
    auto with_training = [&](CLI::App* sub) {
        sub->add_option("--theta", o.theta, "Highlight relevance threshold");
        sub->add_option("--alpha", o.alpha, "Recalibration boost");
        sub->add_option("--max-prompt-words", o.max_prompt_words, "Highlight word cap");
        sub->add_option("--steps", o.steps, "Optimizer steps");
        sub->add_option("--lr", o.learning_rate, "Learning rate");
        sub->add_option("--batch-size", o.batch_size, "Examples per step");
        sub->add_option("--weight-decay", o.weight_decay, "Decoupled weight decay");
    };

    auto* ingest = app.add_subcommand("ingest", "Page JSONL to CIC samples");
    with_io(ingest);
    ingest->add_option("--features", o.features, "Image feature JSONL")->check(CLI::ExistingFile);
    ingest->add_option("--image-dim", o.image_dim, "Pseudo feature size for refs without features");

    auto* build = app.add_subcommand("build-dataset", "Mine highlights and token weights");
    with_io(build);
    with_training(build);
    build->add_option("--provider", o.provider, "Embedding provider id");
    build->add_option("--report", o.report, "Build report path");

    auto* synth = app.add_subcommand("synth", "Generate the synthetic controllability corpus");
    synth->add_option("--output", o.output, "Output directory")->required();
    synth->add_option("--seed", o.seed, "Random seed");
    synth->add_option("--contexts", o.contexts, "Number of contexts");
    synth->add_option("--facts", o.facts, "Facts per context");
    synth->add_option("--eval-contexts", o.eval_contexts, "Contexts held out for evaluation");
    synth->add_option("--image-dim", o.image_dim, "Image feature size");
    synth->add_option("--provider", o.provider, "Embedding provider for token weights");

    auto* train = app.add_subcommand("train", "Train a controller checkpoint");
    with_io(train);
    with_training(train);
    train->add_option("--controller", o.controller, "prompting or recalibration");

    auto* train_pred = app.add_subcommand("train-predictor", "Train the token weight predictor");
    with_io(train_pred);
    with_training(train_pred);

    auto* caption = app.add_subcommand("caption", "Caption samples with a trained controller");
    with_io(caption);
    caption->add_option("--checkpoint", o.checkpoint, "Controller checkpoint")->required()->check(CLI::ExistingFile);
    caption->add_option("--predictor", o.predictor, "Weight predictor checkpoint")->check(CLI::ExistingFile);
    caption->add_option("--controller", o.controller, "Expected controller kind");
    caption->add_option("--alpha", o.alpha, "Recalibration boost");
    caption->add_option("--max-prompt-words", o.max_prompt_words, "Highlight word cap");
    caption->add_flag("--cic", o.cic, "Ignore highlights (uncontrolled mode)");
    caption->add_option("--beam", o.beam, "Beam width (greedy when unset)");

    auto* eval_metrics = app.add_subcommand("eval-metrics", "Reference-free caption metrics");
    with_io(eval_metrics);
    eval_metrics->add_option("--provider", o.provider, "Embedding provider id");
    eval_metrics->add_option("--csv", o.csv, "Also write the report as CSV");

    auto* eval_judge = app.add_subcommand("eval-judge", "Comparative judge evaluation");
    with_io(eval_judge);
    eval_judge->add_option("--replay", o.replay, "Replay recorded transcripts from this directory")
        ->check(CLI::ExistingDirectory);
    eval_judge->add_option("--transcripts", o.transcripts, "Store one transcript per call here");
    eval_judge->add_option("--judge-url", o.judge_url, "Live judge base URL");
    eval_judge->add_option("--judge-model", o.judge_model, "Live judge model name");

    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    serve->add_option("--host", o.host, "Bind address");
    serve->add_option("--port", o.port, "Port");
    serve->add_option("--checkpoint", o.checkpoint, "Controller checkpoint")->check(CLI::ExistingFile);
    serve->add_option("--predictor", o.predictor, "Weight predictor checkpoint")->check(CLI::ExistingFile);
    serve->add_option("--input", o.input, "CtrlCIC samples to browse")->check(CLI::ExistingFile);
    serve->add_option("--features", o.features, "Image feature JSONL")->check(CLI::ExistingFile);
    serve->add_option("--provider", o.provider, "Embedding provider id");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("UsageError", e.what());
        return 2;
    }
    spdlog::set_level(spdlog::level::from_str(o.log_level));

    try {
        if (*ingest) return run_ingest(o);
        if (*build) return run_build_dataset(o);
        if (*synth) return run_synth(o);
        if (*train) return run_train(o, false);
        if (*train_pred) return run_train(o, true);
        if (*caption) return run_caption(o);
        if (*eval_metrics) return run_eval_metrics(o);
        if (*eval_judge) return run_eval_judge(o);
        if (*serve) return run_serve(o);
    } catch (const CLI::ValidationError& e) {
        print_error("UsageError", e.what());
        return 2;
    } catch (const Error& e) {
        print_error(to_string(e.code()), e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error("Internal", e.what());
        return 1;
    }
    return 2;
}
