#include "ctrlcic/service.hpp"

#include <fstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ctrlcic/relevance.hpp"

// Last: resolv.h (pulled in by httplib) defines a _res macro that breaks Eigen.
#include <httplib.h>

namespace ctrlcic::service {

using nlohmann::json;
using modeling::ControllerKind;

namespace {

struct RequestError {
    int status;
    std::string code;
    std::string message;
    std::optional<std::size_t> span_index;
};

HttpResult error_result(const RequestError& e) {
    json err = {{"code", e.code}, {"message", e.message}};
    if (e.span_index) err["span_index"] = *e.span_index;
    return {e.status, {{"error", err}}};
}

int status_for(Errc code) {
    switch (code) {
        case Errc::InvalidSpan:
        case Errc::SeparatorCollision:
        case Errc::BudgetExceeded:
        case Errc::DimensionMismatch:
        case Errc::ShapeMismatch:
        case Errc::DataFormatError:
        case Errc::SchemaViolation:
        case Errc::EmptyCaption:
        case Errc::TokenizerFailure:
            return 400;
        default:
            return 500;
    }
}

std::optional<std::filesystem::path> path_field(const json& j, const char* key, const std::filesystem::path& base) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    std::filesystem::path p = j.at(key).get<std::string>();
    if (p.is_relative() && !base.empty()) p = base / p;
    return p;
}

std::string checkpoint_version(const modeling::Checkpoint& checkpoint) {
    const std::string backbone = checkpoint.providers.value("backbone", std::string("unknown"));
    const std::string digest = core::hex64(core::fnv1a64(checkpoint.to_json().dump()));
    return fmt::format("{}/{}@{}", backbone, checkpoint.kind, digest.substr(0, 12));
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw RequestError{400, "BadRequest", fmt::format("field '{}' has the wrong type", key), std::nullopt};
    }
}

core::Context parse_context(const json& request) {
    const json& c = request.contains("context") ? request.at("context") : request;
    if (!c.is_object()) throw RequestError{400, "BadRequest", "context must be an object", std::nullopt};
    if (!c.contains("body")) throw RequestError{400, "BadRequest", "missing field 'body'", std::nullopt};
    return core::Context(get_or<std::string>(c, "page_title", ""), get_or<std::string>(c, "section_title", ""),
                         get_or<std::string>(c, "body", ""),
                         get_or<std::vector<std::string>>(c, "aux_captions", {}));
}

std::vector<std::pair<std::size_t, std::size_t>> parse_spans(const json& request) {
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    if (!request.contains("highlights")) return spans;
    const json& hs = request.at("highlights");
    if (!hs.is_array()) throw RequestError{400, "InvalidSpans", "highlights must be an array", std::nullopt};
    for (std::size_t i = 0; i < hs.size(); ++i) {
        const json& h = hs[i];
        const bool pair = h.is_array() && h.size() == 2 && h[0].is_number_unsigned() && h[1].is_number_unsigned();
        const bool object = h.is_object() && h.contains("char_start") && h.contains("char_end") &&
                            h["char_start"].is_number_unsigned() && h["char_end"].is_number_unsigned();
        if (!pair && !object) {
            throw RequestError{400, "InvalidSpans",
                               fmt::format("span {} must be [char_start, char_end] with non-negative offsets", i), i};
        }
        spans.emplace_back(pair ? h[0].get<std::size_t>() : h["char_start"].get<std::size_t>(),
                           pair ? h[1].get<std::size_t>() : h["char_end"].get<std::size_t>());
    }
    return spans;
}

json highlights_json(const core::HighlightSet& highlights) {
    json out = json::array();
    for (const auto& s : highlights.spans()) {
        out.push_back({{"char_start", s.begin}, {"char_end", s.end}, {"text", s.text}});
    }
    return out;
}

modeling::DecodeParams parse_decode(const json& request, std::size_t num_captions) {
    modeling::DecodeParams d;
    // Several greedy captions would all be the same string.
    d.strategy = num_captions > 1 ? modeling::DecodeParams::Strategy::Sample : modeling::DecodeParams::Strategy::Greedy;
    if (!request.contains("decode")) return d;
    const json& j = request.at("decode");
    if (!j.is_object()) throw RequestError{400, "BadRequest", "decode must be an object", std::nullopt};
    if (j.contains("strategy")) {
        const auto s = get_or<std::string>(j, "strategy", "");
        if (s == "greedy") d.strategy = modeling::DecodeParams::Strategy::Greedy;
        else if (s == "beam") d.strategy = modeling::DecodeParams::Strategy::Beam;
        else if (s == "sample") d.strategy = modeling::DecodeParams::Strategy::Sample;
        else throw RequestError{400, "BadRequest", fmt::format("unknown decode strategy '{}'", s), std::nullopt};
    }
    d.beam_width = get_or<std::size_t>(j, "beam_width", d.beam_width);
    d.max_length = get_or<std::size_t>(j, "max_length", d.max_length);
    if (d.beam_width == 0 || d.max_length == 0) {
        throw RequestError{400, "BadRequest", "beam_width and max_length must be positive", std::nullopt};
    }
    return d;
}

}  // namespace

// Config ----------------------------------------------------------------------

ServiceConfig ServiceConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw Error(Errc::DataFormatError, "service config must be a JSON object");
    try {
        ServiceConfig c;
        c.host = j.value("host", c.host);
        c.port = j.value("port", c.port);
        c.http_threads = j.value("http_threads", c.http_threads);
        c.sessions_per_controller = j.value("sessions_per_controller", c.sessions_per_controller);
        c.queue_limit = j.value("queue_limit", c.queue_limit);
        c.max_num_captions = j.value("max_num_captions", c.max_num_captions);
        if (j.contains("checkpoints")) {
            const json& cp = j.at("checkpoints");
            c.prompting_checkpoint = path_field(cp, "prompting", base_dir);
            c.recalibration_checkpoint = path_field(cp, "recalibration", base_dir);
            c.predictor_checkpoint = path_field(cp, "weight_predictor", base_dir);
        }
        c.samples_path = path_field(j, "samples", base_dir);
        c.features_path = path_field(j, "features", base_dir);
        if (j.contains("embedding_provider")) {
            c.embedding_provider = j.at("embedding_provider").is_null()
                                       ? std::nullopt
                                       : std::optional<std::string>(j.at("embedding_provider").get<std::string>());
        }
        if (c.port < 0 || c.port > 65535) throw Error(Errc::DataFormatError, fmt::format("bad port {}", c.port));
        if (c.sessions_per_controller == 0 || c.http_threads == 0 || c.max_num_captions == 0) {
            throw Error(Errc::DataFormatError, "pool sizes and max_num_captions must be positive");
        }
        return c;
    } catch (const json::exception& e) {
        throw Error(Errc::DataFormatError, fmt::format("service config: {}", e.what()));
    }
}

json ServiceConfig::to_json() const {
    auto p = [](const std::optional<std::filesystem::path>& v) { return v ? json(v->string()) : json(nullptr); };
    return {{"host", host},
            {"port", port},
            {"http_threads", http_threads},
            {"sessions_per_controller", sessions_per_controller},
            {"queue_limit", queue_limit},
            {"max_num_captions", max_num_captions},
            {"checkpoints",
             {{"prompting", p(prompting_checkpoint)},
              {"recalibration", p(recalibration_checkpoint)},
              {"weight_predictor", p(predictor_checkpoint)}}},
            {"samples", p(samples_path)},
            {"features", p(features_path)},
            {"embedding_provider", embedding_provider ? json(*embedding_provider) : json(nullptr)}};
}

// Session pool ------------------------------------------------------------------

SessionPool::SessionPool(std::vector<std::unique_ptr<ModelSession>> sessions, std::size_t queue_limit)
    : sessions_(std::move(sessions)), queue_limit_(queue_limit) {
    for (auto& s : sessions_) free_.push_back(s.get());
}

SessionPool::Lease::~Lease() {
    if (pool_ != nullptr) pool_->release(*session_);
}

std::optional<SessionPool::Lease> SessionPool::acquire() {
    std::unique_lock lock(mutex_);
    if (free_.empty()) {
        if (waiting_ >= queue_limit_) return std::nullopt;
        ++waiting_;
        available_.wait(lock, [&] { return !free_.empty(); });
        --waiting_;
    }
    ModelSession* session = free_.back();
    free_.pop_back();
    return std::optional<Lease>(std::in_place, *this, *session);
}

void SessionPool::release(ModelSession& session) {
    {
        std::lock_guard lock(mutex_);
        free_.push_back(&session);
    }
    available_.notify_one();
}

std::size_t SessionPool::in_use() const {
    std::lock_guard lock(mutex_);
    return sessions_.size() - free_.size();
}

// Service -----------------------------------------------------------------------

struct CaptionService::Server {
    httplib::Server http;
    std::thread thread;
};

CaptionService::CaptionService(ServiceConfig config) : config_(std::move(config)) {}

CaptionService::~CaptionService() { stop(); }

void CaptionService::load_from_config() {
    if (config_.embedding_provider) set_provider(modeling::make_provider(*config_.embedding_provider));
    if (config_.features_path) set_features(datasets::FeatureStore::load(*config_.features_path));
    if (config_.samples_path) set_samples(datasets::read_ctrl_samples(*config_.samples_path));
    if (config_.predictor_checkpoint) load_predictor(modeling::Checkpoint::load(*config_.predictor_checkpoint));
    if (config_.prompting_checkpoint) load_checkpoint(modeling::Checkpoint::load(*config_.prompting_checkpoint));
    if (config_.recalibration_checkpoint) {
        load_checkpoint(modeling::Checkpoint::load(*config_.recalibration_checkpoint));
    }
}

void CaptionService::load_checkpoint(const modeling::Checkpoint& checkpoint) {
    const ControllerKind kind = modeling::parse_controller_kind(checkpoint.kind);
    auto& slot = controllers_[kind];
    slot.checkpoint = checkpoint;
    slot.version = checkpoint_version(checkpoint);
    rebuild_pool(kind);
    spdlog::info("loaded {} checkpoint {}", checkpoint.kind, slot.version);
}

void CaptionService::load_predictor(const modeling::Checkpoint& checkpoint) {
    (void)modeling::load_predictor(checkpoint);  // validates kind and shape
    predictor_ = checkpoint;
    predictor_version_ = checkpoint_version(checkpoint);
    if (controllers_.count(ControllerKind::Recalibration)) rebuild_pool(ControllerKind::Recalibration);
    spdlog::info("loaded weight predictor {}", predictor_version_);
}

void CaptionService::rebuild_pool(ControllerKind kind) {
    auto& slot = controllers_.at(kind);
    slot.pool.reset();
    if (kind == ControllerKind::Recalibration && !predictor_) return;
    std::vector<std::unique_ptr<ModelSession>> sessions;
    for (std::size_t i = 0; i < config_.sessions_per_controller; ++i) {
        auto s = std::make_unique<ModelSession>();
        s->model = modeling::load_model(slot.checkpoint);
        if (kind == ControllerKind::Recalibration) s->predictor = modeling::load_predictor(*predictor_);
        sessions.push_back(std::move(s));
    }
    slot.pool = std::make_unique<SessionPool>(std::move(sessions), config_.queue_limit);
}

void CaptionService::set_samples(std::vector<core::CtrlCICSample> samples) {
    samples_.clear();
    sample_images_.clear();
    for (auto& s : samples) {
        if (!s.image.source_id.empty()) sample_images_[s.image.source_id] = s.image;
        const std::string id = s.sample_id;
        samples_.insert_or_assign(id, std::move(s));
    }
}

void CaptionService::set_features(datasets::FeatureStore features) { features_ = std::move(features); }

void CaptionService::set_provider(std::unique_ptr<modeling::EmbeddingProvider> provider) {
    provider_ = std::move(provider);
}

SessionPool* CaptionService::pool(ControllerKind kind) {
    const auto it = controllers_.find(kind);
    return it == controllers_.end() ? nullptr : it->second.pool.get();
}

std::optional<core::ImageFeature> CaptionService::resolve_image(const std::string& ref) const {
    if (features_.contains(ref)) return features_.lookup(ref);
    const auto it = sample_images_.find(ref);
    if (it != sample_images_.end()) return it->second;
    return std::nullopt;
}

HttpResult CaptionService::caption(const json& request) {
    try {
        if (!request.is_object()) throw RequestError{400, "BadRequest", "request must be a JSON object", std::nullopt};

        const auto controller_name = get_or<std::string>(request, "controller", "prompting");
        ControllerKind kind{};
        try {
            kind = modeling::parse_controller_kind(controller_name);
        } catch (const Error&) {
            throw RequestError{400, "UnknownController", fmt::format("unknown controller '{}'", controller_name),
                               std::nullopt};
        }

        const core::Context context = parse_context(request);
        core::HighlightSet highlights;
        try {
            highlights = core::HighlightSet::from_offsets(context, parse_spans(request));
        } catch (const SpanError& e) {
            throw RequestError{400, "InvalidSpans", e.what(), e.index()};
        }

        const auto num_captions = get_or<std::size_t>(request, "num_captions", 1);
        if (num_captions == 0 || num_captions > config_.max_num_captions) {
            throw RequestError{400, "BadRequest",
                               fmt::format("num_captions must be in 1..{}", config_.max_num_captions), std::nullopt};
        }
        const auto seed = get_or<std::uint64_t>(request, "seed", 0);
        modeling::DecodeParams decode = parse_decode(request, num_captions);

        core::ImageFeature image;
        if (request.contains("image_feature") && !request.at("image_feature").is_null()) {
            const auto values = get_or<std::vector<double>>(request, "image_feature", {});
            image.vector = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
            image.source_id = "inline";
        } else if (request.contains("image_ref")) {
            const auto ref = get_or<std::string>(request, "image_ref", "");
            auto found = resolve_image(ref);
            if (!found) throw RequestError{404, "UnknownImageRef", fmt::format("unknown image_ref '{}'", ref), std::nullopt};
            image = std::move(*found);
        } else {
            throw RequestError{400, "BadRequest", "one of image_ref or image_feature is required", std::nullopt};
        }

        const auto loaded = controllers_.find(kind);
        if (loaded == controllers_.end() || !loaded->second.pool) {
            const bool missing_predictor = loaded != controllers_.end() && !predictor_;
            throw RequestError{409, "NoCheckpoint",
                               missing_predictor
                                   ? std::string("recalibration checkpoint loaded but no weight predictor")
                                   : fmt::format("no {} checkpoint loaded", to_string(kind)),
                               std::nullopt};
        }
        auto lease = loaded->second.pool->acquire();
        if (!lease) throw RequestError{503, "Busy", "all model sessions are busy", std::nullopt};
        ModelSession& session = lease->session();
        if (static_cast<std::size_t>(image.vector.size()) != session.model->image_dim()) {
            throw RequestError{400, "BadRequest",
                               fmt::format("image feature has {} entries, model expects {}", image.vector.size(),
                                           session.model->image_dim()),
                               std::nullopt};
        }

        controllers::InferenceOptions options = controllers::InferenceOptions::from_config(loaded->second.checkpoint.config);
        json captions = json::array();
        {
            modeling::SessionGuard guard(session.busy);
            for (std::size_t i = 0; i < num_captions; ++i) {
                options.decode = decode;
                options.decode.seed = seed + i;
                const auto gen = kind == ControllerKind::Prompting
                                     ? controllers::pctrl_generate(*session.model, context, image, highlights, options)
                                     : controllers::rctrl_generate(*session.model, *session.predictor, context, image,
                                                                   highlights, options);
                captions.push_back(gen.caption.text);
            }
        }
        lease.reset();

        json heatmap = nullptr;
        if (provider_) {
            try {
                const auto scores = relevance::score_context(context, captions.at(0).get<std::string>(), *provider_);
                heatmap = relevance::scores_to_json(context, scores).at("words");
            } catch (const Error& e) {
                // An empty or degenerate caption has no meaningful heatmap.
                spdlog::debug("no heatmap: {}", e.what());
            }
        }

        return {200,
                {{"captions", captions},
                 {"controller", to_string(kind)},
                 {"applied_highlights", highlights_json(highlights)},
                 {"assembled_text", context.assembled_text()},
                 {"relevance_heatmap", heatmap},
                 {"model_version", loaded->second.version},
                 {"seed", seed}}};
    } catch (const RequestError& e) {
        return error_result(e);
    } catch (const Error& e) {
        return error_result({status_for(e.code()), std::string(to_string(e.code())), e.what(), std::nullopt});
    }
}

HttpResult CaptionService::relevance(const json& request) const {
    try {
        if (!provider_) throw RequestError{503, "ProviderUnavailable", "no embedding provider loaded", std::nullopt};
        if (!request.is_object()) throw RequestError{400, "BadRequest", "request must be a JSON object", std::nullopt};
        const core::Context context = parse_context(request);
        const auto caption = core::normalize_text(get_or<std::string>(request, "caption", ""));
        if (caption.empty()) throw RequestError{400, "EmptyCaption", "caption must be non-empty", std::nullopt};
        const auto scores = relevance::score_context(context, caption, *provider_);
        json body = relevance::scores_to_json(context, scores);
        body["assembled_text"] = context.assembled_text();
        body["provider"] = provider_->id();
        return {200, body};
    } catch (const RequestError& e) {
        return error_result(e);
    } catch (const Error& e) {
        return error_result({status_for(e.code()), std::string(to_string(e.code())), e.what(), std::nullopt});
    }
}

HttpResult CaptionService::sample(const std::string& id) const {
    const auto it = samples_.find(id);
    if (it == samples_.end()) {
        return error_result({404, "UnknownSample", fmt::format("unknown sample id '{}'", id), std::nullopt});
    }
    return {200, datasets::sample_to_json(it->second)};
}

HttpResult CaptionService::health() const {
    json checkpoints = json::array();
    for (const auto& [kind, loaded] : controllers_) {
        checkpoints.push_back({{"controller", to_string(kind)},
                               {"model_version", loaded.version},
                               {"ready", loaded.pool != nullptr},
                               {"sessions", loaded.pool ? loaded.pool->size() : 0}});
    }
    const bool ready = std::any_of(controllers_.begin(), controllers_.end(),
                                   [](const auto& entry) { return entry.second.pool != nullptr; });
    return {200,
            {{"status", ready ? "ok" : "degraded"},
             {"checkpoints", checkpoints},
             {"providers",
              {{"embedding", provider_ ? json(provider_->id()) : json(nullptr)},
               {"weight_predictor", predictor_ ? json(predictor_version_) : json(nullptr)}}},
             {"samples", samples_.size()}}};
}

json CaptionService::schema() {
    const json span = {{"type", "array"}, {"items", {{"type", "integer"}, {"minimum", 0}}}, {"minItems", 2},
                       {"maxItems", 2}};
    const json context_props = {{"page_title", {{"type", "string"}}},
                                {"section_title", {{"type", "string"}}},
                                {"body", {{"type", "string"}}},
                                {"aux_captions", {{"type", "array"}, {"items", {{"type", "string"}}}}}};
    const json error = {{"type", "object"},
                        {"properties",
                         {{"error",
                           {{"type", "object"},
                            {"properties",
                             {{"code", {{"type", "string"}}},
                              {"message", {{"type", "string"}}},
                              {"span_index", {{"type", "integer"}}}}}}}}}};
    const json word = {{"type", "object"},
                       {"properties",
                        {{"text", {{"type", "string"}}}, {"span", span}, {"score", {{"type", "number"}}}}}};
    auto ok = [](const std::string& ref) {
        return json{{"description", "OK"}, {"content", {{"application/json", {{"schema", {{"$ref", ref}}}}}}}};
    };
    auto err = [](const std::string& what) {
        return json{{"description", what},
                    {"content", {{"application/json", {{"schema", {{"$ref", "#/components/schemas/Error"}}}}}}}};
    };
    auto body = [](const std::string& ref) {
        return json{{"required", true}, {"content", {{"application/json", {{"schema", {{"$ref", ref}}}}}}}};
    };
    json caption_request = {{"type", "object"},
                            {"required", {"body"}},
                            {"properties", context_props}};
    caption_request["properties"]["highlights"] = {{"type", "array"}, {"items", span}};
    caption_request["properties"]["image_ref"] = {{"type", "string"}};
    caption_request["properties"]["image_feature"] = {{"type", "array"}, {"items", {{"type", "number"}}}};
    caption_request["properties"]["controller"] = {{"type", "string"}, {"enum", {"prompting", "recalibration"}}};
    caption_request["properties"]["num_captions"] = {{"type", "integer"}, {"minimum", 1}};
    caption_request["properties"]["seed"] = {{"type", "integer"}, {"minimum", 0}};
    json relevance_request = {{"type", "object"}, {"required", {"body", "caption"}}, {"properties", context_props}};
    relevance_request["properties"]["caption"] = {{"type", "string"}};

    return {
        {"openapi", "3.0.3"},
        {"info", {{"title", "ctrlcic service"}, {"version", "1"}}},
        {"paths",
         {{"/v1/caption",
           {{"post",
             {{"requestBody", body("#/components/schemas/CaptionRequest")},
              {"responses",
               {{"200", ok("#/components/schemas/CaptionResponse")},
                {"400", err("invalid request or highlight span")},
                {"404", err("unknown image_ref")},
                {"409", err("no checkpoint for the controller")},
                {"503", err("all model sessions busy")}}}}}}},
          {"/v1/relevance",
           {{"post",
             {{"requestBody", body("#/components/schemas/RelevanceRequest")},
              {"responses",
               {{"200", ok("#/components/schemas/RelevanceResponse")},
                {"400", err("empty caption")},
                {"503", err("no embedding provider")}}}}}}},
          {"/v1/samples/{id}",
           {{"get",
             {{"parameters", {{{"name", "id"}, {"in", "path"}, {"required", true}, {"schema", {{"type", "string"}}}}}},
              {"responses", {{"200", {{"description", "sample record"}}}, {"404", err("unknown sample id")}}}}}}},
          {"/v1/health", {{"get", {{"responses", {{"200", {{"description", "service status"}}}}}}}}},
          {"/v1/schema", {{"get", {{"responses", {{"200", {{"description", "this document"}}}}}}}}}}},
        {"components",
         {{"schemas",
           {{"CaptionRequest", caption_request},
            {"CaptionResponse",
             {{"type", "object"},
              {"properties",
               {{"captions", {{"type", "array"}, {"items", {{"type", "string"}}}}},
                {"controller", {{"type", "string"}}},
                {"applied_highlights",
                 {{"type", "array"},
                  {"items",
                   {{"type", "object"},
                    {"properties",
                     {{"char_start", {{"type", "integer"}}},
                      {"char_end", {{"type", "integer"}}},
                      {"text", {{"type", "string"}}}}}}}}},
                {"assembled_text", {{"type", "string"}}},
                {"relevance_heatmap", {{"type", "array"}, {"nullable", true}, {"items", word}}},
                {"model_version", {{"type", "string"}}},
                {"seed", {{"type", "integer"}}}}}}},
            {"RelevanceRequest", relevance_request},
            {"RelevanceResponse",
             {{"type", "object"},
              {"properties",
               {{"words", {{"type", "array"}, {"items", word}}},
                {"tokens", {{"type", "array"}, {"items", word}}},
                {"assembled_text", {{"type", "string"}}},
                {"provider", {{"type", "string"}}}}}}},
            {"Error", error}}}}}};
}

HttpResult CaptionService::handle(const std::string& method, const std::string& path, const std::string& body) {
    auto parse_body = [&]() -> std::optional<json> {
        try {
            return json::parse(body);
        } catch (const json::parse_error&) {
            return std::nullopt;
        }
    };
    static const std::string kSamples = "/v1/samples/";
    if (method == "POST" && (path == "/v1/caption" || path == "/v1/relevance")) {
        const auto request = parse_body();
        if (!request) return error_result({400, "BadRequest", "request body is not valid JSON", std::nullopt});
        return path == "/v1/caption" ? caption(*request) : relevance(*request);
    }
    if (method == "GET" && path.rfind(kSamples, 0) == 0 && path.size() > kSamples.size()) {
        return sample(httplib::detail::decode_url(path.substr(kSamples.size()), false));
    }
    if (method == "GET" && path == "/v1/health") return health();
    if (method == "GET" && path == "/v1/schema") return {200, schema()};
    return error_result({404, "NotFound", fmt::format("no route for {} {}", method, path), std::nullopt});
}

int CaptionService::bind() {
    if (server_) throw Error(Errc::Io, "service already started");
    server_ = std::make_unique<Server>();
    auto& http = server_->http;
    const std::size_t threads = config_.http_threads;
    http.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
        const HttpResult r = handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    http.Get(R"(/.*)", dispatch);
    http.Post(R"(/.*)", dispatch);

    int port = config_.port;
    if (port == 0) {
        port = http.bind_to_any_port(config_.host);
    } else if (!http.bind_to_port(config_.host, port)) {
        port = -1;
    }
    if (port < 0) {
        server_.reset();
        throw Error(Errc::Io, fmt::format("cannot bind {}:{}", config_.host, config_.port));
    }
    spdlog::info("serving on {}:{}", config_.host, port);
    return port;
}

int CaptionService::start() {
    const int port = bind();
    server_->thread = std::thread([this] { server_->http.listen_after_bind(); });
    return port;
}

void CaptionService::serve() {
    bind();
    server_->http.listen_after_bind();
}

void CaptionService::stop() {
    if (!server_) return;
    server_->http.stop();
    // A foreground serve() owns the server object and is still unwinding.
    if (!server_->thread.joinable()) return;
    server_->thread.join();
    server_.reset();
}

}  // namespace ctrlcic::service
