#pragma once

// HTTP surface over the controllers: captioning, relevance heatmaps, sample
// browsing and health. Request handling is transport independent (handle())
// so the contract can be exercised without sockets.

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrlcic/controllers.hpp"
#include "ctrlcic/datasets.hpp"
#include "ctrlcic/embedding.hpp"
#include "ctrlcic/training.hpp"

namespace ctrlcic::service {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t http_threads = 8;
    std::size_t sessions_per_controller = 2;
    /// Requests allowed to wait for a session before the service answers 503.
    std::size_t queue_limit = 0;
    std::size_t max_num_captions = 8;
    std::optional<std::filesystem::path> prompting_checkpoint;
    std::optional<std::filesystem::path> recalibration_checkpoint;
    std::optional<std::filesystem::path> predictor_checkpoint;
    std::optional<std::filesystem::path> samples_path;
    std::optional<std::filesystem::path> features_path;
    std::optional<std::string> embedding_provider = "hash-onehot-4096";

    /// Relative paths resolve against `base_dir`. Throws DataFormatError.
    static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    nlohmann::json to_json() const;
};

struct HttpResult {
    int status = 200;
    nlohmann::json body;
};

/// One loaded copy of a controller. A session serves one generation at a
/// time; the guard flag turns any interleaving into a hard failure.
struct ModelSession {
    std::unique_ptr<modeling::ToyModel> model;
    std::unique_ptr<modeling::ToyWeightPredictor> predictor;  // recalibration only
    std::atomic<bool> busy{false};
};

/// Fixed set of sessions with a bounded wait queue.
class SessionPool {
public:
    class Lease {
    public:
        Lease(SessionPool& pool, ModelSession& session) : pool_(&pool), session_(&session) {}
        Lease(Lease&& other) noexcept : pool_(other.pool_), session_(other.session_) { other.pool_ = nullptr; }
        Lease(const Lease&) = delete;
        Lease& operator=(const Lease&) = delete;
        Lease& operator=(Lease&&) = delete;
        ~Lease();

        ModelSession& session() const { return *session_; }

    private:
        SessionPool* pool_;
        ModelSession* session_;
    };

    SessionPool(std::vector<std::unique_ptr<ModelSession>> sessions, std::size_t queue_limit);

    /// std::nullopt when every session is busy and the wait queue is full.
    std::optional<Lease> acquire();

    std::size_t size() const { return sessions_.size(); }
    std::size_t in_use() const;

private:
    void release(ModelSession& session);

    std::vector<std::unique_ptr<ModelSession>> sessions_;
    std::vector<ModelSession*> free_;
    std::size_t queue_limit_;
    std::size_t waiting_ = 0;
    mutable std::mutex mutex_;
    std::condition_variable available_;
};

class CaptionService {
public:
    explicit CaptionService(ServiceConfig config = {});
    ~CaptionService();

    /// Loads everything named in the config. Missing optional pieces leave
    /// the service degraded rather than failing.
    void load_from_config();

    /// Accepts "prompting" or "recalibration" checkpoints. Recalibration
    /// sessions need a predictor loaded first (or afterwards, via
    /// load_predictor, which rebuilds the recalibration pool).
    void load_checkpoint(const modeling::Checkpoint& checkpoint);
    void load_predictor(const modeling::Checkpoint& checkpoint);
    void set_samples(std::vector<core::CtrlCICSample> samples);
    void set_features(datasets::FeatureStore features);
    void set_provider(std::unique_ptr<modeling::EmbeddingProvider> provider);

    HttpResult caption(const nlohmann::json& request);
    HttpResult relevance(const nlohmann::json& request) const;
    HttpResult sample(const std::string& id) const;
    HttpResult health() const;
    static nlohmann::json schema();

    /// Routes a request the way the HTTP server does.
    HttpResult handle(const std::string& method, const std::string& path, const std::string& body);

    SessionPool* pool(modeling::ControllerKind kind);

    /// Binds and serves on a background thread; returns the bound port
    /// (config port 0 picks a free one).
    int start();
    /// Serves on the calling thread until stop() is called from elsewhere.
    void serve();
    void stop();

private:
    struct Loaded {
        modeling::Checkpoint checkpoint;
        std::string version;
        std::unique_ptr<SessionPool> pool;
    };

    int bind();
    void rebuild_pool(modeling::ControllerKind kind);
    std::optional<core::ImageFeature> resolve_image(const std::string& ref) const;

    ServiceConfig config_;
    std::map<modeling::ControllerKind, Loaded> controllers_;
    std::optional<modeling::Checkpoint> predictor_;
    std::string predictor_version_;
    std::unique_ptr<modeling::EmbeddingProvider> provider_;
    std::map<std::string, core::CtrlCICSample> samples_;
    datasets::FeatureStore features_;
    std::map<std::string, core::ImageFeature> sample_images_;

    struct Server;
    std::unique_ptr<Server> server_;
};

}  // namespace ctrlcic::service
