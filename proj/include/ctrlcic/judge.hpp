#pragma once

// Judge clients for the comparative evaluator: a live HTTP client for
// chat-completion style endpoints and a replay client over recorded
// transcripts.

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace ctrlcic::evaluator {

enum class OrderFlag { CandidateFirst, AnchorFirst };

std::string_view to_string(OrderFlag flag);
OrderFlag parse_order_flag(std::string_view text);

struct JudgeRequest {
    std::string sample_id;
    std::string prompt;
    std::optional<std::string> image_ref;
    std::optional<OrderFlag> order_flag;
};

struct JudgeResponse {
    std::string text;
    /// Set by replay clients: the slot order the recorded response was
    /// produced under. Takes precedence over the evaluator's own draw.
    std::optional<OrderFlag> recorded_order;
};

class JudgeClient {
public:
    virtual ~JudgeClient() = default;

    /// Throws JudgeUnavailable once retries are exhausted.
    virtual JudgeResponse complete(const JudgeRequest& request) = 0;
    virtual std::string id() const = 0;
    /// Upper bound on concurrent complete() calls.
    virtual std::size_t max_parallel() const { return 1; }
};

/// Hex FNV-1a of prompt and image ref; logged with every call.
std::string request_hash(const JudgeRequest& request);

struct RetryPolicy {
    std::size_t max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
};

/// Transcript files are JSON objects with at least "sample_id" and
/// "response"; "order_flag" ("candidate_first"/"anchor_first") and "prompt"
/// are optional. Single-call (highlight selection) transcripts may be keyed
/// by "request_hash" instead of sample_id.
class ReplayJudgeClient final : public JudgeClient {
public:
    explicit ReplayJudgeClient(const std::filesystem::path& directory);

    JudgeResponse complete(const JudgeRequest& request) override;
    std::string id() const override { return "replay"; }
    std::size_t max_parallel() const override { return 8; }
    std::size_t size() const { return by_sample_.size() + by_hash_.size(); }

private:
    std::unordered_map<std::string, nlohmann::json> by_sample_;
    std::unordered_map<std::string, nlohmann::json> by_hash_;
};

struct HttpJudgeConfig {
    std::string base_url = "https://api.openai.com";
    std::string path = "/v1/chat/completions";
    std::string model = "gpt-4-vision-preview";
    std::string api_key_env = "CTRLCIC_JUDGE_API_KEY";
    std::size_t max_parallel = 4;
    std::size_t max_tokens = 1024;
    std::chrono::seconds timeout{120};
    RetryPolicy retry;
};

/// Chat-completions client. The image ref, when present, is sent as an
/// image_url content part.
class HttpJudgeClient final : public JudgeClient {
public:
    explicit HttpJudgeClient(HttpJudgeConfig config);

    JudgeResponse complete(const JudgeRequest& request) override;
    std::string id() const override { return "http:" + config_.model; }
    std::size_t max_parallel() const override { return config_.max_parallel; }

private:
    HttpJudgeConfig config_;
    std::string api_key_;
};

}  // namespace ctrlcic::evaluator
