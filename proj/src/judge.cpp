#include "ctrlcic/judge.hpp"

#include <cstdlib>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ctrlcic/core.hpp"

// Last: resolv.h (pulled in by httplib) defines a _res macro that breaks Eigen.
#include <httplib.h>

namespace ctrlcic::evaluator {

std::string_view to_string(OrderFlag flag) {
    return flag == OrderFlag::CandidateFirst ? "candidate_first" : "anchor_first";
}

OrderFlag parse_order_flag(std::string_view text) {
    if (text == "candidate_first") return OrderFlag::CandidateFirst;
    if (text == "anchor_first") return OrderFlag::AnchorFirst;
    throw Error(Errc::DataFormatError, fmt::format("unknown order flag '{}'", text));
}

std::string request_hash(const JudgeRequest& request) {
    std::string key = request.prompt;
    key.push_back('\0');
    key += request.image_ref.value_or("");
    return core::hex64(core::fnv1a64(key));
}

// ---------------------------------------------------------------------------

ReplayJudgeClient::ReplayJudgeClient(const std::filesystem::path& directory) {
    if (!std::filesystem::is_directory(directory)) {
        throw Error(Errc::Io, fmt::format("transcript directory '{}' does not exist", directory.string()));
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(directory)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        std::ifstream in(file, std::ios::binary);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::DataFormatError, fmt::format("transcript '{}': {}", file.string(), e.what()));
        }
        if (!j.is_object() || !j.contains("response") || !j.at("response").is_string()) {
            throw Error(Errc::DataFormatError, fmt::format("transcript '{}' has no response text", file.string()));
        }
        if (j.contains("sample_id")) {
            by_sample_[j.at("sample_id").get<std::string>()] = j;
        } else if (j.contains("request_hash")) {
            by_hash_[j.at("request_hash").get<std::string>()] = j;
        } else {
            throw Error(Errc::DataFormatError,
                        fmt::format("transcript '{}' has neither sample_id nor request_hash", file.string()));
        }
    }
}

JudgeResponse ReplayJudgeClient::complete(const JudgeRequest& request) {
    const std::string hash = request_hash(request);
    const nlohmann::json* found = nullptr;
    if (!request.sample_id.empty()) {
        const auto it = by_sample_.find(request.sample_id);
        if (it != by_sample_.end()) found = &it->second;
    }
    if (found == nullptr) {
        const auto it = by_hash_.find(hash);
        if (it != by_hash_.end()) found = &it->second;
    }
    if (found == nullptr) {
        throw Error(Errc::JudgeUnavailable,
                    fmt::format("no recorded transcript for sample '{}' (request {})", request.sample_id, hash));
    }
    spdlog::debug("judge replay sample={} request={}", request.sample_id, hash);
    JudgeResponse response;
    response.text = found->at("response").get<std::string>();
    if (found->contains("order_flag")) response.recorded_order = parse_order_flag(found->at("order_flag").get<std::string>());
    return response;
}

// ---------------------------------------------------------------------------

HttpJudgeClient::HttpJudgeClient(HttpJudgeConfig config) : config_(std::move(config)) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
}

JudgeResponse HttpJudgeClient::complete(const JudgeRequest& request) {
    if (api_key_.empty()) {
        throw Error(Errc::JudgeUnavailable, fmt::format("judge credentials missing (set {})", config_.api_key_env));
    }
    nlohmann::json content = nlohmann::json::array();
    content.push_back({{"type", "text"}, {"text", request.prompt}});
    if (request.image_ref) content.push_back({{"type", "image_url"}, {"image_url", {{"url", *request.image_ref}}}});
    const nlohmann::json body = {{"model", config_.model},
                                 {"max_tokens", config_.max_tokens},
                                 {"temperature", 0},
                                 {"messages", {{{"role", "user"}, {"content", content}}}}};
    const std::string hash = request_hash(request);

    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_bearer_token_auth(api_key_);

    auto backoff = config_.retry.initial_backoff;
    std::string last_error;
    for (std::size_t attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
        spdlog::info("judge call sample={} request={} attempt={}", request.sample_id, hash, attempt);
        const auto res = client.Post(config_.path, body.dump(), "application/json");
        if (res && res->status == 200) {
            try {
                const auto reply = nlohmann::json::parse(res->body);
                return {reply.at("choices").at(0).at("message").at("content").get<std::string>(), std::nullopt};
            } catch (const nlohmann::json::exception& e) {
                throw Error(Errc::UnparseableResponse, fmt::format("judge reply is not a chat completion: {}", e.what()));
            }
        }
        last_error = res ? fmt::format("HTTP {}", res->status) : httplib::to_string(res.error());
        const bool retryable = !res || res->status == 429 || res->status >= 500;
        spdlog::warn("judge call failed sample={} request={} error={}", request.sample_id, hash, last_error);
        if (!retryable) break;
        if (attempt < config_.retry.max_attempts) {
            std::this_thread::sleep_for(backoff);
            backoff = std::chrono::milliseconds(
                static_cast<long long>(static_cast<double>(backoff.count()) * config_.retry.multiplier));
        }
    }
    throw Error(Errc::JudgeUnavailable, fmt::format("judge request {} failed: {}", hash, last_error));
}

}  // namespace ctrlcic::evaluator
