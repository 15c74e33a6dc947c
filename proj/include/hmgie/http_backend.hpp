#pragma once

#include <chrono>
#include <regex>
#include <string>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "hmgie/detail/digest.hpp"
#include "hmgie/error.hpp"
#include "hmgie/model_gateway.hpp"

namespace hmgie {

struct HttpBackendOptions {
  std::string endpoint;  // full URL, e.g. https://api.openai.com/v1/chat/completions
  std::string api_key;
  std::string system_prompt = "You are a helpful assistant.";
  std::chrono::seconds timeout{120};
  bool vision = true;
};

/// Speaks the chat-completions wire shape: a system and a user message, the
/// image (if any) embedded as a base64 data URL.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpBackendOptions options) : options_(std::move(options)) {
    static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(options_.endpoint, m, kUrl)) {
      throw Error(ErrorCode::InvalidConfig, "endpoint is not an http(s) URL: " + options_.endpoint);
    }
    origin_ = m[1];
    path_ = m[2].matched ? std::string(m[2]) : "/";
  }

  static nlohmann::json request_body(const ModelRequest& req, const std::string& system_prompt) {
    using nlohmann::json;
    json user;
    if (req.kind == RequestKind::Vision) {
      const std::string url =
          "data:" + req.image->media_type + ";base64," + detail::base64_encode(req.image->bytes);
      user = json::array({json{{"type", "text"}, {"text", req.prompt}},
                          json{{"type", "image_url"}, {"image_url", {{"url", url}}}}});
    } else {
      user = req.prompt;
    }
    return {{"model", req.model_id},
            {"temperature", req.temperature},
            {"max_tokens", req.max_output_tokens},
            {"messages",
             json::array({json{{"role", "system"}, {"content", system_prompt}},
                          json{{"role", "user"}, {"content", std::move(user)}}})}};
  }

  std::string complete(const ModelRequest& req) override {
    httplib::Client client(origin_);
    const auto secs = static_cast<time_t>(options_.timeout.count());
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    client.set_write_timeout(secs, 0);
    httplib::Headers headers;
    if (!options_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + options_.api_key);
    }
    const std::string body = request_body(req, options_.system_prompt).dump();
    auto res = client.Post(path_, headers, body, "application/json");
    if (!res) {
      throw TransientError("transport error: " + httplib::to_string(res.error()));
    }
    if (res->status == 401 || res->status == 403) {
      throw Error(ErrorCode::AuthError, "HTTP " + std::to_string(res->status) + " from " + origin_);
    }
    if (res->status == 429 || res->status >= 500) {
      throw TransientError("HTTP " + std::to_string(res->status));
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(ErrorCode::Exhausted,
                  "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    const auto reply = nlohmann::json::parse(res->body, nullptr, false);
    if (reply.is_discarded()) throw Error(ErrorCode::MalformedOutput, "response is not JSON");
    try {
      const auto& content = reply.at("choices").at(0).at("message").at("content");
      return content.is_string() ? content.get<std::string>() : std::string();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::MalformedOutput, "response lacks choices[0].message.content");
    }
  }

  bool supports_vision() const override { return options_.vision; }
  std::string name() const override { return "http:" + origin_; }

 private:
  HttpBackendOptions options_;
  std::string origin_;
  std::string path_;
};

}  // namespace hmgie
