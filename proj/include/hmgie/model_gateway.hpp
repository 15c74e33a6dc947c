#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hmgie/detail/digest.hpp"
#include "hmgie/error.hpp"

namespace hmgie {

enum class RequestKind { Text, Vision };

/// Image bytes with their media type and SHA-256 digest.
struct ImageInput {
  std::string media_type;
  std::string bytes;
  std::string digest;

  static ImageInput from_bytes(std::string bytes, std::string media_type) {
    ImageInput img;
    img.digest = detail::sha256_hex(bytes);
    img.bytes = std::move(bytes);
    img.media_type = std::move(media_type);
    return img;
  }
};

/// Media type from magic bytes; nullopt when the format is not recognized.
inline std::optional<std::string> sniff_media_type(std::string_view b) {
  const auto starts = [&](std::string_view magic) { return b.substr(0, magic.size()) == magic; };
  if (starts("\x89PNG\r\n\x1a\n")) return "image/png";
  if (starts("\xff\xd8\xff")) return "image/jpeg";
  if (starts("GIF87a") || starts("GIF89a")) return "image/gif";
  if (b.size() >= 12 && starts("RIFF") && b.substr(8, 4) == "WEBP") return "image/webp";
  if (starts("BM")) return "image/bmp";
  return std::nullopt;
}

inline ImageInput load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read image " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto media = sniff_media_type(bytes);
  if (!media) throw Error(ErrorCode::InvalidImage, path.string() + " is not a supported image");
  return ImageInput::from_bytes(std::move(bytes), *media);
}

struct ModelRequest {
  RequestKind kind = RequestKind::Text;
  std::string prompt;
  std::shared_ptr<const ImageInput> image;  // required iff kind == Vision
  double temperature = 0.3;
  std::string model_id;
  int max_output_tokens = 1024;

  std::string image_digest() const { return image ? image->digest : std::string(); }

  static ModelRequest text(std::string prompt, std::string model_id, double temperature = 0.3) {
    ModelRequest r;
    r.prompt = std::move(prompt);
    r.model_id = std::move(model_id);
    r.temperature = temperature;
    return r;
  }

  static ModelRequest vision(std::string prompt, std::shared_ptr<const ImageInput> image,
                             std::string model_id, double temperature = 0.3) {
    ModelRequest r = text(std::move(prompt), std::move(model_id), temperature);
    r.kind = RequestKind::Vision;
    r.image = std::move(image);
    return r;
  }

  void validate() const {
    if (!(temperature >= 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be >= 0");
    if (max_output_tokens < 1) throw Error(ErrorCode::InvalidArgument, "max_output_tokens < 1");
    if ((kind == RequestKind::Vision) != static_cast<bool>(image)) {
      throw Error(ErrorCode::InvalidArgument, "vision requests, and only they, carry an image");
    }
    if (image && detail::sha256_hex(image->bytes) != image->digest) {
      throw Error(ErrorCode::InvalidArgument, "image digest does not match its payload");
    }
  }
};

struct ModelResponse {
  std::string text;
  std::int64_t latency_ms = 0;
  bool cached = false;
};

/// Deterministic digest of (model_id, temperature, kind, prompt, image digest).
/// Output-token limits and wall clock do not participate.
inline std::string cache_key(const ModelRequest& req) {
  std::ostringstream temp;
  temp.precision(17);
  temp << req.temperature;
  return detail::Sha256{}
      .field(req.model_id)
      .field(temp.str())
      .field(req.kind == RequestKind::Vision ? "vision" : "text")
      .field(req.prompt)
      .field(req.image_digest())
      .hex();
}

/// Raised by backends for failures worth retrying (HTTP 429, 5xx, timeouts).
class TransientError : public Error {
 public:
  explicit TransientError(const std::string& message) : Error(ErrorCode::Exhausted, message) {}
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const ModelRequest& req) = 0;
  virtual bool supports_vision() const { return true; }
  virtual std::string name() const = 0;
};

/// Directory of recorded replies, one file per cache key holding the raw text.
class FixtureStore {
 public:
  explicit FixtureStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const noexcept { return dir_; }

  std::filesystem::path path_for(const std::string& key) const { return dir_ / key; }

  std::optional<std::string> get(const std::string& key) const {
    std::ifstream in(path_for(key), std::ios::binary);
    if (!in) return std::nullopt;
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  }

  void put(const std::string& key, const std::string& text) {
    std::lock_guard lock(mu_);
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    const auto tmp = path_for(key + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorCode::IoError, "cannot write fixture " + tmp.string());
      out << text;
    }
    std::filesystem::rename(tmp, path_for(key));
  }

 private:
  std::filesystem::path dir_;
  std::mutex mu_;
};

/// Serves recorded replies only; never touches the network.
class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(std::shared_ptr<const FixtureStore> store) : store_(std::move(store)) {}

  std::string complete(const ModelRequest& req) override {
    const std::string key = cache_key(req);
    if (auto text = store_->get(key)) return *std::move(text);
    throw Error(ErrorCode::Exhausted, "no fixture for prompt-hash " + key);
  }

  std::string name() const override { return "replay"; }

 private:
  std::shared_ptr<const FixtureStore> store_;
};

/// In-process backend answering through a callback; keeps a trace of every
/// request it saw, in arrival order.
class ScriptedBackend final : public Backend {
 public:
  using Responder = std::function<std::string(const ModelRequest&)>;

  explicit ScriptedBackend(Responder responder, bool vision = true, std::string name = "scripted")
      : responder_(std::move(responder)), vision_(vision), name_(std::move(name)) {}

  std::string complete(const ModelRequest& req) override {
    {
      std::lock_guard lock(mu_);
      trace_.push_back(req);
    }
    return responder_(req);
  }

  bool supports_vision() const override { return vision_; }
  std::string name() const override { return name_; }

  std::vector<ModelRequest> trace() const {
    std::lock_guard lock(mu_);
    return trace_;
  }

 private:
  Responder responder_;
  bool vision_;
  std::string name_;
  mutable std::mutex mu_;
  std::vector<ModelRequest> trace_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_delay{1000};
  double multiplier = 2.0;
  std::chrono::milliseconds max_total_delay{10000};
};

struct GatewayOptions {
  RetryPolicy retry;
  bool cache = true;
  // Persistent cache. Hits are served from it; fresh replies are written to it.
  std::shared_ptr<FixtureStore> store;
  std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
    std::this_thread::sleep_for(d);
  };
};

struct CallOptions {
  bool refresh = false;  // skip cache lookups, still store the fresh reply
};

/// Retrying, caching front for one backend. Safe to share between threads;
/// concurrent identical requests coalesce into one backend call.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {})
      : backend_(std::move(backend)), options_(std::move(options)) {
    if (options_.retry.max_attempts < 1) {
      throw Error(ErrorCode::InvalidConfig, "retry attempts must be >= 1");
    }
  }

  ModelResponse call(const ModelRequest& req, CallOptions call_options = {}) {
    req.validate();
    if (req.kind == RequestKind::Vision && !backend_->supports_vision()) {
      throw Error(ErrorCode::Unsupported, backend_->name() + " cannot answer vision requests");
    }
    if (!options_.cache && !options_.store) return invoke(req);

    const std::string key = cache_key(req);
    std::promise<std::string> promise;
    std::shared_future<std::string> waiting;
    {
      std::unique_lock lock(mu_);
      if (!call_options.refresh) {
        if (const auto it = memory_.find(key); it != memory_.end()) {
          ++cache_hits_;
          return {it->second, 0, true};
        }
      }
      if (const auto it = inflight_.find(key); it != inflight_.end()) {
        waiting = it->second;
      } else {
        inflight_.emplace(key, promise.get_future().share());
      }
    }
    if (waiting.valid()) {
      std::string text = waiting.get();
      ++cache_hits_;
      return {std::move(text), 0, true};
    }

    try {
      ModelResponse resp;
      std::optional<std::string> stored;
      if (options_.store && !call_options.refresh) stored = options_.store->get(key);
      if (stored) {
        ++cache_hits_;
        resp = {*std::move(stored), 0, true};
      } else {
        resp = invoke(req);
        if (options_.store) options_.store->put(key, resp.text);
      }
      {
        std::lock_guard lock(mu_);
        if (options_.cache) memory_[key] = resp.text;
        inflight_.erase(key);
      }
      promise.set_value(resp.text);
      return resp;
    } catch (...) {
      {
        std::lock_guard lock(mu_);
        inflight_.erase(key);
      }
      promise.set_exception(std::current_exception());
      throw;
    }
  }

  const Backend& backend() const noexcept { return *backend_; }
  std::int64_t backend_calls() const noexcept { return backend_calls_; }
  std::int64_t cache_hits() const noexcept { return cache_hits_; }
  std::chrono::milliseconds total_backoff() const noexcept {
    return std::chrono::milliseconds(total_backoff_ms_.load());
  }

 private:
  ModelResponse invoke(const ModelRequest& req) {
    const RetryPolicy& policy = options_.retry;
    std::chrono::milliseconds budget = policy.max_total_delay;
    double delay = static_cast<double>(policy.initial_delay.count());
    std::string last_error;
    for (int attempt = 1; attempt <= policy.max_attempts; ++attempt) {
      const auto start = std::chrono::steady_clock::now();
      try {
        ++backend_calls_;
        std::string text = backend_->complete(req);
        const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - start);
        return {std::move(text), elapsed.count(), false};
      } catch (const TransientError& e) {
        last_error = e.what();
      }
      if (attempt == policy.max_attempts) break;
      const auto wait = std::min(
          std::chrono::milliseconds(static_cast<std::int64_t>(delay)), budget);
      if (wait.count() > 0) {
        options_.sleep(wait);
        budget -= wait;
        total_backoff_ms_ += wait.count();
      }
      delay *= policy.multiplier;
    }
    throw Error(ErrorCode::Exhausted, backend_->name() + ": retries exhausted after " +
                                          std::to_string(policy.max_attempts) +
                                          " attempts: " + last_error);
  }

  std::shared_ptr<Backend> backend_;
  GatewayOptions options_;
  std::mutex mu_;
  std::unordered_map<std::string, std::string> memory_;
  std::map<std::string, std::shared_future<std::string>> inflight_;
  std::atomic<std::int64_t> backend_calls_{0};
  std::atomic<std::int64_t> cache_hits_{0};
  std::atomic<std::int64_t> total_backoff_ms_{0};
};

}  // namespace hmgie
