#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hmgie/error.hpp"
#include "hmgie/scoring.hpp"

namespace hmgie {

inline constexpr std::string_view kRoleNames[] = {"graph_gen", "question_gen", "vqa",    "eval",    "coverage",
                                                  "explain",   "captioner",    "fusion", "perturb", "detector"};

struct RoleEndpoint {
  std::string endpoint;
  std::string api_key;
  std::string model;
};

/// Fully resolved and validated settings.
struct RunConfig {
  int max_level = 5;
  int max_per_level = 10;
  double weight_ratio = 1.2;
  WeightDirection weight_direction = WeightDirection::IncreasingWithDepth;
  int retry_limit = 2;
  int parallelism = 1;
  int intra_level_parallelism = 1;
  double temperature = 0.3;
  int max_output_tokens = 1024;
  int retry_attempts = 3;
  int initial_backoff_ms = 1000;
  int max_backoff_ms = 10000;
  int timeout_s = 120;
  int max_iterations = 5;
  std::string detector = "direct";
  std::vector<std::string> captioner_models;
  std::string cache_dir;
  std::string templates_dir;
  std::map<std::string, RoleEndpoint> roles;  // every name in kRoleNames
  std::map<std::string, std::string> sources;  // key -> default | file | env | flag
};

namespace detail {

struct Setting {
  std::string value;
  std::string source;
};

inline const std::map<std::string, std::string>& config_defaults() {
  static const std::map<std::string, std::string> d = [] {
    std::map<std::string, std::string> m = {
        {"max_level", "5"},          {"max_per_level", "10"},
        {"weight_ratio", "1.2"},     {"weight_direction", "increasing"},
        {"retry_limit", "2"},        {"parallelism", "1"},
        {"intra_level_parallelism", "1"},
        {"temperature", "0.3"},      {"max_output_tokens", "1024"},
        {"retry_attempts", "3"},     {"initial_backoff_ms", "1000"},
        {"max_backoff_ms", "10000"}, {"timeout_s", "120"},
        {"max_iterations", "5"},     {"detector", "direct"},
        {"captioner_models", ""},    {"cache_dir", ""},
        {"templates_dir", ""},       {"endpoint", "https://api.openai.com/v1/chat/completions"},
        {"api_key", ""},             {"model", "gpt-4o"},
    };
    for (const auto role : kRoleNames) {
      for (const char* f : {"endpoint", "api_key", "model"}) m["roles." + std::string(role) + "." + f] = "";
    }
    return m;
  }();
  return d;
}

// roles.vqa.api_key -> HMGIE_VQA_API_KEY; max_level -> HMGIE_MAX_LEVEL
inline std::string env_name(std::string_view key) {
  std::string k(key);
  if (k.rfind("roles.", 0) == 0) k.erase(0, 6);
  std::string out = "HMGIE_";
  for (const char c : k) out += c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline std::string scalar_text(const nlohmann::json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return v.dump();
  if (v.is_array() && key == "captioner_models") {
    std::string out;
    for (const auto& x : v) {
      if (!x.is_string()) throw Error(ErrorCode::InvalidConfig, key + ": entries must be strings");
      out += (out.empty() ? "" : ",") + x.get<std::string>();
    }
    return out;
  }
  throw Error(ErrorCode::InvalidConfig, key + ": must be a string or number (from config file)");
}

// Flattens {"roles": {"vqa": {"model": ...}}} into "roles.vqa.model".
inline void flatten_file(const nlohmann::json& j, std::map<std::string, Setting>& out) {
  if (j.is_null()) return;
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config file: top level must be an object");
  for (const auto& [k, v] : j.items()) {
    if (k == "roles") {
      if (!v.is_object()) throw Error(ErrorCode::InvalidConfig, "roles: must be an object");
      for (const auto& [role, fields] : v.items()) {
        if (!fields.is_object()) throw Error(ErrorCode::InvalidConfig, "roles." + role + ": must be an object");
        for (const auto& [f, fv] : fields.items()) {
          const std::string key = "roles." + role + "." + f;
          if (!config_defaults().contains(key)) throw Error(ErrorCode::InvalidConfig, key + ": unknown setting");
          out[key] = {scalar_text(fv, key), "file"};
        }
      }
      continue;
    }
    if (!config_defaults().contains(k)) throw Error(ErrorCode::InvalidConfig, k + ": unknown setting");
    out[k] = {scalar_text(v, k), "file"};
  }
}

inline std::string describe(const std::string& key, const Setting& s) {
  std::string from = s.source;
  if (s.source == "env") from = "env " + env_name(key);
  if (s.source == "flag") from = "flag --" + key;
  return "(got '" + s.value + "' from " + from + ")";
}

inline long long parse_int(const std::string& key, const Setting& s, long long min) {
  long long v = 0;
  const auto* b = s.value.data();
  const auto* e = b + s.value.size();
  const auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) {
    throw Error(ErrorCode::InvalidConfig, key + ": must be an integer " + describe(key, s));
  }
  if (v < min) {
    throw Error(ErrorCode::InvalidConfig, key + ": must be >= " + std::to_string(min) + " " + describe(key, s));
  }
  return v;
}

inline double parse_real(const std::string& key, const Setting& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s.value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.value.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::InvalidConfig, key + ": must be a number " + describe(key, s));
  }
  return v;
}

}  // namespace detail

/// Merges defaults, a config file object, environment variables and flags,
/// later layers winning, and validates every value. Flags and the file use
/// setting names ("max_level", "roles.vqa.model"); environment variables use
/// HMGIE_MAX_LEVEL, HMGIE_VQA_MODEL and so on.
inline RunConfig resolve_config(const nlohmann::json& file, const std::map<std::string, std::string>& env,
                                const std::map<std::string, std::string>& flags) {
  using detail::Setting;
  std::map<std::string, Setting> s;
  for (const auto& [k, v] : detail::config_defaults()) s[k] = {v, "default"};
  detail::flatten_file(file, s);
  for (const auto& [k, v] : detail::config_defaults()) {
    if (const auto it = env.find(detail::env_name(k)); it != env.end()) s[k] = {it->second, "env"};
  }
  for (const auto& [k, v] : flags) {
    if (!detail::config_defaults().contains(k)) throw Error(ErrorCode::InvalidConfig, k + ": unknown setting");
    s[k] = {v, "flag"};
  }

  const auto i = [&](const char* key, long long min) {
    return static_cast<int>(detail::parse_int(key, s.at(key), min));
  };
  RunConfig c;
  c.max_level = i("max_level", 1);
  c.max_per_level = i("max_per_level", 1);
  c.weight_ratio = detail::parse_real("weight_ratio", s.at("weight_ratio"));
  if (!(c.weight_ratio > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "weight_ratio: must be > 0 " + detail::describe("weight_ratio", s.at("weight_ratio")));
  }
  const std::string dir = s.at("weight_direction").value;
  if (dir == "increasing") {
    c.weight_direction = WeightDirection::IncreasingWithDepth;
  } else if (dir == "decreasing") {
    c.weight_direction = WeightDirection::DecreasingWithDepth;
  } else {
    throw Error(ErrorCode::InvalidConfig, "weight_direction: must be increasing or decreasing " +
                                              detail::describe("weight_direction", s.at("weight_direction")));
  }
  c.retry_limit = i("retry_limit", 0);
  c.parallelism = i("parallelism", 1);
  c.intra_level_parallelism = i("intra_level_parallelism", 1);
  c.temperature = detail::parse_real("temperature", s.at("temperature"));
  if (c.temperature < 0.0) {
    throw Error(ErrorCode::InvalidConfig, "temperature: must be >= 0 " + detail::describe("temperature", s.at("temperature")));
  }
  c.max_output_tokens = i("max_output_tokens", 1);
  c.retry_attempts = i("retry_attempts", 1);
  c.initial_backoff_ms = i("initial_backoff_ms", 0);
  c.max_backoff_ms = i("max_backoff_ms", 0);
  c.timeout_s = i("timeout_s", 1);
  c.max_iterations = i("max_iterations", 1);
  c.detector = s.at("detector").value;
  if (c.detector != "direct" && c.detector != "cot") {
    throw Error(ErrorCode::InvalidConfig, "detector: must be direct or cot " + detail::describe("detector", s.at("detector")));
  }
  const std::string models = s.at("captioner_models").value;
  for (std::size_t b = 0; b <= models.size();) {
    const std::size_t e = std::min(models.find(',', b), models.size());
    std::string m = models.substr(b, e - b);
    m.erase(0, m.find_first_not_of(' '));
    m.erase(m.find_last_not_of(' ') + 1);
    if (!m.empty()) c.captioner_models.push_back(std::move(m));
    b = e + 1;
  }
  c.cache_dir = s.at("cache_dir").value;
  c.templates_dir = s.at("templates_dir").value;
  for (const auto role : kRoleNames) {
    const std::string prefix = "roles." + std::string(role) + ".";
    const auto pick = [&](const char* f) {
      const std::string& own = s.at(prefix + f).value;
      return own.empty() ? s.at(f).value : own;
    };
    c.roles[std::string(role)] = {pick("endpoint"), pick("api_key"), pick("model")};
  }
  for (const auto& [k, v] : s) c.sources[k] = v.source;
  return c;
}

/// Reads a JSON config file; an empty path yields an empty object.
inline nlohmann::json load_config_file(const std::filesystem::path& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "config: cannot read " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::InvalidConfig, "config: " + path.string() + " is not valid JSON");
  return j;
}

}  // namespace hmgie
