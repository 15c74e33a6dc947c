#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace hmgie::detail {

using json = nlohmann::json;

// Returns the end (one past) of the balanced bracket run starting at `begin`,
// honoring JSON string literals. Treats ( ) as brackets when `parens` is set
// because models often copy the tuple notation from the graph prompt.
inline std::optional<std::size_t> balanced_end(std::string_view text, std::size_t begin,
                                               bool parens) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = begin; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"': in_string = true; break;
      case '{':
      case '[': ++depth; break;
      case '(':
        if (parens) ++depth;
        break;
      case '}':
      case ']': --depth; break;
      case ')':
        if (parens) --depth;
        break;
      default: break;
    }
    if (depth == 0) return i + 1;
    if (depth < 0) return std::nullopt;
  }
  return std::nullopt;
}

inline std::string parens_to_brackets(std::string_view text) {
  std::string out(text);
  bool in_string = false;
  bool escaped = false;
  for (char& c : out) {
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '(') c = '[';
    else if (c == ')') c = ']';
  }
  return out;
}

inline std::optional<json> try_parse(std::string_view candidate) {
  json value = json::parse(candidate.begin(), candidate.end(), nullptr, false);
  if (value.is_discarded()) return std::nullopt;
  return value;
}

/// Finds the first well-formed JSON object embedded in a model reply. Code
/// fences and surrounding prose are skipped. With `allow_array` a top-level
/// array is accepted too when it appears before any object.
inline std::optional<json> extract_json(std::string_view text, bool allow_array = false) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c != '{' && !(allow_array && c == '[')) continue;
    for (const bool parens : {false, true}) {
      const auto end = balanced_end(text, i, parens);
      if (!end) continue;
      const std::string_view candidate = text.substr(i, *end - i);
      std::optional<json> value =
          parens ? try_parse(parens_to_brackets(candidate)) : try_parse(candidate);
      if (value && (value->is_object() || (allow_array && value->is_array()))) return value;
    }
  }
  return std::nullopt;
}

}  // namespace hmgie::detail
