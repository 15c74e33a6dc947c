#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hmgie/detail/json_extract.hpp"
#include "hmgie/error.hpp"
#include "hmgie/hieg.hpp"
#include "hmgie/semantic_graph.hpp"
#include "hmgie/templates.hpp"

namespace hmgie {

enum class TemplateName {
  DirectPrompt,
  CoTPrompt,
  SemanticGraphGen,
  QuestionGen,
  Vqa,
  AnswerEval,
  CoverageCheck,
  Explain,
};

inline constexpr std::array kAllTemplates = {
    TemplateName::DirectPrompt, TemplateName::CoTPrompt,  TemplateName::SemanticGraphGen,
    TemplateName::QuestionGen,  TemplateName::Vqa,        TemplateName::AnswerEval,
    TemplateName::CoverageCheck, TemplateName::Explain,
};

constexpr std::string_view to_string(TemplateName t) noexcept {
  switch (t) {
    case TemplateName::DirectPrompt: return "DirectPrompt";
    case TemplateName::CoTPrompt: return "CoTPrompt";
    case TemplateName::SemanticGraphGen: return "SemanticGraphGen";
    case TemplateName::QuestionGen: return "QuestionGen";
    case TemplateName::Vqa: return "Vqa";
    case TemplateName::AnswerEval: return "AnswerEval";
    case TemplateName::CoverageCheck: return "CoverageCheck";
    case TemplateName::Explain: return "Explain";
  }
  return "";
}

using Substitutions = std::map<std::string, std::string, std::less<>>;

namespace detail {

inline bool placeholder_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '-' || c == '_';
}

// Calls f(begin, end, name) for every {name} token; name starts with a letter.
template <typename F>
void for_each_placeholder(std::string_view body, F&& f) {
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (body[i] != '{' || i + 1 >= body.size() ||
        std::isalpha(static_cast<unsigned char>(body[i + 1])) == 0) {
      continue;
    }
    std::size_t j = i + 1;
    while (j < body.size() && placeholder_char(body[j])) ++j;
    if (j < body.size() && body[j] == '}') {
      f(i, j + 1, body.substr(i + 1, j - i - 1));
      i = j;
    }
  }
}

}  // namespace detail

inline std::set<std::string> scan_placeholders(std::string_view body) {
  std::set<std::string> out;
  detail::for_each_placeholder(body, [&](std::size_t, std::size_t, std::string_view name) {
    out.emplace(name);
  });
  return out;
}

/// A prompt body with its declared placeholder set. `make` rejects bodies
/// whose placeholders differ from the declaration.
struct PromptTemplate {
  std::string name;
  std::string body;
  std::set<std::string> placeholders;

  static PromptTemplate make(std::string name, std::string body, std::set<std::string> declared) {
    if (scan_placeholders(body) != declared) {
      throw Error(ErrorCode::InvalidConfig,
                  "template " + name + " does not use exactly its declared placeholders");
    }
    return {std::move(name), std::move(body), std::move(declared)};
  }
};

/// Substitutes every placeholder; the body is otherwise untouched.
inline std::string render(const PromptTemplate& tpl, const Substitutions& substitutions) {
  for (const auto& [key, value] : substitutions) {
    if (!tpl.placeholders.contains(key)) {
      throw Error(ErrorCode::UnknownPlaceholder, tpl.name + " has no {" + key + "}");
    }
  }
  for (const auto& p : tpl.placeholders) {
    if (!substitutions.contains(p)) {
      throw Error(ErrorCode::MissingPlaceholder, tpl.name + " needs {" + p + "}");
    }
  }
  std::string out;
  out.reserve(tpl.body.size());
  std::size_t last = 0;
  detail::for_each_placeholder(tpl.body, [&](std::size_t b, std::size_t e, std::string_view name) {
    out.append(tpl.body, last, b - last);
    out.append(substitutions.find(name)->second);
    last = e;
  });
  out.append(tpl.body, last, std::string::npos);
  return out;
}

inline std::set<std::string> declared_placeholders(TemplateName t) {
  switch (t) {
    case TemplateName::DirectPrompt:
    case TemplateName::CoTPrompt: return {"caption"};
    case TemplateName::SemanticGraphGen: return {"example", "caption"};
    case TemplateName::QuestionGen:
      return {"semantic-graph", "previous-HIEG", "suggestion", "current-level"};
    case TemplateName::Vqa: return {"question"};
    case TemplateName::AnswerEval: return {"question", "expected-answer", "actual-answer"};
    case TemplateName::CoverageCheck: return {"semantic-graph", "hieg"};
    case TemplateName::Explain: return {"hieg", "caption", "consistency-decision"};
  }
  return {};
}

inline const char* builtin_body(TemplateName t) {
  switch (t) {
    case TemplateName::DirectPrompt: return templates::kDirectPrompt;
    case TemplateName::CoTPrompt: return templates::kCoTPrompt;
    case TemplateName::SemanticGraphGen: return templates::kSemanticGraphGen;
    case TemplateName::QuestionGen: return templates::kQuestionGen;
    case TemplateName::Vqa: return templates::kVqa;
    case TemplateName::AnswerEval: return templates::kAnswerEval;
    case TemplateName::CoverageCheck: return templates::kCoverageCheck;
    case TemplateName::Explain: return templates::kExplain;
  }
  return "";
}

/// The eight prompts, built in unless a templates directory supplies
/// `<Name>.txt` replacements.
class TemplateSet {
 public:
  static TemplateSet builtin() {
    TemplateSet set;
    for (const auto t : kAllTemplates) {
      set.templates_.emplace(t, PromptTemplate::make(std::string(to_string(t)), builtin_body(t),
                                                     declared_placeholders(t)));
    }
    return set;
  }

  static TemplateSet with_overrides(const std::filesystem::path& dir) {
    TemplateSet set = builtin();
    if (!std::filesystem::is_directory(dir)) {
      throw Error(ErrorCode::InvalidConfig, "templates dir " + dir.string() + " not found");
    }
    for (const auto t : kAllTemplates) {
      const auto file = dir / (std::string(to_string(t)) + ".txt");
      std::ifstream in(file, std::ios::binary);
      if (!in) continue;
      std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      set.templates_[t] =
          PromptTemplate::make(std::string(to_string(t)), std::move(body), declared_placeholders(t));
    }
    return set;
  }

  const PromptTemplate& get(TemplateName t) const { return templates_.at(t); }

  std::string render(TemplateName t, const Substitutions& subs) const {
    return hmgie::render(get(t), subs);
  }

 private:
  std::map<TemplateName, PromptTemplate> templates_;
};

// ---------------------------------------------------------------------------
// Reply parsers

struct VqaReply {
  std::string answer;
  double confidence = 1.0;
};

struct EvalReply {
  bool correct = false;
};

struct CoverageReply {
  bool verified_complete = false;
  std::set<NodeId> examined_nodes;
  std::set<EdgeIndex> examined_edges;
  std::optional<std::string> next_level_suggestion;
};

struct DetectorReply {
  bool consistent = false;
  std::string explanation;
};

namespace detail {

inline json reply_object(std::string_view raw, std::string_view what) {
  auto obj = extract_json(raw);
  if (!obj) throw Error(ErrorCode::MalformedOutput, "no JSON object in " + std::string(what));
  return *std::move(obj);
}

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Looks up the first present key among aliases.
inline const json* field(const json& obj, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (const auto it = obj.find(k); it != obj.end()) return &*it;
  }
  return nullptr;
}

inline std::optional<bool> as_bool(const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const std::string s = lower(trim(v.get<std::string>()));
    if (s == "true" || s == "yes") return true;
    if (s == "false" || s == "no") return false;
  }
  return std::nullopt;
}

inline std::string as_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

inline std::set<NodeId> node_list(const json* v, std::string_view where) {
  std::set<NodeId> out;
  if (v == nullptr || v->is_null()) return out;
  if (!v->is_array()) throw Error(ErrorCode::SchemaViolation, std::string(where) + " not a list");
  for (const auto& x : *v) {
    if (!x.is_string()) throw Error(ErrorCode::SchemaViolation, std::string(where) + " entry not a string");
    out.emplace(trim(x.get<std::string>()));
  }
  return out;
}

// Edge indices as integers; "3" and "E3" are accepted as well.
inline std::set<EdgeIndex> edge_list(const json* v, std::string_view where) {
  std::set<EdgeIndex> out;
  if (v == nullptr || v->is_null()) return out;
  if (!v->is_array()) throw Error(ErrorCode::SchemaViolation, std::string(where) + " not a list");
  for (const auto& x : *v) {
    if (x.is_number_unsigned()) {
      out.insert(x.get<EdgeIndex>());
      continue;
    }
    if (x.is_number_integer() && x.get<long long>() >= 0) {
      out.insert(static_cast<EdgeIndex>(x.get<long long>()));
      continue;
    }
    if (x.is_string()) {
      std::string s = trim(x.get<std::string>());
      if (!s.empty() && (s[0] == 'E' || s[0] == 'e')) s.erase(0, 1);
      if (!s.empty() && s.size() < 10 &&
          std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) != 0; })) {
        out.insert(static_cast<EdgeIndex>(std::stoul(s)));
        continue;
      }
    }
    throw Error(ErrorCode::SchemaViolation, std::string(where) + " entry is not an edge index");
  }
  return out;
}

}  // namespace detail

/// Visual QA reply. Confidence defaults to 1.0 when absent and is clamped.
inline VqaReply parse_vqa_reply(std::string_view raw) {
  const json obj = detail::reply_object(raw, "VQA reply");
  const json* answer = detail::field(obj, {"Answer", "answer"});
  if (answer == nullptr || answer->is_null()) {
    throw Error(ErrorCode::SchemaViolation, "VQA reply lacks \"Answer\"");
  }
  VqaReply r;
  r.answer = detail::as_text(*answer);
  if (const json* c = detail::field(obj, {"Confidence", "confidence"}); c != nullptr && !c->is_null()) {
    double value = 0.0;
    if (c->is_number()) {
      value = c->get<double>();
    } else if (c->is_string()) {
      try {
        value = std::stod(c->get<std::string>());
      } catch (const std::exception&) {
        throw Error(ErrorCode::SchemaViolation, "VQA confidence is not a number");
      }
    } else {
      throw Error(ErrorCode::SchemaViolation, "VQA confidence is not a number");
    }
    if (std::isnan(value)) throw Error(ErrorCode::SchemaViolation, "VQA confidence is NaN");
    r.confidence = std::clamp(value, 0.0, 1.0);
  }
  return r;
}

inline EvalReply parse_eval_reply(std::string_view raw) {
  const json obj = detail::reply_object(raw, "evaluation reply");
  const json* c = detail::field(obj, {"Correct", "correct"});
  if (c == nullptr) throw Error(ErrorCode::SchemaViolation, "evaluation reply lacks \"Correct\"");
  const auto b = detail::as_bool(*c);
  if (!b) throw Error(ErrorCode::SchemaViolation, "\"Correct\" is not a boolean");
  return {*b};
}

/// Question-generation reply: {"Questions": [...]} or a bare list. Items with
/// duplicate text collapse to the first; incomplete items are dropped. Both
/// produce warnings.
inline QuestionBatch parse_question_batch(std::string_view raw, int level,
                                          Warnings* warnings = nullptr) {
  const auto payload = detail::extract_json(raw, /*allow_array=*/true);
  if (!payload) throw Error(ErrorCode::MalformedOutput, "no JSON in question reply");
  const json* items = &*payload;
  if (payload->is_object()) {
    items = detail::field(*payload, {"Questions", "questions", "Question-List"});
    if (items == nullptr || !items->is_array()) {
      throw Error(ErrorCode::MalformedOutput, "question reply lacks a \"Questions\" list");
    }
  }

  QuestionBatch batch;
  batch.level = level;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < items->size(); ++i) {
    const json& it = (*items)[i];
    const std::string where = "question " + std::to_string(i);
    if (!it.is_object()) {
      warn(warnings, where + ": not an object, dropped");
      continue;
    }
    const json* q = detail::field(it, {"Question", "question"});
    const json* expected = detail::field(it, {"Expected-Answer", "Expected Answer", "expected_answer"});
    if (q == nullptr || !q->is_string() || detail::trim(q->get<std::string>()).empty() ||
        expected == nullptr || expected->is_null()) {
      warn(warnings, where + ": missing Question or Expected-Answer, dropped");
      continue;
    }
    QuestionItem item;
    item.question = detail::trim(q->get<std::string>());
    item.expected_answer = detail::as_text(*expected);
    if (const json* f = detail::field(it, {"Verify-Fact", "Verify Fact", "verify_fact"});
        f != nullptr && !f->is_null()) {
      item.verify_fact = detail::as_text(*f);
    }
    try {
      for (const auto& p : detail::node_list(
               detail::field(it, {"Parent-IDS", "Parent-IDs", "Parent-Ids", "parent_ids"}),
               where + " Parent-IDS")) {
        item.parent_ids.emplace(p.str());
      }
      item.covered_nodes = detail::node_list(detail::field(it, {"Covered-Nodes", "covered_nodes"}),
                                             where + " Covered-Nodes");
      item.covered_edges = detail::edge_list(detail::field(it, {"Covered-Edges", "covered_edges"}),
                                             where + " Covered-Edges");
    } catch (const Error& e) {
      warn(warnings, where + ": " + e.what() + ", dropped");
      continue;
    }
    if (!seen.insert(item.question).second) {
      warn(warnings, where + ": duplicate question text, dropped");
      continue;
    }
    batch.items.push_back(std::move(item));
  }
  if (batch.items.empty()) throw Error(ErrorCode::EmptyBatch, "no usable questions");
  return batch;
}

inline CoverageReply parse_coverage_reply(std::string_view raw) {
  const json obj = detail::reply_object(raw, "coverage reply");
  const json* complete = detail::field(obj, {"Verified-Complete", "Verified Complete", "verified_complete"});
  if (complete == nullptr) throw Error(ErrorCode::SchemaViolation, "coverage reply lacks \"Verified-Complete\"");
  const auto done = detail::as_bool(*complete);
  if (!done) throw Error(ErrorCode::SchemaViolation, "\"Verified-Complete\" is not a boolean");

  CoverageReply r;
  r.verified_complete = *done;
  r.examined_nodes = detail::node_list(detail::field(obj, {"Examined-Nodes", "examined_nodes"}),
                                       "Examined-Nodes");
  r.examined_edges = detail::edge_list(detail::field(obj, {"Examined-Edges", "examined_edges"}),
                                       "Examined-Edges");
  if (const json* s = detail::field(obj, {"Next-Level-Suggestion", "Next Level Suggestion"});
      s != nullptr && !s->is_null()) {
    const std::string text = detail::trim(detail::as_text(*s));
    const std::string folded = detail::lower(text);
    if (!text.empty() && folded != "none" && folded != "null") r.next_level_suggestion = text;
  }
  if (r.verified_complete && r.next_level_suggestion) {
    throw Error(ErrorCode::SchemaViolation, "complete coverage must not carry a suggestion");
  }
  return r;
}

/// Direct/CoT detector reply: "Yes" means the caption matches the image.
inline DetectorReply parse_detector_reply(std::string_view raw) {
  const json obj = detail::reply_object(raw, "detector reply");
  const json* a = detail::field(obj, {"Answer", "answer"});
  if (a == nullptr) throw Error(ErrorCode::SchemaViolation, "detector reply lacks \"Answer\"");
  const auto b = detail::as_bool(*a);
  if (!b) throw Error(ErrorCode::SchemaViolation, "detector answer is neither Yes nor No");
  DetectorReply r;
  r.consistent = *b;
  if (const json* e = detail::field(obj, {"Explanation", "explanation"}); e != nullptr) {
    r.explanation = detail::as_text(*e);
  }
  return r;
}

/// Explanation text; a JSON {"Explanation": ...} payload is unwrapped,
/// anything else is taken as plain text.
inline std::string parse_explanation(std::string_view raw) {
  if (const auto obj = detail::extract_json(raw)) {
    if (const json* e = detail::field(*obj, {"Explanation", "explanation"}); e != nullptr && e->is_string()) {
      return detail::trim(e->get<std::string>());
    }
  }
  return detail::trim(raw);
}

}  // namespace hmgie
