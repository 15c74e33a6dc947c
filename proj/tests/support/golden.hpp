#pragma once

// Fixed substitutions for the golden prompt files under tests/golden/.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "hmgie/prompt_codec.hpp"

namespace golden {

inline hmgie::Substitutions substitutions(hmgie::TemplateName t) {
  using hmgie::TemplateName;
  const std::string graph = R"({"nodes": [{"id": "N1", "type": "Entity", "label": "car"}, {"id": "N2", "type": "Attribute", "label": "red"}], "edges": [{"from": ["N1", "car"], "to": ["N2", "red"], "type": "HasAttribute", "label": "color", "description": "The car is red."}]})";
  const std::string hieg = R"([{"Question-ID": "Q1.1", "Question": "Is there a car?", "Verify-Fact": "A car is present.", "Expected-Answer": "Yes", "Actual-Answer": "Yes", "Eval-Correct": true, "Parent-IDS": []}])";
  switch (t) {
    case TemplateName::DirectPrompt:
    case TemplateName::CoTPrompt: return {{"caption", "a red car"}};
    case TemplateName::SemanticGraphGen: return {{"example", "Caption: a dog\nOutput: {\"nodes\": []}"}, {"caption", "a red car"}};
    case TemplateName::QuestionGen:
      return {{"semantic-graph", graph}, {"previous-HIEG", "[]"}, {"suggestion", "None"}, {"current-level", "1"}};
    case TemplateName::Vqa: return {{"question", "What color is the car?"}};
    case TemplateName::AnswerEval:
      return {{"question", "What color is the car?"}, {"expected-answer", "red"}, {"actual-answer", "It is red."}};
    case TemplateName::CoverageCheck: return {{"semantic-graph", graph}, {"hieg", hieg}};
    case TemplateName::Explain:
      return {{"hieg", hieg}, {"caption", "a red car"}, {"consistency-decision", "Consistent"}};
  }
  return {};
}

inline std::filesystem::path path(const std::filesystem::path& source_dir, hmgie::TemplateName t) {
  return source_dir / "tests" / "golden" / (std::string(hmgie::to_string(t)) + ".txt");
}

inline std::optional<std::string> read(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace golden
