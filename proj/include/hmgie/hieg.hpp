#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hmgie/error.hpp"
#include "hmgie/semantic_graph.hpp"

namespace hmgie {

/// Question identifier, "Q<level>.<ordinal>" for nodes built by `expand`.
class QuestionId {
 public:
  QuestionId() = default;
  explicit QuestionId(std::string value) : value_(std::move(value)) {}

  static QuestionId at(int level, std::size_t ordinal) {
    return QuestionId("Q" + std::to_string(level) + "." + std::to_string(ordinal));
  }

  const std::string& str() const noexcept { return value_; }

  friend auto operator<=>(const QuestionId&, const QuestionId&) = default;

 private:
  std::string value_;
};

enum class Correctness { True, False, Pending };

struct EvalNode {
  QuestionId id;
  int level = 1;
  std::string question;
  std::string verify_fact;
  std::string expected_answer;
  std::optional<std::string> actual_answer;  // nullopt = unanswered
  double confidence = 1.0;
  Correctness correct = Correctness::Pending;
  std::set<QuestionId> parent_ids;
  std::set<NodeId> covered_nodes;
  std::set<EdgeIndex> covered_edges;

  friend bool operator==(const EvalNode&, const EvalNode&) = default;
};

struct QuestionItem {
  std::string question;
  std::string verify_fact;
  std::string expected_answer;
  std::set<QuestionId> parent_ids;
  std::set<NodeId> covered_nodes;
  std::set<EdgeIndex> covered_edges;

  friend bool operator==(const QuestionItem&, const QuestionItem&) = default;
};

/// Questions generated for one level, before answering.
struct QuestionBatch {
  int level = 1;
  std::vector<QuestionItem> items;
};

struct Answer {
  std::optional<std::string> actual_answer;
  double confidence = 1.0;
};

struct LevelStats {
  int level = 1;
  std::size_t count = 0;
  double correct_weighted_sum = 0.0;  // sum of confidence over correct nodes

  friend bool operator==(const LevelStats&, const LevelStats&) = default;
};

/// Hierarchical Inconsistency Evaluation Graph. Immutable; `expand` returns a
/// grown copy. Levels are contiguous from 1 and parents always sit on a
/// strictly lower level, so the dependency relation is acyclic.
class Hieg {
 public:
  explicit Hieg(int max_level = 5) : max_level_(max_level) {
    if (max_level < 1) throw Error(ErrorCode::InvalidConfig, "max_level must be >= 1");
  }

  int max_level() const noexcept { return max_level_; }
  int depth() const noexcept { return static_cast<int>(levels_.size()); }
  bool empty() const noexcept { return levels_.empty(); }

  const std::vector<std::vector<EvalNode>>& levels() const noexcept { return levels_; }
  const std::vector<EvalNode>& level(int l) const { return levels_.at(static_cast<std::size_t>(l - 1)); }

  std::size_t size() const noexcept {
    std::size_t n = 0;
    for (const auto& l : levels_) n += l.size();
    return n;
  }

  std::vector<const EvalNode*> all() const {
    std::vector<const EvalNode*> out;
    for (const auto& l : levels_) {
      for (const auto& n : l) out.push_back(&n);
    }
    return out;
  }

  const EvalNode* find(const QuestionId& id) const {
    for (const auto& l : levels_) {
      for (const auto& n : l) {
        if (n.id == id) return &n;
      }
    }
    return nullptr;
  }

  bool has_question(std::string_view text) const {
    for (const auto& l : levels_) {
      for (const auto& n : l) {
        if (n.question == text) return true;
      }
    }
    return false;
  }

  friend bool operator==(const Hieg&, const Hieg&) = default;

 private:
  friend Hieg expand(const Hieg&, const QuestionBatch&, const std::vector<Answer>&,
                     const std::vector<Correctness>&);

  int max_level_;
  std::vector<std::vector<EvalNode>> levels_;
};

/// Adds one level of evaluated questions. Ids are "Q<level>.<ordinal>".
inline Hieg expand(const Hieg& hieg, const QuestionBatch& batch, const std::vector<Answer>& answers,
                   const std::vector<Correctness>& verdicts) {
  const int expected_level = hieg.depth() + 1;
  if (batch.level != expected_level) {
    throw Error(ErrorCode::LevelGap, "batch level " + std::to_string(batch.level) +
                                         " but next level is " + std::to_string(expected_level));
  }
  if (batch.level > hieg.max_level()) {
    throw Error(ErrorCode::LevelGap, "batch level " + std::to_string(batch.level) +
                                         " exceeds max level " + std::to_string(hieg.max_level()));
  }
  if (answers.size() != batch.items.size() || verdicts.size() != batch.items.size()) {
    throw Error(ErrorCode::InvalidArgument, "batch, answers and verdicts differ in length");
  }

  std::unordered_set<std::string> texts;
  for (const auto* n : hieg.all()) texts.insert(n->question);

  std::vector<EvalNode> level;
  level.reserve(batch.items.size());
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    const QuestionItem& item = batch.items[i];
    const Answer& answer = answers[i];
    if (!texts.insert(item.question).second) {
      throw Error(ErrorCode::DuplicateQuestion, "question already asked: " + item.question);
    }
    for (const auto& parent : item.parent_ids) {
      const EvalNode* p = hieg.find(parent);
      if (p == nullptr || p->level >= batch.level) {
        throw Error(ErrorCode::UnknownParent,
                    "parent " + parent.str() + " is not on a lower level");
      }
    }
    if (!(answer.confidence >= 0.0 && answer.confidence <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "confidence outside [0,1]");
    }
    if ((verdicts[i] == Correctness::Pending) != !answer.actual_answer.has_value()) {
      throw Error(ErrorCode::InvalidArgument, "pending verdict must match an unanswered question");
    }
    EvalNode node;
    node.id = QuestionId::at(batch.level, i + 1);
    node.level = batch.level;
    node.question = item.question;
    node.verify_fact = item.verify_fact;
    node.expected_answer = item.expected_answer;
    node.actual_answer = answer.actual_answer;
    node.confidence = answer.confidence;
    node.correct = verdicts[i];
    node.parent_ids = item.parent_ids;
    node.covered_nodes = item.covered_nodes;
    node.covered_edges = item.covered_edges;
    level.push_back(std::move(node));
  }

  Hieg out = hieg;
  out.levels_.push_back(std::move(level));
  return out;
}

/// 1 iff every question was answered correctly.
inline int overall_decision(const Hieg& hieg) {
  if (hieg.size() == 0) throw Error(ErrorCode::EmptyHieg, "no questions were generated");
  int decision = 1;
  for (const auto* n : hieg.all()) {
    if (n->correct == Correctness::Pending) {
      throw Error(ErrorCode::PendingNode, n->id.str() + " has no verdict");
    }
    if (n->correct == Correctness::False) decision = 0;
  }
  return decision;
}

inline std::vector<LevelStats> level_stats(const Hieg& hieg) {
  std::vector<LevelStats> out;
  for (int l = 1; l <= hieg.depth(); ++l) {
    LevelStats s;
    s.level = l;
    for (const auto& n : hieg.level(l)) {
      if (n.correct == Correctness::Pending) {
        throw Error(ErrorCode::PendingNode, n.id.str() + " has no verdict");
      }
      ++s.count;
      if (n.correct == Correctness::True) s.correct_weighted_sum += n.confidence;
    }
    out.push_back(s);
  }
  return out;
}

/// Nodes ordered so every parent precedes its children.
inline std::vector<QuestionId> topological_order(const Hieg& hieg) {
  std::map<QuestionId, std::set<QuestionId>> pending;
  std::vector<QuestionId> order;
  for (const auto* n : hieg.all()) pending[n->id] = n->parent_ids;
  std::set<QuestionId> done;
  while (!pending.empty()) {
    bool progressed = false;
    for (auto it = pending.begin(); it != pending.end();) {
      bool ready = true;
      for (const auto& p : it->second) ready = ready && done.contains(p);
      if (ready) {
        order.push_back(it->first);
        done.insert(it->first);
        it = pending.erase(it);
        progressed = true;
      } else {
        ++it;
      }
    }
    if (!progressed) throw Error(ErrorCode::InvalidArgument, "dependency cycle");
  }
  return order;
}

/// Question-generation HIEG fields, suitable for embedding in prompts.
inline nlohmann::json to_prompt_json(const Hieg& hieg) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto* n : hieg.all()) {
    nlohmann::json parents = nlohmann::json::array();
    for (const auto& p : n->parent_ids) parents.push_back(p.str());
    nlohmann::json correct;
    if (n->correct != Correctness::Pending) correct = n->correct == Correctness::True;
    out.push_back({{"Question-ID", n->id.str()},
                   {"Question", n->question},
                   {"Verify-Fact", n->verify_fact},
                   {"Expected-Answer", n->expected_answer},
                   {"Actual-Answer", n->actual_answer ? nlohmann::json(*n->actual_answer)
                                                      : nlohmann::json(nullptr)},
                   {"Eval-Correct", correct},
                   {"Parent-IDS", std::move(parents)}});
  }
  return out;
}

/// Report form: the prompt fields plus level, confidence and coverage.
inline nlohmann::json to_json(const Hieg& hieg) {
  nlohmann::json out = to_prompt_json(hieg);
  std::size_t i = 0;
  for (const auto* n : hieg.all()) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& id : n->covered_nodes) nodes.push_back(id.str());
    nlohmann::json edges(n->covered_edges);
    auto& o = out[i++];
    o["Level"] = n->level;
    o["Confidence"] = n->confidence;
    o["Covered-Nodes"] = std::move(nodes);
    o["Covered-Edges"] = std::move(edges);
  }
  return out;
}

}  // namespace hmgie
