#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hmgie/error.hpp"
#include "hmgie/hieg.hpp"
#include "hmgie/model_gateway.hpp"
#include "hmgie/prompt_codec.hpp"
#include "hmgie/scoring.hpp"
#include "hmgie/semantic_graph.hpp"

namespace hmgie {

/// Which gateway and model answer one role.
struct RoleBinding {
  std::shared_ptr<Gateway> gateway;
  std::string model_id;
  double temperature = 0.3;
  int max_output_tokens = 1024;

  ModelRequest text(std::string prompt) const {
    ModelRequest r = ModelRequest::text(std::move(prompt), model_id, temperature);
    r.max_output_tokens = max_output_tokens;
    return r;
  }

  ModelRequest vision(std::string prompt, std::shared_ptr<const ImageInput> image) const {
    ModelRequest r = ModelRequest::vision(std::move(prompt), std::move(image), model_id, temperature);
    r.max_output_tokens = max_output_tokens;
    return r;
  }
};

struct Roles {
  RoleBinding graph_gen;
  RoleBinding question_gen;
  RoleBinding vqa;
  RoleBinding eval;
  RoleBinding coverage;
  RoleBinding explain;

  static Roles all(const RoleBinding& b) { return {b, b, b, b, b, b}; }
};

struct PipelineConfig {
  int max_level = 5;
  std::size_t max_questions_per_level = 10;
  int retry_limit = 2;  // extra attempts after a malformed reply
  double weight_ratio = 1.2;
  WeightDirection weight_direction = WeightDirection::IncreasingWithDepth;
  std::size_t intra_level_parallelism = 1;
  Roles roles;
  std::shared_ptr<const TemplateSet> templates;  // built-ins when null
  std::string graph_example = templates::kGraphExample;

  ScoringConfig scoring() const {
    return ScoringConfig::uniform(max_level, max_questions_per_level, weight_ratio, weight_direction);
  }

  void validate() const {
    if (max_level < 1) throw Error(ErrorCode::InvalidConfig, "max_level must be >= 1");
    if (max_questions_per_level < 1) {
      throw Error(ErrorCode::InvalidConfig, "max_questions_per_level must be >= 1");
    }
    if (!(weight_ratio > 0.0)) throw Error(ErrorCode::InvalidConfig, "weight_ratio must be > 0");
    if (retry_limit < 0) throw Error(ErrorCode::InvalidConfig, "retry_limit must be >= 0");
    if (intra_level_parallelism < 1) {
      throw Error(ErrorCode::InvalidConfig, "intra_level_parallelism must be >= 1");
    }
    for (const RoleBinding* r : {&roles.graph_gen, &roles.question_gen, &roles.vqa, &roles.eval,
                                 &roles.coverage, &roles.explain}) {
      if (!r->gateway) throw Error(ErrorCode::InvalidConfig, "a model role has no backend");
    }
  }
};

struct ErrorRecord {
  std::string stage;
  ErrorCode code = ErrorCode::InvalidArgument;
  std::string message;

  friend bool operator==(const ErrorRecord&, const ErrorRecord&) = default;
};

struct Diagnostics {
  Warnings warnings;
  std::vector<ErrorRecord> errors;

  void merge(Diagnostics other) {
    warnings.insert(warnings.end(), std::make_move_iterator(other.warnings.begin()),
                    std::make_move_iterator(other.warnings.end()));
    errors.insert(errors.end(), std::make_move_iterator(other.errors.begin()),
                  std::make_move_iterator(other.errors.end()));
  }
};

struct EvaluationReport {
  double h_acc = 0.0;
  double h_comp = 0.0;
  int decision = 0;
  int realized_depth = 0;
  std::string caption;
  Hieg hieg;
  SemanticGraph semantic_graph;
  std::string explanation;
  std::vector<LevelStats> per_level;
  std::string stop_reason;  // fully_covered | verified_complete | empty_batch | max_level
  Diagnostics diagnostics;
};

/// A failed evaluation, with whatever was built before the failure.
class PipelineError : public Error {
 public:
  PipelineError(ErrorCode code, const std::string& message, Hieg partial, Diagnostics diagnostics)
      : Error(code, message),
        partial_(std::make_shared<Hieg>(std::move(partial))),
        diagnostics_(std::make_shared<Diagnostics>(std::move(diagnostics))) {}

  const Hieg& partial_hieg() const noexcept { return *partial_; }
  const Diagnostics& diagnostics() const noexcept { return *diagnostics_; }

 private:
  std::shared_ptr<const Hieg> partial_;
  std::shared_ptr<const Diagnostics> diagnostics_;
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to `workers` threads. The exception of the
// lowest failing index is rethrown after all work finishes.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) run(i);
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline bool is_parse_failure(ErrorCode c) {
  return c == ErrorCode::MalformedOutput || c == ErrorCode::SchemaViolation;
}

// Calls the role and parses the reply; a malformed reply is retried with a
// cache refresh. nullopt once retries run out.
template <typename Parse>
auto call_parsed(const RoleBinding& role, const ModelRequest& req, int retry_limit, Parse&& parse,
                 const std::string& stage, Diagnostics& diag)
    -> std::optional<decltype(parse(std::string()))> {
  for (int attempt = 0; attempt <= retry_limit; ++attempt) {
    const ModelResponse resp = role.gateway->call(req, CallOptions{attempt > 0});
    try {
      return parse(resp.text);
    } catch (const Error& e) {
      if (!is_parse_failure(e.code())) throw;
      diag.warnings.push_back(stage + ": attempt " + std::to_string(attempt + 1) + ": " + e.what());
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// The graph plus a list of elements the mask still marks unverified; this
/// is what {semantic-graph} receives.
inline std::string graph_with_unverified(const SemanticGraph& graph, const CoverageMask& mask) {
  std::ostringstream out;
  out << to_json(graph).dump(2) << "\n\nUnverified elements:";
  bool any = false;
  for (const auto& [id, open] : mask.node_flags()) {
    if (!open) continue;
    const SemanticNode* n = graph.find(id);
    out << "\n- node " << id.str() << " (" << to_string(n->kind) << "): " << n->label;
    any = true;
  }
  for (std::size_t i = 0; i < graph.edges().size(); ++i) {
    if (!mask.edge(i)) continue;
    const SemanticEdge& e = graph.edges()[i];
    out << "\n- edge " << i << " (" << to_string(e.kind) << "): " << e.from.str() << " -> "
        << e.to.str() << ", " << e.label;
    any = true;
  }
  if (!any) out << " none";
  return out.str();
}

namespace detail {

// Drops references the graph or HIEG cannot resolve, and questions already
// asked, so `expand` sees a clean batch.
inline QuestionBatch sanitize_batch(QuestionBatch batch, const Hieg& hieg, const CoverageMask& mask,
                                    std::size_t cap, Diagnostics& diag) {
  const std::string where = "level " + std::to_string(batch.level);
  if (batch.items.size() > cap) {
    diag.warnings.push_back(where + ": " + std::to_string(batch.items.size()) +
                            " questions truncated to " + std::to_string(cap));
    batch.items.resize(cap);
  }
  std::vector<QuestionItem> kept;
  for (auto& item : batch.items) {
    if (hieg.has_question(item.question)) {
      diag.warnings.push_back(where + ": repeated question dropped: " + item.question);
      continue;
    }
    for (auto it = item.parent_ids.begin(); it != item.parent_ids.end();) {
      if (hieg.find(*it) == nullptr) {
        diag.warnings.push_back(where + ": unknown parent " + it->str() + " ignored");
        it = item.parent_ids.erase(it);
      } else {
        ++it;
      }
    }
    for (auto it = item.covered_nodes.begin(); it != item.covered_nodes.end();) {
      if (!mask.contains(*it)) {
        diag.warnings.push_back(where + ": unknown node " + it->str() + " ignored");
        it = item.covered_nodes.erase(it);
      } else {
        ++it;
      }
    }
    for (auto it = item.covered_edges.begin(); it != item.covered_edges.end();) {
      if (!mask.contains(*it)) {
        diag.warnings.push_back(where + ": unknown edge " + std::to_string(*it) + " ignored");
        it = item.covered_edges.erase(it);
      } else {
        ++it;
      }
    }
    kept.push_back(std::move(item));
  }
  batch.items = std::move(kept);
  return batch;
}

template <typename T>
std::set<T> known_only(const std::set<T>& in, const CoverageMask& mask, Diagnostics& diag,
                       const std::string& where) {
  std::set<T> out;
  for (const auto& x : in) {
    if (mask.contains(x)) {
      out.insert(x);
    } else if constexpr (std::is_same_v<T, NodeId>) {
      diag.warnings.push_back(where + ": unknown node " + x.str() + " ignored");
    } else {
      diag.warnings.push_back(where + ": unknown edge " + std::to_string(x) + " ignored");
    }
  }
  return out;
}

}  // namespace detail

/// Runs the full hierarchical evaluation for one image-caption pair.
inline EvaluationReport evaluate_pair(std::shared_ptr<const ImageInput> image, const std::string& caption,
                                      const PipelineConfig& config) {
  config.validate();
  if (caption.empty()) throw Error(ErrorCode::InvalidArgument, "caption is empty");
  if (!image) throw Error(ErrorCode::InvalidImage, "no image");
  const auto templates_ptr =
      config.templates ? config.templates : std::make_shared<const TemplateSet>(TemplateSet::builtin());
  const TemplateSet& tpl = *templates_ptr;
  const Roles& roles = config.roles;

  Diagnostics diag;
  Hieg hieg(config.max_level);
  const auto fail = [&](ErrorCode code, const std::string& msg) -> PipelineError {
    return PipelineError(code, msg, hieg, diag);
  };

  try {
    // Semantic graph.
    const ModelRequest graph_req = roles.graph_gen.text(tpl.render(
        TemplateName::SemanticGraphGen, {{"example", config.graph_example}, {"caption", caption}}));
    auto graph = detail::call_parsed(
        roles.graph_gen, graph_req, config.retry_limit,
        [&](const std::string& raw) { return parse_semantic_graph(raw, caption, &diag.warnings); },
        "graph", diag);
    if (!graph) {
      diag.errors.push_back({"graph", ErrorCode::GraphGenFailed, "no valid semantic graph"});
      throw fail(ErrorCode::GraphGenFailed, "semantic graph generation failed after " +
                                                std::to_string(config.retry_limit + 1) + " attempts");
    }

    CoverageMask mask = fresh_mask(*graph);
    std::string suggestion = "None";
    std::string stop_reason = "max_level";

    for (int level = 1; level <= config.max_level; ++level) {
      const std::string where = "level " + std::to_string(level);

      // Stage 1: questions.
      const ModelRequest qreq = roles.question_gen.text(
          tpl.render(TemplateName::QuestionGen,
                     {{"semantic-graph", graph_with_unverified(*graph, mask)},
                      {"previous-HIEG", to_prompt_json(hieg).dump(2)},
                      {"suggestion", suggestion},
                      {"current-level", std::to_string(level)}}));
      suggestion = "None";
      std::optional<QuestionBatch> parsed;
      try {
        parsed = detail::call_parsed(
            roles.question_gen, qreq, config.retry_limit,
            [&](const std::string& raw) { return parse_question_batch(raw, level, &diag.warnings); },
            where + " questions", diag);
        if (!parsed) diag.errors.push_back({where, ErrorCode::MalformedOutput, "question reply unusable"});
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyBatch) throw;
      }
      QuestionBatch batch;
      if (parsed) {
        batch = detail::sanitize_batch(*std::move(parsed), hieg, mask,
                                       config.max_questions_per_level, diag);
      }
      if (batch.items.empty()) {
        diag.warnings.push_back(where + ": empty question batch, stopping");
        stop_reason = "empty_batch";
        break;
      }

      // Stages 2-3: answer, then judge, each question.
      const std::size_t n = batch.items.size();
      std::vector<Answer> answers(n);
      std::vector<Correctness> verdicts(n, Correctness::False);
      std::vector<Diagnostics> item_diag(n);
      detail::parallel_for(n, config.intra_level_parallelism, [&](std::size_t i) {
        const QuestionItem& item = batch.items[i];
        Diagnostics& d = item_diag[i];
        const std::string stage = where + " question " + std::to_string(i + 1);
        const auto vqa = detail::call_parsed(
            roles.vqa, roles.vqa.vision(tpl.render(TemplateName::Vqa, {{"question", item.question}}), image),
            config.retry_limit, [](const std::string& raw) { return parse_vqa_reply(raw); },
            stage + " vqa", d);
        if (!vqa) {
          d.errors.push_back({stage, ErrorCode::MalformedOutput, "VQA reply unusable, judged incorrect"});
          answers[i] = {std::string(), 0.0};
          return;
        }
        answers[i] = {vqa->answer, vqa->confidence};
        const auto verdict = detail::call_parsed(
            roles.eval,
            roles.eval.text(tpl.render(TemplateName::AnswerEval,
                                       {{"question", item.question},
                                        {"expected-answer", item.expected_answer},
                                        {"actual-answer", vqa->answer}})),
            config.retry_limit, [](const std::string& raw) { return parse_eval_reply(raw); },
            stage + " eval", d);
        if (!verdict) {
          d.errors.push_back({stage, ErrorCode::MalformedOutput, "evaluation reply unusable, judged incorrect"});
          return;
        }
        verdicts[i] = verdict->correct ? Correctness::True : Correctness::False;
      });
      for (auto& d : item_diag) diag.merge(std::move(d));

      // Stage 4: grow the graph and apply the batch's own coverage claims.
      hieg = expand(hieg, batch, answers, verdicts);
      std::set<NodeId> declared_nodes;
      std::set<EdgeIndex> declared_edges;
      for (const auto& item : batch.items) {
        declared_nodes.insert(item.covered_nodes.begin(), item.covered_nodes.end());
        declared_edges.insert(item.covered_edges.begin(), item.covered_edges.end());
      }
      mask = apply_coverage(mask, declared_nodes, declared_edges);

      // Stage 5: coverage check.
      if (is_fully_covered(mask)) {
        stop_reason = "fully_covered";
        break;
      }
      if (level == config.max_level) break;
      const auto cov = detail::call_parsed(
          roles.coverage,
          roles.coverage.text(tpl.render(TemplateName::CoverageCheck,
                                         {{"semantic-graph", graph_with_unverified(*graph, mask)},
                                          {"hieg", to_prompt_json(hieg).dump(2)}})),
          config.retry_limit, [](const std::string& raw) { return parse_coverage_reply(raw); },
          where + " coverage", diag);
      if (!cov) {
        diag.errors.push_back({where, ErrorCode::MalformedOutput, "coverage reply unusable, continuing"});
        continue;
      }
      mask = apply_coverage(mask, detail::known_only(cov->examined_nodes, mask, diag, where),
                            detail::known_only(cov->examined_edges, mask, diag, where));
      if (cov->verified_complete) {
        stop_reason = "verified_complete";
        break;
      }
      if (is_fully_covered(mask)) {
        stop_reason = "fully_covered";
        break;
      }
      if (cov->next_level_suggestion) suggestion = *cov->next_level_suggestion;
    }

    if (hieg.empty()) {
      throw fail(ErrorCode::EmptyHieg, "no questions were generated");
    }

    // Scores, decision, explanation.
    const ScoringConfig scoring = config.scoring();
    const auto stats = level_stats(hieg);
    std::vector<std::size_t> counts;
    for (const auto& s : stats) counts.push_back(s.count);
    const int decision = overall_decision(hieg);

    const ModelRequest xreq = roles.explain.text(
        tpl.render(TemplateName::Explain, {{"hieg", to_prompt_json(hieg).dump(2)},
                                           {"caption", caption},
                                           {"consistency-decision", decision == 1 ? "Consistent" : "Inconsistent"}}));
    const std::string explanation = parse_explanation(roles.explain.gateway->call(xreq).text);

    return EvaluationReport{compute_h_acc(stats, scoring),
                            compute_h_comp(counts, scoring),
                            decision,
                            hieg.depth(),
                            caption,
                            hieg,
                            *std::move(graph),
                            explanation,
                            stats,
                            stop_reason,
                            std::move(diag)};
  } catch (const PipelineError&) {
    throw;
  } catch (const Error& e) {
    const ErrorCode code = e.code() == ErrorCode::Exhausted ? ErrorCode::BackendExhausted : e.code();
    diag.errors.push_back({"pipeline", code, e.what()});
    throw fail(code, e.what());
  }
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const Diagnostics& d) {
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& e : d.errors) {
    errors.push_back({{"stage", e.stage}, {"code", to_string(e.code)}, {"message", e.message}});
  }
  return {{"warnings", d.warnings}, {"errors", std::move(errors)}};
}

inline nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& s : r.per_level) {
    levels.push_back({{"level", s.level}, {"count", s.count}, {"correct_weighted_sum", s.correct_weighted_sum}});
  }
  return {{"h_acc", r.h_acc},
          {"h_comp", r.h_comp},
          {"decision", r.decision},
          {"realized_depth", r.realized_depth},
          {"caption", r.caption},
          {"hieg", to_json(r.hieg)},
          {"semantic_graph", to_json(r.semantic_graph)},
          {"explanation", r.explanation},
          {"per_level", std::move(levels)},
          {"stop_reason", r.stop_reason},
          {"diagnostics", to_json(r.diagnostics)}};
}

inline nlohmann::json to_json(const MetricsSummary& m) {
  const auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json out = {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"tn", m.confusion.tn},
                        {"fn", m.confusion.fn}, {"tpr", opt(m.tpr)},    {"fpr", opt(m.fpr)},
                        {"precision", opt(m.precision)}, {"f1", opt(m.f1)}};
  if (!m.per_granularity.empty()) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [g, sub] : m.per_granularity) per["G" + std::to_string(g)] = to_json(sub);
    out["per_granularity"] = std::move(per);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batches

struct DatasetItem {
  std::string id;
  std::filesystem::path image_path;
  std::string caption;
  std::optional<int> label;        // 1 = inconsistent
  std::optional<int> granularity;  // 1-4
};

inline DatasetItem dataset_item_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaViolation, "dataset line is not an object");
  DatasetItem item;
  const auto str = [&](const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
      throw Error(ErrorCode::SchemaViolation, std::string("dataset field \"") + key + "\" must be a string");
    }
    return it->get<std::string>();
  };
  if (const auto it = j.find("id"); it != j.end() && it->is_number_integer()) {
    item.id = std::to_string(it->get<long long>());
  } else {
    item.id = str("id");
  }
  item.image_path = str("image_path");
  if (item.image_path.is_relative()) item.image_path = base / item.image_path;
  item.caption = str("caption");
  if (const auto it = j.find("label"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer() || (it->get<int>() != 0 && it->get<int>() != 1)) {
      throw Error(ErrorCode::SchemaViolation, "label must be 0, 1 or null");
    }
    item.label = it->get<int>();
  }
  if (const auto it = j.find("granularity"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer() || it->get<int>() < 1 || it->get<int>() > 4) {
      throw Error(ErrorCode::SchemaViolation, "granularity must be 1-4");
    }
    item.granularity = it->get<int>();
  }
  return item;
}

/// Reads a JSONL dataset. Relative image paths resolve against the file's directory.
inline std::vector<DatasetItem> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read dataset " + path.string());
  std::vector<DatasetItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw Error(ErrorCode::SchemaViolation, path.string() + ":" + std::to_string(lineno) + ": not JSON");
    }
    try {
      items.push_back(dataset_item_from_json(j, path.parent_path()));
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return items;
}

struct ItemResult {
  DatasetItem item;
  std::optional<EvaluationReport> report;
  std::optional<ErrorRecord> error;
};

struct BatchResult {
  std::vector<ItemResult> items;       // input order
  std::optional<MetricsSummary> metrics;  // iff every item is labeled and one was decided
  std::size_t decided = 0;
  std::size_t failed = 0;
};

inline BatchResult evaluate_batch(const std::vector<DatasetItem>& dataset, const PipelineConfig& config,
                                  std::size_t parallelism) {
  config.validate();
  if (parallelism < 1) throw Error(ErrorCode::InvalidConfig, "parallelism must be >= 1");
  BatchResult out;
  out.items.resize(dataset.size());
  detail::parallel_for(dataset.size(), parallelism, [&](std::size_t i) {
    ItemResult& r = out.items[i];
    r.item = dataset[i];
    try {
      auto image = std::make_shared<const ImageInput>(load_image(r.item.image_path));
      r.report = evaluate_pair(std::move(image), r.item.caption, config);
    } catch (const Error& e) {
      r.error = ErrorRecord{r.item.id, e.code(), e.what()};
    }
  });

  bool all_labeled = true;
  std::vector<Prediction> preds;
  std::map<int, std::vector<Prediction>> by_granularity;
  for (const auto& r : out.items) {
    all_labeled = all_labeled && r.item.label.has_value();
    if (!r.report) {
      ++out.failed;
      continue;
    }
    ++out.decided;
    if (!r.item.label) continue;
    const Prediction p{r.report->decision == 0 ? 1 : 0, *r.item.label};
    preds.push_back(p);
    if (r.item.granularity) by_granularity[*r.item.granularity].push_back(p);
  }
  if (all_labeled && !preds.empty()) {
    out.metrics = detection_metrics(preds);
    for (const auto& [g, ps] : by_granularity) out.metrics->per_granularity[g] = detection_metrics(ps);
  }
  return out;
}

}  // namespace hmgie
