#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "hmgie/pipeline.hpp"
#include "support/scripted.hpp"

using namespace hmgie;
namespace fs = std::filesystem;

namespace {

const double kHAccConsistent = (1.0 / 2.2) * 1.0 + (1.2 / 2.2) * 0.8;
const double kHAccInconsistent = (1.0 / 2.2) * 0.5 + (1.2 / 2.2) * 0.8;
const double kHComp = (1.0 * 2 / 10 + 1.2 * 1 / 10) / (1 + 1.2 + 1.44 + 1.728 + 2.0736);

struct Run {
  std::shared_ptr<ScriptedBackend> backend;
  PipelineConfig config;
};

Run scripted_run(ScriptedBackend::Responder r) {
  Run run;
  run.backend = std::make_shared<ScriptedBackend>(std::move(r));
  GatewayOptions o;
  o.sleep = [](std::chrono::milliseconds) {};
  run.config = scripted::config_for(std::make_shared<Gateway>(run.backend, o));
  return run;
}

// Wraps a responder, overriding replies for one role.
ScriptedBackend::Responder override_role(ScriptedBackend::Responder base, scripted::Role role,
                                         std::function<std::string(const ModelRequest&)> f) {
  return [=](const ModelRequest& req) { return scripted::role_of(req) == role ? f(req) : base(req); };
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("hmgie_pipe_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(EvaluatePair, TwoLevelConsistent) {
  auto run = scripted_run(scripted::two_level({}));
  const auto r = evaluate_pair(scripted::image("a"), scripted::kCaption, run.config);
  EXPECT_EQ(r.realized_depth, 2);
  EXPECT_EQ(r.decision, 1);
  EXPECT_NEAR(r.h_acc, kHAccConsistent, 1e-12);
  EXPECT_NEAR(r.h_acc, 0.8909090909, 1e-9);
  EXPECT_NEAR(r.h_comp, kHComp, 1e-12);
  EXPECT_EQ(r.stop_reason, "fully_covered");
  EXPECT_EQ(r.hieg.size(), 3u);
  EXPECT_EQ(r.hieg.level(2)[0].parent_ids.size(), 2u);
  EXPECT_NE(r.explanation.find("confirmed"), std::string::npos);
  EXPECT_TRUE(r.diagnostics.errors.empty());
  for (const auto& s : r.per_level) {
    double total = 0;
    for (const auto& n : r.hieg.level(s.level)) total += n.confidence;
    EXPECT_EQ(s.correct_weighted_sum, total);
  }
}

TEST(EvaluatePair, TwoLevelInconsistent) {
  const auto img = scripted::image("b");
  auto run = scripted_run(scripted::two_level({img->digest}));
  const auto r = evaluate_pair(img, scripted::kCaption, run.config);
  EXPECT_EQ(r.decision, 0);
  EXPECT_EQ(r.realized_depth, 2);
  EXPECT_NEAR(r.h_acc, kHAccInconsistent, 1e-12);
  EXPECT_NEAR(r.h_acc, 0.6636363636, 1e-9);
  EXPECT_EQ(r.hieg.level(1)[1].correct, Correctness::False);
}

TEST(EvaluatePair, StageOrderingAndPromptContents) {
  auto run = scripted_run(scripted::two_level({}));
  evaluate_pair(scripted::image("a"), scripted::kCaption, run.config);
  const auto trace = run.backend->trace();
  std::vector<scripted::Role> roles;
  for (const auto& req : trace) roles.push_back(scripted::role_of(req));
  using R = scripted::Role;
  const std::vector<R> want = {R::Graph, R::Questions, R::Vqa,  R::Eval, R::Vqa,
                               R::Eval,  R::Coverage,  R::Questions, R::Vqa, R::Eval, R::Explain};
  EXPECT_EQ(roles, want);
  // Level 2 prompt carries the suggestion and lists only unverified elements.
  const std::string& q2 = trace[7].prompt;
  EXPECT_NE(q2.find("Suggestion: [Verify the colors of the dog"), std::string::npos);
  EXPECT_NE(q2.find("- node N2 (Attribute): brown"), std::string::npos);
  EXPECT_EQ(q2.find("- node N1 "), std::string::npos);
  EXPECT_NE(q2.find("\"Question-ID\": \"Q1.2\""), std::string::npos);
  EXPECT_NE(trace[1].prompt.find("Suggestion: [None]"), std::string::npos);
  EXPECT_EQ(trace[2].kind, RequestKind::Vision);
}

TEST(EvaluatePair, ParallelLevelsGiveIdenticalReports) {
  auto one = scripted_run(scripted::two_level({}));
  auto four = scripted_run(scripted::two_level({}));
  four.config.intra_level_parallelism = 4;
  const auto a = to_json(evaluate_pair(scripted::image("a"), scripted::kCaption, one.config)).dump();
  const auto b = to_json(evaluate_pair(scripted::image("a"), scripted::kCaption, four.config)).dump();
  const auto c = to_json(evaluate_pair(scripted::image("a"), scripted::kCaption, one.config)).dump();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(EvaluatePair, GraphGenFailed) {
  auto run = scripted_run(override_role(scripted::two_level({}), scripted::Role::Graph,
                                        [](const ModelRequest&) { return std::string("I cannot do that."); }));
  try {
    evaluate_pair(scripted::image("a"), scripted::kCaption, run.config);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.code(), ErrorCode::GraphGenFailed);
    EXPECT_TRUE(e.partial_hieg().empty());
  }
  EXPECT_EQ(run.backend->trace().size(), 3u);  // 1 + retry_limit attempts
}

TEST(EvaluatePair, RecoversFromOneMalformedGraph) {
  auto calls = std::make_shared<int>(0);
  auto run = scripted_run(override_role(scripted::two_level({}), scripted::Role::Graph, [calls](const ModelRequest&) {
    return ++*calls == 1 ? std::string("{broken") : std::string(scripted::kGraphReply);
  }));
  const auto r = evaluate_pair(scripted::image("a"), scripted::kCaption, run.config);
  EXPECT_EQ(r.decision, 1);
  EXPECT_FALSE(r.diagnostics.warnings.empty());
}

TEST(EvaluatePair, EmptyFirstBatchIsEmptyHieg) {
  auto run = scripted_run(override_role(scripted::two_level({}), scripted::Role::Questions,
                                        [](const ModelRequest&) { return std::string(R"({"Questions": []})"); }));
  try {
    evaluate_pair(scripted::image("a"), scripted::kCaption, run.config);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyHieg);
  }
}

TEST(EvaluatePair, EmptySecondBatchStops) {
  auto run = scripted_run(override_role(scripted::two_level({}), scripted::Role::Questions, [](const ModelRequest& r) {
    return scripted::field(r.prompt, "Current Level: ") == "1" ? std::string(scripted::kLevel1Questions)
                                                               : std::string("{\"Questions\": []}");
  }));
  const auto r = evaluate_pair(scripted::image("a"), scripted::kCaption, run.config);
  EXPECT_EQ(r.realized_depth, 1);
  EXPECT_EQ(r.stop_reason, "empty_batch");
  EXPECT_DOUBLE_EQ(r.h_acc, 1.0);
}

TEST(EvaluatePair, VerifiedCompleteStops) {
  auto run = scripted_run(override_role(scripted::two_level({}), scripted::Role::Coverage, [](const ModelRequest&) {
    return std::string(R"({"Verified-Complete": true, "Examined-Nodes": [], "Examined-Edges": [], "Next-Level-Suggestion": null})");
  }));
  const auto r = evaluate_pair(scripted::image("a"), scripted::kCaption, run.config);
  EXPECT_EQ(r.realized_depth, 1);
  EXPECT_EQ(r.stop_reason, "verified_complete");
}

TEST(EvaluatePair, MaxLevelBoundsDepthAndCapTruncates) {
  // A generator that never covers anything and always returns 12 questions.
  auto run = scripted_run(override_role(scripted::two_level({}), scripted::Role::Questions, [](const ModelRequest& r) {
    const std::string l = scripted::field(r.prompt, "Current Level: ");
    nlohmann::json qs = nlohmann::json::array();
    for (int i = 0; i < 12; ++i) {
      qs.push_back({{"Question", "L" + l + " q" + std::to_string(i)}, {"Expected-Answer", "Yes"}});
    }
    return nlohmann::json{{"Questions", qs}}.dump();
  }));
  run.config.max_level = 3;
  run.config.max_questions_per_level = 4;
  const auto r = evaluate_pair(scripted::image("a"), scripted::kCaption, run.config);
  EXPECT_EQ(r.realized_depth, 3);
  EXPECT_EQ(r.stop_reason, "max_level");
  for (const auto& s : r.per_level) EXPECT_EQ(s.count, 4u);
  EXPECT_NEAR(r.h_comp, (1 + 1.2 + 1.44) / (1 + 1.2 + 1.44), 1e-12);
  bool truncated = false;
  for (const auto& w : r.diagnostics.warnings) truncated = truncated || w.find("truncated") != std::string::npos;
  EXPECT_TRUE(truncated);
}

TEST(EvaluatePair, MalformedEvalMarksFalse) {
  auto run = scripted_run(override_role(scripted::two_level({}), scripted::Role::Eval,
                                        [](const ModelRequest&) { return std::string("Looks right to me."); }));
  const auto r = evaluate_pair(scripted::image("a"), scripted::kCaption, run.config);
  EXPECT_EQ(r.decision, 0);
  EXPECT_EQ(r.diagnostics.errors.size(), 3u);
  EXPECT_DOUBLE_EQ(r.h_acc, 0.0);
}

TEST(EvaluatePair, SanitizesBadReferences) {
  auto run = scripted_run(override_role(scripted::two_level({}), scripted::Role::Questions, [](const ModelRequest& r) {
    if (scripted::field(r.prompt, "Current Level: ") == "1") return std::string(scripted::kLevel1Questions);
    return std::string(R"({"Questions": [
      {"Question": "Is there a dog in the image?", "Expected-Answer": "Yes"},
      {"Question": "Is the dog brown?", "Expected-Answer": "Yes", "Parent-IDS": ["Q1.1", "Q9.9"], "Covered-Nodes": ["N2", "N4", "N77"], "Covered-Edges": [0, 1, 2, 40]}]})");
  }));
  const auto r = evaluate_pair(scripted::image("a"), scripted::kCaption, run.config);
  EXPECT_EQ(r.realized_depth, 2);
  ASSERT_EQ(r.hieg.level(2).size(), 1u);
  EXPECT_EQ(r.hieg.level(2)[0].parent_ids, std::set<QuestionId>{QuestionId("Q1.1")});
  EXPECT_EQ(r.stop_reason, "fully_covered");
  EXPECT_GE(r.diagnostics.warnings.size(), 4u);
}

TEST(EvaluatePair, BackendExhausted) {
  auto run = scripted_run([](const ModelRequest& req) -> std::string {
    if (scripted::role_of(req) == scripted::Role::Vqa) throw TransientError("HTTP 503");
    return scripted::two_level({})(req);
  });
  try {
    evaluate_pair(scripted::image("a"), scripted::kCaption, run.config);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendExhausted);
  }
}

TEST(EvaluatePair, RejectsBadInput) {
  auto run = scripted_run(scripted::two_level({}));
  EXPECT_THROW(evaluate_pair(scripted::image("a"), "", run.config), Error);
  run.config.max_level = 0;
  EXPECT_THROW(evaluate_pair(scripted::image("a"), "x", run.config), Error);
}

TEST(EvaluateBatch, MetricsAndErrors) {
  const auto dir = temp_dir("batch");
  std::vector<DatasetItem> items;
  std::set<std::string> wrong;
  for (int i = 0; i < 4; ++i) {
    const auto p = dir / ("img" + std::to_string(i) + ".png");
    std::ofstream(p, std::ios::binary) << std::string("\x89PNG\r\n\x1a\n", 8) << "img" << i;
    const int label = i % 2;
    if (label == 1) wrong.insert(load_image(p).digest);
    items.push_back({"item" + std::to_string(i), p, scripted::kCaption, label, 1 + i / 2});
  }
  auto one = scripted_run(scripted::two_level(wrong));
  const auto b1 = evaluate_batch(items, one.config, 1);
  ASSERT_TRUE(b1.metrics.has_value());
  EXPECT_EQ(*b1.metrics->tpr, 1.0);
  EXPECT_EQ(*b1.metrics->fpr, 0.0);
  EXPECT_EQ(b1.metrics->per_granularity.size(), 2u);
  EXPECT_EQ(b1.decided, 4u);

  auto four = scripted_run(scripted::two_level(wrong));
  const auto b4 = evaluate_batch(items, four.config, 4);
  for (std::size_t i = 0; i < items.size(); ++i) {
    EXPECT_EQ(b4.items[i].item.id, items[i].id);
    EXPECT_EQ(to_json(*b1.items[i].report).dump(), to_json(*b4.items[i].report).dump());
  }

  // One item whose graph can never be parsed.
  items[2].caption = "unparseable caption";
  auto failing = scripted_run(
      override_role(scripted::two_level(wrong), scripted::Role::Graph, [](const ModelRequest& r) {
        return r.prompt.find("unparseable caption") != std::string::npos ? std::string("nope")
                                                                          : std::string(scripted::kGraphReply);
      }));
  const auto bf = evaluate_batch(items, failing.config, 2);
  EXPECT_EQ(bf.decided, 3u);
  EXPECT_EQ(bf.failed, 1u);
  ASSERT_TRUE(bf.items[2].error.has_value());
  EXPECT_EQ(bf.items[2].error->code, ErrorCode::GraphGenFailed);
  ASSERT_TRUE(bf.metrics.has_value());
  EXPECT_EQ(bf.metrics->confusion.tp + bf.metrics->confusion.fp + bf.metrics->confusion.tn + bf.metrics->confusion.fn,
            3u);

  items[0].label.reset();
  auto unl = scripted_run(scripted::two_level(wrong));
  EXPECT_FALSE(evaluate_batch(items, unl.config, 1).metrics.has_value());
  fs::remove_all(dir);
}

TEST(Dataset, LoadsJsonl) {
  const auto dir = temp_dir("jsonl");
  std::ofstream(dir / "d.jsonl") << R"({"id": "a", "image_path": "x.png", "caption": "c", "label": 1, "granularity": 2})"
                                 << "\n\n"
                                 << R"({"id": 7, "image_path": "/abs/y.png", "caption": "d", "label": null})" << "\n";
  const auto items = load_dataset(dir / "d.jsonl");
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].image_path, dir / "x.png");
  EXPECT_EQ(items[0].label, 1);
  EXPECT_EQ(items[0].granularity, 2);
  EXPECT_EQ(items[1].id, "7");
  EXPECT_FALSE(items[1].label.has_value());
  std::ofstream(dir / "bad.jsonl") << R"({"id": "a", "image_path": "x.png", "caption": "c", "label": 3})";
  EXPECT_THROW(load_dataset(dir / "bad.jsonl"), Error);
  fs::remove_all(dir);
}
