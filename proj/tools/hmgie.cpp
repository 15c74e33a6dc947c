// hmgie command-line tool: evaluate image-caption pairs, forge datasets,
// and record or replay model traffic.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hmgie/hmgie.hpp"
#include "hmgie/http_backend.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace hmgie;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 2;
constexpr int kUsage = 64;

constexpr const char* kEvaluateUsage =
    "usage: hmgie evaluate (--image PATH --caption TEXT | --dataset FILE.jsonl) [options]\n";

enum class Mode { Live, Record, Replay };

struct CommonArgs {
  std::string config_file;
  std::string record_dir;
  std::string replay_dir;
  std::map<std::string, std::string> flags;
};

struct EvaluateArgs {
  CommonArgs common;
  std::string image;
  std::string caption;
  std::string dataset;
  std::string out;
  bool json = false;
  bool per_granularity = false;
};

struct ForgeArgs {
  CommonArgs common;
  std::string images;
  std::string out;
  bool include_undetected = false;
};

std::map<std::string, std::string> environment() {
  std::map<std::string, std::string> env;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    const std::string kv = *e;
    const auto eq = kv.find('=');
    if (eq != std::string::npos) env.emplace(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return env;
}

// Registers a string option that feeds the named config setting.
void setting_option(CLI::App* app, CommonArgs& args, const std::string& flag, const std::string& key,
                    const std::string& help) {
  app->add_option_function<std::string>(
      "--" + flag, [&args, key](const std::string& v) { args.flags[key] = v; }, help);
}

void add_common(CLI::App* app, CommonArgs& args) {
  app->add_option("--config", args.config_file, "JSON config file");
  setting_option(app, args, "max-level", "max_level", "Maximum evaluation level");
  setting_option(app, args, "weight-ratio", "weight_ratio", "Ratio of the geometric level weights");
  setting_option(app, args, "max-per-level", "max_per_level", "Question cap per level");
  setting_option(app, args, "parallelism", "parallelism", "Items evaluated concurrently");
  setting_option(app, args, "templates-dir", "templates_dir", "Directory of prompt overrides (<Name>.txt)");
  setting_option(app, args, "cache-dir", "cache_dir", "Persistent response cache");
  setting_option(app, args, "temperature", "temperature", "Sampling temperature");
  setting_option(app, args, "retry-limit", "retry_limit", "Extra attempts after a malformed reply");
}

struct Runtime {
  RunConfig config;
  Mode mode = Mode::Live;
  std::shared_ptr<FixtureStore> store;
  std::shared_ptr<Gateway> replay;
  std::map<std::string, std::shared_ptr<Gateway>> gateways;  // endpoint + key -> gateway
  std::shared_ptr<const TemplateSet> templates;

  RoleBinding bind(const std::string& role, std::optional<std::string> model = std::nullopt) {
    const RoleEndpoint& ep = config.roles.at(role);
    RoleBinding b;
    b.model_id = model ? *model : ep.model;
    b.temperature = config.temperature;
    b.max_output_tokens = config.max_output_tokens;
    if (mode == Mode::Replay) {
      b.gateway = replay;
      return b;
    }
    auto& gw = gateways[ep.endpoint + '\n' + ep.api_key];
    if (!gw) {
      HttpBackendOptions opts;
      opts.endpoint = ep.endpoint;
      opts.api_key = ep.api_key;
      opts.timeout = std::chrono::seconds(config.timeout_s);
      GatewayOptions g;
      g.retry = {config.retry_attempts, std::chrono::milliseconds(config.initial_backoff_ms), 2.0,
                 std::chrono::milliseconds(config.max_backoff_ms)};
      g.store = store;
      gw = std::make_shared<Gateway>(std::make_shared<HttpBackend>(opts), g);
    }
    b.gateway = gw;
    return b;
  }
};

// Resolves configuration and checks everything that can be checked before
// a model is contacted. Throws InvalidConfig.
Runtime prepare(const CommonArgs& args, const std::vector<std::string>& roles) {
  Runtime rt;
  rt.config = resolve_config(load_config_file(args.config_file), environment(), args.flags);
  if (!args.record_dir.empty() && !args.replay_dir.empty()) {
    throw Error(ErrorCode::InvalidConfig, "--record and --replay are mutually exclusive");
  }
  if (!args.replay_dir.empty()) {
    rt.mode = Mode::Replay;
    if (!fs::is_directory(args.replay_dir)) {
      throw Error(ErrorCode::InvalidConfig, "replay: fixture dir " + args.replay_dir + " does not exist");
    }
    rt.replay = std::make_shared<Gateway>(
        std::make_shared<ReplayBackend>(std::make_shared<FixtureStore>(args.replay_dir)));
  } else {
    rt.mode = args.record_dir.empty() ? Mode::Live : Mode::Record;
    const std::string store_dir = rt.mode == Mode::Record ? args.record_dir : rt.config.cache_dir;
    if (!store_dir.empty()) rt.store = std::make_shared<FixtureStore>(store_dir);
    for (const auto& role : roles) {
      const RoleEndpoint& ep = rt.config.roles.at(role);
      if (ep.api_key.empty()) {
        throw Error(ErrorCode::InvalidConfig, "roles." + role + ".api_key: no API key configured (set HMGIE_API_KEY or HMGIE_" +
                                                  detail::env_name("roles." + role + ".api_key").substr(6) + ")");
      }
      if (ep.model.empty()) throw Error(ErrorCode::InvalidConfig, "roles." + role + ".model: empty");
      HttpBackend probe({ep.endpoint, ep.api_key});  // validates the URL
    }
  }
  rt.templates = std::make_shared<const TemplateSet>(
      rt.config.templates_dir.empty() ? TemplateSet::builtin() : TemplateSet::with_overrides(rt.config.templates_dir));
  return rt;
}

PipelineConfig pipeline_config(Runtime& rt) {
  PipelineConfig pc;
  pc.max_level = rt.config.max_level;
  pc.max_questions_per_level = static_cast<std::size_t>(rt.config.max_per_level);
  pc.retry_limit = rt.config.retry_limit;
  pc.weight_ratio = rt.config.weight_ratio;
  pc.weight_direction = rt.config.weight_direction;
  pc.intra_level_parallelism = static_cast<std::size_t>(rt.config.intra_level_parallelism);
  pc.roles = {rt.bind("graph_gen"), rt.bind("question_gen"), rt.bind("vqa"),
              rt.bind("eval"),      rt.bind("coverage"),     rt.bind("explain")};
  pc.templates = rt.templates;
  return pc;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string opt_fixed(const std::optional<double>& v) { return v ? fixed(*v, 4) : "n/a"; }

void print_report(std::ostream& os, const EvaluationReport& r) {
  os << "decision: " << (r.decision == 1 ? "consistent" : "inconsistent") << '\n'
     << "H_acc: " << fixed(r.h_acc) << '\n'
     << "H_comp: " << fixed(r.h_comp) << '\n'
     << "realized_depth: " << r.realized_depth << '\n'
     << "questions: " << r.hieg.size() << '\n'
     << "stop_reason: " << r.stop_reason << '\n'
     << "warnings: " << r.diagnostics.warnings.size() << '\n'
     << "explanation: " << r.explanation << '\n';
}

void print_metrics(std::ostream& os, const MetricsSummary& m, bool per_granularity) {
  os << "TP: " << m.confusion.tp << " FP: " << m.confusion.fp << " TN: " << m.confusion.tn
     << " FN: " << m.confusion.fn << '\n'
     << "TPR: " << opt_fixed(m.tpr) << '\n'
     << "FPR: " << opt_fixed(m.fpr) << '\n'
     << "precision: " << opt_fixed(m.precision) << '\n'
     << "F1: " << opt_fixed(m.f1) << '\n';
  if (per_granularity) {
    for (const auto& [g, sub] : m.per_granularity) {
      os << "G" << g << " TPR: " << opt_fixed(sub.tpr) << " FPR: " << opt_fixed(sub.fpr)
         << " F1: " << opt_fixed(sub.f1) << '\n';
    }
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string file_safe(std::string id) {
  for (auto& c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  }
  return id;
}

int run_evaluate(const EvaluateArgs& a) {
  const bool single = !a.caption.empty();
  if (single == !a.dataset.empty()) {
    std::cerr << "error: give exactly one of --caption (with --image) or --dataset\n" << kEvaluateUsage;
    return kUsage;
  }
  if (single && a.image.empty()) {
    std::cerr << "error: --caption needs --image\n" << kEvaluateUsage;
    return kUsage;
  }
  Runtime rt = prepare(a.common, {"graph_gen", "question_gen", "vqa", "eval", "coverage", "explain"});
  const PipelineConfig pc = pipeline_config(rt);

  if (single) {
    std::shared_ptr<const ImageInput> image;
    try {
      image = std::make_shared<const ImageInput>(load_image(a.image));
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kRuntime;
    }
    try {
      const EvaluationReport report = evaluate_pair(image, a.caption, pc);
      const nlohmann::json j = to_json(report);
      if (!a.out.empty()) write_json(fs::path(a.out) / "report.json", j);
      if (a.json) {
        std::cout << j.dump(2) << '\n';
      } else {
        print_report(std::cout, report);
      }
      return kOk;
    } catch (const PipelineError& e) {
      std::cerr << "error: " << e.what() << '\n';
      if (!a.out.empty()) {
        write_json(fs::path(a.out) / "error.json",
                   {{"code", to_string(e.code())}, {"message", e.what()},
                    {"partial_hieg", to_json(e.partial_hieg())}, {"diagnostics", to_json(e.diagnostics())}});
      }
      return kRuntime;
    }
  }

  std::vector<DatasetItem> items;
  try {
    items = load_dataset(a.dataset);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  const BatchResult batch = evaluate_batch(items, pc, static_cast<std::size_t>(rt.config.parallelism));
  nlohmann::json summary_items = nlohmann::json::array();
  for (const auto& r : batch.items) {
    nlohmann::json s = {{"id", r.item.id}};
    if (r.report) {
      s["decision"] = r.report->decision;
      s["h_acc"] = r.report->h_acc;
      s["h_comp"] = r.report->h_comp;
      s["realized_depth"] = r.report->realized_depth;
      if (!a.out.empty()) write_json(fs::path(a.out) / (file_safe(r.item.id) + ".json"), to_json(*r.report));
      if (!a.json) {
        std::cout << "item " << r.item.id << ": " << (r.report->decision == 1 ? "consistent" : "inconsistent")
                  << " H_acc " << fixed(r.report->h_acc) << " H_comp " << fixed(r.report->h_comp) << '\n';
      }
    } else {
      s["error"] = {{"code", to_string(r.error->code)}, {"message", r.error->message}};
      if (!a.json) {
        std::cout << "item " << r.item.id << ": error " << to_string(r.error->code) << ": " << r.error->message << '\n';
      }
    }
    summary_items.push_back(std::move(s));
  }
  nlohmann::json summary = {{"items", std::move(summary_items)},
                            {"total", batch.items.size()},
                            {"decided", batch.decided},
                            {"failed", batch.failed},
                            {"metrics", batch.metrics ? to_json(*batch.metrics) : nlohmann::json(nullptr)}};
  if (batch.metrics && batch.failed > 0) {
    summary["note"] = "metrics cover " + std::to_string(batch.decided) + " of " +
                      std::to_string(batch.items.size()) + " items";
  }
  if (!a.out.empty()) write_json(fs::path(a.out) / "summary.json", summary);
  if (a.json) {
    std::cout << summary.dump(2) << '\n';
  } else {
    std::cout << "items: " << batch.items.size() << " decided: " << batch.decided << " failed: " << batch.failed << '\n';
    if (batch.metrics) print_metrics(std::cout, *batch.metrics, a.per_granularity);
  }
  return batch.failed > 0 ? kRuntime : kOk;
}

int run_forge(const ForgeArgs& a) {
  Runtime rt = prepare(a.common, {"captioner", "fusion", "perturb", "detector"});
  std::vector<fs::path> images;
  try {
    images = list_images(a.images);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  ForgeConfig fc;
  if (rt.config.captioner_models.empty()) {
    fc.captioners.push_back(rt.bind("captioner"));
  } else {
    for (const auto& m : rt.config.captioner_models) fc.captioners.push_back(rt.bind("captioner", m));
  }
  fc.fusion = rt.bind("fusion");
  fc.perturber = rt.bind("perturb");
  fc.detector = rt.bind("detector");
  fc.perturb.max_iterations = rt.config.max_iterations;
  fc.perturb.detector = rt.config.detector == "cot" ? DetectorTemplate::CoT : DetectorTemplate::Direct;
  fc.perturb.retry_limit = rt.config.retry_limit;
  fc.include_undetected = a.include_undetected;
  fc.parallelism = static_cast<std::size_t>(rt.config.parallelism);
  fc.relative_to = fs::path(a.out).parent_path();
  if (fc.relative_to.empty()) fc.relative_to = ".";

  const ForgeRun run = build_dataset(images, fc);
  for (const auto& line : run.log) std::cerr << "forge: " << line << '\n';
  if (!images.empty() && run.records.empty()) {
    std::cerr << "error: no record could be forged\n";
    return kRuntime;
  }
  write_jsonl(a.out, run.lines);
  for (const auto& spec : fc.specs) {
    const auto count = [](const std::map<int, std::size_t>& m, int g) {
      const auto it = m.find(g);
      return it == m.end() ? std::size_t{0} : it->second;
    };
    std::cout << "G" << spec.level << ": clean " << count(run.clean_per_granularity, spec.level) << " perturbed "
              << count(run.perturbed_per_granularity, spec.level) << '\n';
  }
  std::cout << "records: " << run.lines.size() << '\n' << "skipped: " << run.skipped << '\n';
  return kOk;
}

void add_evaluate_options(CLI::App* cmd, EvaluateArgs& a) {
  add_common(cmd, a.common);
  cmd->add_option("--image", a.image, "Image file");
  cmd->add_option("--caption", a.caption, "Caption text");
  cmd->add_option("--dataset", a.dataset, "JSONL dataset");
  cmd->add_option("--out", a.out, "Directory for report files");
  cmd->add_flag("--json", a.json, "Print machine-readable JSON");
  cmd->add_flag("--per-granularity", a.per_granularity, "Break metrics down by granularity");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical image-caption inconsistency evaluation"};
  app.require_subcommand(1);

  EvaluateArgs eval;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate one pair or a dataset");
  add_evaluate_options(evaluate, eval);
  evaluate->add_option("--record", eval.common.record_dir, "Record live replies into this fixture dir");
  evaluate->add_option("--replay", eval.common.replay_dir, "Serve replies only from this fixture dir");

  EvaluateArgs rec;
  auto* record = app.add_subcommand("record", "Evaluate live and capture every reply as a fixture");
  add_evaluate_options(record, rec);
  record->add_option("--fixtures", rec.common.record_dir, "Fixture dir")->required();

  EvaluateArgs rep;
  auto* replay = app.add_subcommand("replay", "Evaluate from recorded fixtures only");
  add_evaluate_options(replay, rep);
  replay->add_option("--fixtures", rep.common.replay_dir, "Fixture dir")->required();

  ForgeArgs forge_args;
  auto* forge = app.add_subcommand("forge", "Build a multi-granularity dataset");
  add_common(forge, forge_args.common);
  forge->add_option("--images", forge_args.images, "Image directory")->required();
  forge->add_option("--out", forge_args.out, "Output JSONL")->required();
  setting_option(forge, forge_args.common, "max-iter", "max_iterations", "Perturbation iterations");
  setting_option(forge, forge_args.common, "detector", "detector", "direct or cot");
  forge->add_flag("--include-undetected", forge_args.include_undetected,
                  "Also emit the last perturbation when the detector was never fooled");
  forge->add_option("--record", forge_args.common.record_dir, "Record live replies into this fixture dir");
  forge->add_option("--replay", forge_args.common.replay_dir, "Serve replies only from this fixture dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (evaluate->parsed()) return run_evaluate(eval);
    if (record->parsed()) return run_evaluate(rec);
    if (replay->parsed()) return run_evaluate(rep);
    if (forge->parsed()) return run_forge(forge_args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::InvalidConfig ? kUsage : kRuntime;
  }
  return kUsage;
}
