#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hmgie/error.hpp"
#include "hmgie/model_gateway.hpp"
#include "hmgie/pipeline.hpp"
#include "hmgie/prompt_codec.hpp"

namespace hmgie {

struct GranularitySpec {
  int level = 1;
  std::string prompt;
  std::pair<int, int> target_word_range;
};

namespace detail {

inline std::string caption_prompt(const char* requirements, int lo, int hi) {
  return std::string("Write a caption for this image.\nRequirements:\n") + requirements +
         "\nLength: " + std::to_string(lo) + " to " + std::to_string(hi) +
         " words.\nOutput only the caption.";
}

}  // namespace detail

/// Four tiers; ranges are the published mean word counts +/- two std.
inline std::vector<GranularitySpec> default_granularity_specs() {
  return {
      {1, detail::caption_prompt("- Identify the main objects\n- Use a simple sentence structure\n- State the basic scene type", 7, 15), {7, 15}},
      {2, detail::caption_prompt("- Describe basic visual attributes\n- Give object locations\n- Describe the primary spatial relationships", 16, 33), {16, 33}},
      {3, detail::caption_prompt("- Include secondary objects\n- Describe specific visual features\n- Describe complex relationships", 28, 54), {28, 54}},
      {4, detail::caption_prompt("- Cover all visual elements\n- Give full attribute descriptions\n- Include comprehensive scene details", 46, 82), {46, 82}},
  };
}

inline const PromptTemplate& fusion_template() {
  static const PromptTemplate t = PromptTemplate::make(
      "Fusion",
      R"(Several models captioned the same image independently. Fuse their captions into one caption.
Keep the semantic elements the captions agree on. Drop any element that only one caption mentions unless the others are compatible with it. Do not add anything new.

Caption requirements:
{requirements}

Captions:
{captions}

Output only the fused caption.)",
      {"requirements", "captions"});
  return t;
}

inline const PromptTemplate& perturbation_template() {
  static const PromptTemplate t = PromptTemplate::make(
      "Perturbation",
      R"(You are building a benchmark for image-caption inconsistency detection.
Rewrite the ground-truth caption so that it contains exactly one subtle semantic error. Keep its length, style and all other content unchanged.
The error may be a wrong object, a wrong scene, a wrong attribute (color, material, size or text content), a wrong count, or a wrong spatial relation.

Ground-truth caption:
{ground-truth}

Previous perturbations, all of which were detected. Do not repeat their changes; make the new error harder to notice:
{history}

Output only the perturbed caption.)",
      {"ground-truth", "history"});
  return t;
}

inline std::string numbered(std::span<const std::string> items) {
  if (items.empty()) return "None";
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += '\n';
    out += std::to_string(i + 1) + ". " + items[i];
  }
  return out;
}

namespace detail {

// Trims whitespace and one pair of surrounding double quotes.
inline std::string clean_caption(std::string_view raw) {
  std::string s = trim(raw);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = trim(s.substr(1, s.size() - 2));
  return s;
}

}  // namespace detail

/// Captions the image with every ensemble member and fuses the results. A
/// single surviving caption is returned as is.
inline std::string generate_ground_truth(std::shared_ptr<const ImageInput> image, const GranularitySpec& spec,
                                         std::span<const RoleBinding> ensemble, const RoleBinding& fusion,
                                         Warnings* warnings = nullptr) {
  if (ensemble.empty()) throw Error(ErrorCode::InvalidConfig, "no captioners configured");
  std::vector<std::string> captions;
  for (std::size_t k = 0; k < ensemble.size(); ++k) {
    try {
      std::string c = detail::clean_caption(ensemble[k].gateway->call(ensemble[k].vision(spec.prompt, image)).text);
      if (c.empty()) {
        warn(warnings, "captioner " + std::to_string(k + 1) + " returned nothing");
        continue;
      }
      captions.push_back(std::move(c));
    } catch (const Error& e) {
      warn(warnings, "captioner " + std::to_string(k + 1) + " failed: " + e.what());
    }
  }
  if (captions.empty()) throw Error(ErrorCode::AllCaptionersFailed, "every captioner failed");
  if (captions.size() == 1) return captions.front();
  const std::string prompt =
      render(fusion_template(), {{"requirements", spec.prompt}, {"captions", numbered(captions)}});
  std::string fused = detail::clean_caption(fusion.gateway->call(fusion.text(prompt)).text);
  if (fused.empty()) throw Error(ErrorCode::MalformedOutput, "fusion returned an empty caption");
  return fused;
}

enum class ForgeStatus { Clean, AdversarialFound, MaxIterReached };

constexpr std::string_view to_string(ForgeStatus s) noexcept {
  switch (s) {
    case ForgeStatus::Clean: return "Clean";
    case ForgeStatus::AdversarialFound: return "AdversarialFound";
    case ForgeStatus::MaxIterReached: return "MaxIterReached";
  }
  return "";
}

struct ForgeRecord {
  std::filesystem::path image_path;
  int granularity = 1;
  std::string ground_truth_caption;
  std::optional<std::string> perturbed_caption;
  std::vector<std::string> perturbation_history;
  std::vector<int> detector_verdicts;  // 1 = detector judged the caption consistent
  ForgeStatus status = ForgeStatus::Clean;
};

/// A perturbation run that failed part way; carries the history so far.
class ForgeError : public Error {
 public:
  ForgeError(ErrorCode code, const std::string& message, ForgeRecord partial)
      : Error(code, message), partial_(std::make_shared<ForgeRecord>(std::move(partial))) {}
  const ForgeRecord& partial() const noexcept { return *partial_; }

 private:
  std::shared_ptr<const ForgeRecord> partial_;
};

enum class DetectorTemplate { Direct, CoT };

struct PerturbOptions {
  int max_iterations = 5;
  DetectorTemplate detector = DetectorTemplate::Direct;
  int retry_limit = 2;
};

/// Plants an inconsistency and keeps refining it until the detector is
/// fooled or the iteration budget runs out.
inline ForgeRecord perturb_iteratively(const std::string& ground_truth, const RoleBinding& perturber,
                                       const RoleBinding& detector, std::shared_ptr<const ImageInput> image,
                                       const PerturbOptions& options, Warnings* warnings = nullptr) {
  if (options.max_iterations < 1) throw Error(ErrorCode::InvalidConfig, "max_iterations must be >= 1");
  if (ground_truth.empty()) throw Error(ErrorCode::InvalidArgument, "ground truth is empty");
  const TemplateSet builtin = TemplateSet::builtin();
  const TemplateName detector_tpl =
      options.detector == DetectorTemplate::CoT ? TemplateName::CoTPrompt : TemplateName::DirectPrompt;

  ForgeRecord rec;
  rec.ground_truth_caption = ground_truth;
  rec.status = ForgeStatus::MaxIterReached;
  try {
    for (int t = 1; t <= options.max_iterations; ++t) {
      const std::string prompt = render(perturbation_template(),
                                        {{"ground-truth", ground_truth}, {"history", numbered(rec.perturbation_history)}});
      std::string candidate = detail::clean_caption(perturber.gateway->call(perturber.text(prompt)).text);
      rec.perturbation_history.push_back(candidate);
      if (candidate.empty() || candidate == ground_truth) {
        warn(warnings, "iteration " + std::to_string(t) + ": perturbation left the caption unchanged");
        rec.detector_verdicts.push_back(0);
        continue;
      }
      Diagnostics diag;
      const auto verdict = detail::call_parsed(
          detector, detector.vision(builtin.render(detector_tpl, {{"caption", candidate}}), image),
          options.retry_limit, [](const std::string& raw) { return parse_detector_reply(raw); },
          "detector", diag);
      if (warnings != nullptr) warnings->insert(warnings->end(), diag.warnings.begin(), diag.warnings.end());
      if (!verdict) warn(warnings, "iteration " + std::to_string(t) + ": detector reply unusable, counted as detected");
      const int fooled = verdict && verdict->consistent ? 1 : 0;
      rec.detector_verdicts.push_back(fooled);
      if (fooled == 1) {
        rec.perturbed_caption = std::move(candidate);
        rec.status = ForgeStatus::AdversarialFound;
        return rec;
      }
    }
  } catch (const Error& e) {
    throw ForgeError(e.code(), e.what(), rec);
  }
  return rec;
}

struct ForgeConfig {
  std::vector<GranularitySpec> specs = default_granularity_specs();
  std::vector<RoleBinding> captioners;
  RoleBinding fusion;
  RoleBinding perturber;
  RoleBinding detector;
  PerturbOptions perturb;
  bool include_undetected = false;  // emit the last perturbation of MaxIterReached runs
  std::size_t parallelism = 1;
  std::filesystem::path relative_to;  // image paths are written relative to this when set

  void validate() const {
    if (specs.empty()) throw Error(ErrorCode::InvalidConfig, "no granularity specs");
    std::set<int> levels;
    for (const auto& s : specs) {
      if (!levels.insert(s.level).second) throw Error(ErrorCode::InvalidConfig, "duplicate granularity level");
    }
    if (captioners.empty()) throw Error(ErrorCode::InvalidConfig, "no captioners configured");
    for (const auto& c : captioners) {
      if (!c.gateway) throw Error(ErrorCode::InvalidConfig, "captioner has no backend");
    }
    if (!fusion.gateway || !perturber.gateway || !detector.gateway) {
      throw Error(ErrorCode::InvalidConfig, "fusion, perturbation and detector roles need backends");
    }
    if (perturb.max_iterations < 1) throw Error(ErrorCode::InvalidConfig, "max_iterations must be >= 1");
    if (parallelism < 1) throw Error(ErrorCode::InvalidConfig, "parallelism must be >= 1");
  }
};

struct ForgeRun {
  std::vector<nlohmann::json> lines;
  std::vector<ForgeRecord> records;  // one per (image, granularity) that produced a ground truth
  Warnings log;
  std::size_t skipped = 0;
  std::map<int, std::size_t> clean_per_granularity;
  std::map<int, std::size_t> perturbed_per_granularity;
};

/// Image files in a directory, sorted by name.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error(ErrorCode::IoError, dir.string() + " is not a directory");
  static const std::set<std::string> kExt = {".png", ".jpg", ".jpeg", ".gif", ".webp", ".bmp"};
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (kExt.contains(ext)) out.push_back(entry.path());
  }
  if (ec) throw Error(ErrorCode::IoError, "cannot list " + dir.string() + ": " + ec.message());
  std::sort(out.begin(), out.end());
  return out;
}

/// Forges records for every (image, granularity) pair, in that order.
inline ForgeRun build_dataset(const std::vector<std::filesystem::path>& images, const ForgeConfig& config) {
  config.validate();
  ForgeRun run;
  if (images.empty()) {
    run.log.push_back("no images given; dataset is empty");
    return run;
  }
  std::vector<GranularitySpec> specs = config.specs;
  std::sort(specs.begin(), specs.end(), [](const auto& a, const auto& b) { return a.level < b.level; });

  struct Job {
    std::optional<ForgeRecord> record;
    Warnings log;
    bool failed = false;
  };
  const std::size_t n = images.size() * specs.size();
  std::vector<Job> jobs(n);
  std::vector<std::shared_ptr<const ImageInput>> loaded(images.size());
  std::vector<std::string> load_errors(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    try {
      loaded[i] = std::make_shared<const ImageInput>(load_image(images[i]));
    } catch (const Error& e) {
      load_errors[i] = e.what();
    }
  }

  detail::parallel_for(n, config.parallelism, [&](std::size_t idx) {
    const std::size_t i = idx / specs.size();
    const GranularitySpec& spec = specs[idx % specs.size()];
    Job& job = jobs[idx];
    const std::string where = images[i].filename().string() + " G" + std::to_string(spec.level);
    if (!loaded[i]) {
      job.log.push_back(where + ": " + load_errors[i]);
      job.failed = true;
      return;
    }
    Warnings w;
    std::string gt;
    try {
      gt = generate_ground_truth(loaded[i], spec, config.captioners, config.fusion, &w);
    } catch (const Error& e) {
      for (auto& x : w) job.log.push_back(where + ": " + x);
      job.log.push_back(where + ": ground truth failed: " + e.what());
      job.failed = true;
      return;
    }
    ForgeRecord rec;
    try {
      rec = perturb_iteratively(gt, config.perturber, config.detector, loaded[i], config.perturb, &w);
    } catch (const ForgeError& e) {
      rec = e.partial();
      w.push_back(std::string("perturbation failed: ") + e.what());
      job.failed = true;
    }
    rec.image_path = images[i];
    rec.granularity = spec.level;
    for (auto& x : w) job.log.push_back(where + ": " + x);
    job.record = std::move(rec);
  });

  const auto path_string = [&](const std::filesystem::path& p) {
    if (config.relative_to.empty()) return p.generic_string();
    return std::filesystem::absolute(p).lexically_relative(std::filesystem::absolute(config.relative_to)).generic_string();
  };

  for (auto& job : jobs) {
    run.log.insert(run.log.end(), job.log.begin(), job.log.end());
    if (job.failed) ++run.skipped;
    if (!job.record) continue;
    const ForgeRecord& rec = *job.record;
    const std::string stem = rec.image_path.stem().string() + "-g" + std::to_string(rec.granularity);
    const auto line = [&](const std::string& suffix, const std::string& caption, int label) {
      return nlohmann::json{{"id", stem + "-" + suffix},
                            {"image_path", path_string(rec.image_path)},
                            {"caption", caption},
                            {"label", label},
                            {"granularity", rec.granularity},
                            {"ground_truth", rec.ground_truth_caption},
                            {"perturbation_history", rec.perturbation_history},
                            {"status", to_string(rec.status)}};
    };
    run.lines.push_back(line("clean", rec.ground_truth_caption, 0));
    ++run.clean_per_granularity[rec.granularity];

    std::optional<std::string> adversarial = rec.perturbed_caption;
    if (!adversarial && rec.status == ForgeStatus::MaxIterReached) {
      if (config.include_undetected && !rec.perturbation_history.empty() &&
          rec.perturbation_history.back() != rec.ground_truth_caption && !rec.perturbation_history.back().empty()) {
        adversarial = rec.perturbation_history.back();
      } else {
        run.log.push_back(stem + ": detector never fooled after " +
                          std::to_string(rec.perturbation_history.size()) + " iterations; perturbed record omitted");
      }
    }
    if (adversarial) {
      run.lines.push_back(line("perturbed", *adversarial, 1));
      ++run.perturbed_per_granularity[rec.granularity];
    }
    run.records.push_back(rec);
  }
  return run;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& lines) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& l : lines) out << l.dump() << '\n';
}

}  // namespace hmgie
