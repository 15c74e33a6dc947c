#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hmgie/error.hpp"
#include "hmgie/hieg.hpp"

namespace hmgie {

enum class WeightDirection { IncreasingWithDepth, DecreasingWithDepth };

struct ScoringConfig {
  double weight_ratio = 1.2;
  int max_level = 5;
  std::vector<std::size_t> max_per_level = std::vector<std::size_t>(5, 10);
  WeightDirection weight_direction = WeightDirection::IncreasingWithDepth;

  static ScoringConfig uniform(int max_level, std::size_t per_level, double ratio = 1.2,
                               WeightDirection dir = WeightDirection::IncreasingWithDepth) {
    ScoringConfig c;
    c.weight_ratio = ratio;
    c.max_level = max_level;
    c.max_per_level.assign(static_cast<std::size_t>(std::max(max_level, 0)), per_level);
    c.weight_direction = dir;
    return c;
  }

  void validate() const {
    if (!(weight_ratio > 0.0) || !std::isfinite(weight_ratio)) {
      throw Error(ErrorCode::InvalidConfig, "weight_ratio must be > 0");
    }
    if (max_level < 1) throw Error(ErrorCode::InvalidConfig, "max_level must be >= 1");
    if (max_per_level.size() != static_cast<std::size_t>(max_level)) {
      throw Error(ErrorCode::InvalidConfig, "max_per_level needs one entry per level");
    }
    for (const auto n : max_per_level) {
      if (n == 0) throw Error(ErrorCode::InvalidConfig, "max_per_level entries must be >= 1");
    }
  }
};

/// Normalized geometric weights for `count` levels. Level j gets
/// ratio^(j-1) (or ratio^-(j-1) when decreasing) before normalization.
inline std::vector<double> level_weights(std::size_t count, double ratio,
                                         WeightDirection dir = WeightDirection::IncreasingWithDepth) {
  std::vector<double> w(count);
  const double step = dir == WeightDirection::IncreasingWithDepth ? ratio : 1.0 / ratio;
  double term = 1.0;
  for (auto& x : w) {
    x = term;
    term *= step;
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& x : w) x /= total;
  return w;
}

/// Accuracy score: level-weighted mean of confidence over correct answers,
/// with weights normalized over the realized levels.
inline double compute_h_acc(std::span<const LevelStats> stats, const ScoringConfig& config) {
  if (stats.empty()) throw Error(ErrorCode::NoLevels, "no populated levels");
  const auto w = level_weights(stats.size(), config.weight_ratio, config.weight_direction);
  double h = 0.0;
  for (std::size_t j = 0; j < stats.size(); ++j) {
    if (stats[j].count == 0) throw Error(ErrorCode::InvalidArgument, "level with no questions");
    h += w[j] * (stats[j].correct_weighted_sum / static_cast<double>(stats[j].count));
  }
  return std::clamp(h, 0.0, 1.0);
}

/// Completeness score: level-weighted fill ratio n_j / N_j, with weights
/// normalized over all configured levels; unreached levels count zero.
inline double compute_h_comp(std::span<const std::size_t> counts, const ScoringConfig& config) {
  config.validate();
  const auto k = static_cast<std::size_t>(config.max_level);
  if (counts.size() > k) throw Error(ErrorCode::InvalidArgument, "more levels than max_level");
  const auto a = level_weights(k, config.weight_ratio, config.weight_direction);
  double h = 0.0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] > config.max_per_level[j]) {
      throw Error(ErrorCode::InvalidArgument, "level " + std::to_string(j + 1) +
                                                  " exceeds its question cap");
    }
    h += a[j] * static_cast<double>(counts[j]) / static_cast<double>(config.max_per_level[j]);
  }
  return std::clamp(h, 0.0, 1.0);
}

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  friend bool operator==(const Confusion&, const Confusion&) = default;
};

/// Positive class is "inconsistent". Undefined rates stay empty.
struct MetricsSummary {
  Confusion confusion;
  std::optional<double> tpr;
  std::optional<double> fpr;
  std::optional<double> precision;
  std::optional<double> f1;
  std::map<int, MetricsSummary> per_granularity;
};

struct Prediction {
  int predicted = 0;  // 1 = flagged inconsistent
  int label = 0;      // 1 = inconsistent
};

inline MetricsSummary metrics_from_confusion(const Confusion& c) {
  MetricsSummary m;
  m.confusion = c;
  const auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.tpr = ratio(c.tp, c.tp + c.fn);
  m.fpr = ratio(c.fp, c.fp + c.tn);
  m.precision = ratio(c.tp, c.tp + c.fp);
  if (m.tpr && m.precision && (*m.tpr + *m.precision) > 0.0) {
    m.f1 = 2.0 * *m.precision * *m.tpr / (*m.precision + *m.tpr);
  }
  return m;
}

inline MetricsSummary detection_metrics(std::span<const Prediction> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no predictions");
  Confusion c;
  for (const auto& p : pairs) {
    if (p.label == 1) {
      (p.predicted == 1 ? c.tp : c.fn)++;
    } else {
      (p.predicted == 1 ? c.fp : c.tn)++;
    }
  }
  return metrics_from_confusion(c);
}

namespace detail {

// Counts pairs with equal keys in a sorted run, as sum of t(t-1)/2.
template <typename It, typename Eq>
std::int64_t tied_pairs(It first, It last, Eq eq) {
  std::int64_t total = 0;
  while (first != last) {
    It run = first;
    std::int64_t t = 0;
    while (run != last && eq(*first, *run)) {
      ++run;
      ++t;
    }
    total += t * (t - 1) / 2;
    first = run;
  }
  return total;
}

// Sorts by .second and returns the number of inversions (exchanges).
inline std::int64_t merge_count(std::vector<std::pair<double, double>>& v) {
  std::vector<std::pair<double, double>> buf(v.size());
  std::int64_t swaps = 0;
  for (std::size_t width = 1; width < v.size(); width *= 2) {
    for (std::size_t lo = 0; lo < v.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, v.size());
      const std::size_t hi = std::min(lo + 2 * width, v.size());
      std::size_t i = lo;
      std::size_t j = mid;
      std::size_t k = lo;
      while (i < mid && j < hi) {
        if (v[j].second < v[i].second) {
          swaps += static_cast<std::int64_t>(mid - i);
          buf[k++] = v[j++];
        } else {
          buf[k++] = v[i++];
        }
      }
      while (i < mid) buf[k++] = v[i++];
      while (j < hi) buf[k++] = v[j++];
    }
    std::swap(v, buf);
  }
  return swaps;
}

}  // namespace detail

/// Kendall's tau-b in O(n log n) (Knight's merge-sort method).
inline double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "sequences differ in length");
  if (x.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least two observations");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::isnan(x[i]) || std::isnan(y[i])) throw Error(ErrorCode::InvalidArgument, "NaN input");
  }

  std::vector<std::pair<double, double>> v(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) v[i] = {x[i], y[i]};
  std::sort(v.begin(), v.end());

  const auto n = static_cast<std::int64_t>(v.size());
  const std::int64_t n0 = n * (n - 1) / 2;
  const std::int64_t n1 =
      detail::tied_pairs(v.begin(), v.end(), [](auto& a, auto& b) { return a.first == b.first; });
  const std::int64_t n3 = detail::tied_pairs(v.begin(), v.end(), [](auto& a, auto& b) { return a == b; });
  const std::int64_t swaps = detail::merge_count(v);
  const std::int64_t n2 =
      detail::tied_pairs(v.begin(), v.end(), [](auto& a, auto& b) { return a.second == b.second; });

  if (n0 == n1 || n0 == n2) throw Error(ErrorCode::DegenerateInput, "a sequence is constant");
  const std::int64_t s = n0 - n1 - n2 + n3 - 2 * swaps;
  return static_cast<double>(s) /
         std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

/// Lowercased tokens, split on whitespace and ASCII punctuation.
inline std::vector<std::string> rouge_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (const unsigned char c : text) {
    if (c < 0x80 && (std::isspace(c) != 0 || std::ispunct(c) != 0)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  bool too_short = false;  // a text had fewer than n tokens; scores are zero
};

inline RougeScore rouge_n(std::string_view candidate, std::string_view reference, int n) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "n must be positive");
  const auto cand = rouge_tokenize(candidate);
  const auto ref = rouge_tokenize(reference);
  const auto order = static_cast<std::size_t>(n);
  RougeScore score;
  if (cand.size() < order || ref.size() < order) {
    score.too_short = true;
    return score;
  }
  const auto grams = [order](const std::vector<std::string>& toks) {
    std::map<std::vector<std::string>, std::size_t> counts;
    for (std::size_t i = 0; i + order <= toks.size(); ++i) {
      ++counts[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                        toks.begin() + static_cast<std::ptrdiff_t>(i + order))];
    }
    return counts;
  };
  const auto cg = grams(cand);
  const auto rg = grams(ref);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cg) {
    if (const auto it = rg.find(gram); it != rg.end()) overlap += std::min(count, it->second);
  }
  const double cand_total = static_cast<double>(cand.size() - order + 1);
  const double ref_total = static_cast<double>(ref.size() - order + 1);
  score.precision = static_cast<double>(overlap) / cand_total;
  score.recall = static_cast<double>(overlap) / ref_total;
  if (score.precision + score.recall > 0.0) {
    score.f_measure = 2.0 * score.precision * score.recall / (score.precision + score.recall);
  }
  return score;
}

}  // namespace hmgie
