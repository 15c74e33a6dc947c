#include <gtest/gtest.h>

#include <random>

#include "hmgie/scoring.hpp"
#include "support/oracles.hpp"
#include "support/properties.hpp"

using namespace hmgie;

TEST(Weights, NormalizedAndOrdered) {
  for (std::size_t n = 1; n <= 12; ++n) {
    for (double r : {0.5, 1.0, 1.2, 3.0}) {
      for (auto dir : {WeightDirection::IncreasingWithDepth, WeightDirection::DecreasingWithDepth}) {
        const auto w = level_weights(n, r, dir);
        double sum = 0;
        for (double x : w) sum += x;
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }
  }
  const auto w = level_weights(2, 1.2);
  EXPECT_NEAR(w[0], 1 / 2.2, 1e-15);
  EXPECT_NEAR(w[1], 1.2 / 2.2, 1e-15);
  const auto d = level_weights(2, 1.2, WeightDirection::DecreasingWithDepth);
  EXPECT_GT(d[0], d[1]);
}

TEST(HAcc, Examples) {
  const auto cfg = ScoringConfig::uniform(5, 10);
  const std::vector<LevelStats> perfect = {{1, 3, 3.0}, {2, 2, 2.0}, {3, 1, 1.0}};
  EXPECT_NEAR(compute_h_acc(perfect, cfg), 1.0, 1e-15);
  const std::vector<LevelStats> single = {{1, 2, 1.0}};
  EXPECT_DOUBLE_EQ(compute_h_acc(single, cfg), 0.5);
  const std::vector<LevelStats> two = {{1, 2, 1.0}, {2, 1, 0.8}};
  EXPECT_NEAR(compute_h_acc(two, cfg), 0.5 / 2.2 + 1.2 * 0.8 / 2.2, 1e-15);
  EXPECT_NEAR(compute_h_acc(two, cfg), 0.6636363636363636, 1e-12);
  EXPECT_THROW(compute_h_acc(std::vector<LevelStats>{}, cfg), Error);
}

TEST(HComp, Examples) {
  const auto cfg = ScoringConfig::uniform(5, 10);
  EXPECT_DOUBLE_EQ(compute_h_comp(std::vector<std::size_t>{}, cfg), 0.0);
  EXPECT_NEAR(compute_h_comp(std::vector<std::size_t>{10, 10, 10, 10, 10}, cfg), 1.0, 1e-12);
  const auto k2 = ScoringConfig::uniform(2, 4);
  EXPECT_NEAR(compute_h_comp(std::vector<std::size_t>{2, 4}, k2), 0.5 / 2.2 + 1.2 / 2.2, 1e-15);
  EXPECT_NEAR(compute_h_comp(std::vector<std::size_t>{2, 4}, k2), 0.7727272727272727, 1e-12);
  EXPECT_THROW(compute_h_comp(std::vector<std::size_t>{5}, k2), Error);
  EXPECT_THROW(compute_h_comp(std::vector<std::size_t>{1, 1, 1}, k2), Error);
}

TEST(HScores, OracleAndMonotonicity) {
  props::Rng rng(3);
  std::uniform_real_distribution<double> ratio(0.3, 3.0);
  for (int c = 0; c < 300; ++c) {
    const auto [hieg, raw] = props::random_hieg(rng);
    const double r = ratio(rng);
    const auto cfg = ScoringConfig::uniform(5, 10, r);
    const auto stats = level_stats(hieg);
    const double h = compute_h_acc(stats, cfg);
    EXPECT_NEAR(h, oracle::h_acc(raw, r), 1e-12);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, 1.0);
    // Flip the first wrong node to right: score never drops.
    auto flipped = raw;
    for (auto& level : flipped) {
      auto it = std::find_if(level.begin(), level.end(), [](auto& n) { return n.y == 0; });
      if (it != level.end()) {
        it->y = 1;
        break;
      }
    }
    EXPECT_GE(oracle::h_acc(flipped, r) + 1e-15, h);
    std::vector<std::size_t> counts;
    for (const auto& s : stats) counts.push_back(s.count);
    const double hc = compute_h_comp(counts, cfg);
    EXPECT_NEAR(hc, oracle::h_comp(counts, cfg.max_per_level, r), 1e-12);
    if (counts[0] < 10) {
      auto more = counts;
      ++more[0];
      EXPECT_GE(compute_h_comp(more, cfg), hc);
    }
  }
}

TEST(Metrics, Examples) {
  std::vector<Prediction> p = {{1, 1}, {1, 1}, {0, 0}, {0, 0}};
  auto m = detection_metrics(p);
  EXPECT_EQ(*m.tpr, 1.0);
  EXPECT_EQ(*m.fpr, 0.0);
  EXPECT_EQ(*m.f1, 1.0);

  m = metrics_from_confusion({3, 2, 4, 1});
  EXPECT_DOUBLE_EQ(*m.tpr, 0.75);
  EXPECT_NEAR(*m.fpr, 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(*m.precision, 0.6);
  EXPECT_NEAR(*m.f1, 2.0 / 3.0, 1e-15);

  m = metrics_from_confusion({0, 0, 5, 0});
  EXPECT_FALSE(m.tpr.has_value());
  EXPECT_FALSE(m.precision.has_value());
  EXPECT_FALSE(m.f1.has_value());
  EXPECT_EQ(*m.fpr, 0.0);
  EXPECT_THROW(detection_metrics(std::vector<Prediction>{}), Error);
}

TEST(Metrics, IdentitiesOnRandomConfusions) {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> d(0, 30);
  for (int i = 0; i < 2000; ++i) {
    const Confusion c{std::size_t(d(rng)), std::size_t(d(rng)), std::size_t(d(rng)), std::size_t(d(rng))};
    const auto m = metrics_from_confusion(c);
    if (c.tp + c.fn > 0) EXPECT_EQ(*m.tpr, double(c.tp) / double(c.tp + c.fn));
    if (c.fp + c.tn > 0) EXPECT_EQ(*m.fpr, double(c.fp) / double(c.fp + c.tn));
    if (m.precision && m.tpr && *m.precision + *m.tpr > 0) {
      EXPECT_EQ(*m.f1, 2 * *m.precision * *m.tpr / (*m.precision + *m.tpr));
    }
  }
}

TEST(Kendall, Examples) {
  const std::vector<double> a = {1, 2, 3, 4, 5};
  const std::vector<double> b = {5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(kendall_tau(a, a), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau(a, b), -1.0);
  const std::vector<double> x = {1, 2, 3, 4}, y = {1, 3, 2, 4};
  EXPECT_NEAR(kendall_tau(x, y), oracle::kendall_tau_b(x, y), 1e-15);
  EXPECT_NEAR(kendall_tau(x, y), 4.0 / 6.0, 1e-15);
  EXPECT_THROW(kendall_tau(std::vector<double>{1, 2}, std::vector<double>{1}), Error);
  try {
    kendall_tau(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateInput);
  }
}

TEST(Kendall, OracleWithTies) {
  std::mt19937 rng(9);
  std::uniform_int_distribution<int> len(2, 40), val(1, 5);
  int checked = 0;
  for (int i = 0; i < 500; ++i) {
    std::vector<double> x(len(rng)), y;
    for (auto& v : x) v = val(rng);
    for (std::size_t k = 0; k < x.size(); ++k) y.push_back(val(rng));
    try {
      const double t = kendall_tau(x, y);
      EXPECT_NEAR(t, oracle::kendall_tau_b(x, y), 1e-12);
      EXPECT_NEAR(t, kendall_tau(y, x), 1e-12);
      ++checked;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::DegenerateInput);
    }
  }
  EXPECT_GT(checked, 400);
}

TEST(Rouge, Examples) {
  const auto same = rouge_n("The cat sat on the warm mat today", "the cat sat on the warm mat today!", 4);
  EXPECT_DOUBLE_EQ(same.f_measure, 1.0);
  EXPECT_DOUBLE_EQ(rouge_n("a b c d e", "v w x y z", 4).f_measure, 0.0);
  const auto s = rouge_n("a b", "a b c d", 4);
  EXPECT_TRUE(s.too_short);
  EXPECT_EQ(s.f_measure, 0.0);
  // Clipping: "the" occurs 3 times in the candidate but once in the reference.
  const auto clip = rouge_n("the the the", "the cat", 1);
  EXPECT_NEAR(clip.precision, 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(clip.recall, 0.5);
}

TEST(Rouge, Oracle) {
  std::mt19937 rng(13);
  const std::vector<std::string> vocab = {"a", "dog", "cat", "Red", "red,", "sofa.", "on", "the", "The"};
  std::uniform_int_distribution<int> len(0, 14), w(0, int(vocab.size()) - 1), n(1, 4);
  for (int i = 0; i < 500; ++i) {
    std::string c, r;
    for (int k = len(rng); k > 0; --k) c += vocab[w(rng)] + " ";
    for (int k = len(rng); k > 0; --k) r += vocab[w(rng)] + " ";
    const int order = n(rng);
    const auto got = rouge_n(c, r, order);
    const auto want = oracle::rouge_n(c, r, std::size_t(order));
    EXPECT_EQ(got.too_short, want.too_short);
    EXPECT_EQ(got.precision, want.p);
    EXPECT_EQ(got.recall, want.r);
    EXPECT_EQ(got.f_measure, want.f);
  }
}
