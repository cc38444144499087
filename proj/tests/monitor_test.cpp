#include "weips/monitor/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "weips/error.hpp"
#include "weips/model/ops.hpp"
#include "weips/rng.hpp"

namespace weips::monitor {
namespace {

// O(n^2) AUC: probability a random positive outranks a random negative,
// ties counting one half.
std::optional<double> auc_bruteforce(
    const std::vector<std::pair<double, int>>& scored) {
  std::uint64_t pos = 0, neg = 0;
  double wins = 0.0;
  for (const auto& [sp, lp] : scored) {
    if (lp == 1) {
      ++pos;
    } else {
      ++neg;
      continue;
    }
    for (const auto& [sn, ln] : scored) {
      if (ln == 1) continue;
      if (sp > sn) {
        wins += 1.0;
      } else if (sp == sn) {
        wins += 0.5;
      }
    }
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

TEST(Auc, HandCases) {
  EXPECT_DOUBLE_EQ(*auc_midrank({{0.9, 1}, {0.1, 0}}), 1.0);
  EXPECT_DOUBLE_EQ(*auc_midrank({{0.1, 1}, {0.9, 0}}), 0.0);
  EXPECT_DOUBLE_EQ(*auc_midrank({{0.5, 1}, {0.5, 0}}), 0.5);
  EXPECT_FALSE(auc_midrank({{0.4, 1}, {0.6, 1}}).has_value());
  EXPECT_FALSE(auc_midrank({}).has_value());
}

TEST(Auc, MatchesBruteForceOnRandomWindows) {
  Rng rng(321);
  for (int case_i = 0; case_i < 300; ++case_i) {
    std::vector<std::pair<double, int>> scored;
    const int n = 2 + static_cast<int>(rng.next_below(199));
    for (int i = 0; i < n; ++i) {
      // Coarse grid so tied scores are common.
      const double score = rng.next_below(20) / 20.0;
      scored.emplace_back(score, rng.bernoulli(0.4) ? 1 : 0);
    }
    const auto expected = auc_bruteforce(scored);
    const auto actual = auc_midrank(scored);
    ASSERT_EQ(expected.has_value(), actual.has_value());
    if (expected) {
      EXPECT_NEAR(*actual, *expected, 1e-12) << "window of " << n;
    }
  }
}

TEST(Validator, ClosesWindowAtExactlyWindowSize) {
  ProgressiveValidator v({.window_size = 4, .smooth_k = 2});
  EXPECT_FALSE(v.observe(0.6, 1).has_value());
  EXPECT_FALSE(v.observe(0.4, 0).has_value());
  EXPECT_FALSE(v.observe(0.7, 1).has_value());
  const auto w = v.observe(0.3, 0);
  ASSERT_TRUE(w.has_value());
  EXPECT_EQ(w->window_id, 0u);
  EXPECT_EQ(w->sample_count, 4u);
  EXPECT_EQ(w->positives, 2u);

  const double expected_ll = (model::logloss(1, 0.6) + model::logloss(0, 0.4) +
                              model::logloss(1, 0.7) + model::logloss(0, 0.3)) /
                             4.0;
  EXPECT_NEAR(w->mean_logloss, expected_ll, 1e-15);
  EXPECT_DOUBLE_EQ(*w->auc, 1.0);

  EXPECT_FALSE(v.observe(0.5, 1).has_value());
  EXPECT_EQ(v.observed_count(), 5u);
  EXPECT_EQ(v.closed_windows().size(), 1u);
  EXPECT_EQ(v.logloss_series().size(), 1u);
}

TEST(Validator, SingleClassWindowHasNoAuc) {
  ProgressiveValidator v({.window_size = 2});
  v.observe(0.6, 1);
  const auto w = v.observe(0.7, 1);
  ASSERT_TRUE(w.has_value());
  EXPECT_FALSE(w->auc.has_value());
}

TEST(Validator, RejectsOutOfRangePrediction) {
  ProgressiveValidator v({.window_size = 10});
  EXPECT_THROW(v.observe(-0.1, 0), Error);
  EXPECT_THROW(v.observe(1.5, 1), Error);
  EXPECT_THROW(v.observe(std::nan(""), 1), Error);
  EXPECT_NO_THROW(v.observe(0.0, 0));
  EXPECT_NO_THROW(v.observe(1.0, 1));
}

TEST(WindowMetrics, JsonRoundTripIncludingAbsentAuc) {
  WindowMetrics m;
  m.window_id = 42;
  m.sample_count = 1000;
  m.positives = 137;
  m.mean_logloss = 0.3125;
  m.auc = 0.875;
  const auto back = WindowMetrics::from_json(m.to_json());
  EXPECT_EQ(back.window_id, m.window_id);
  EXPECT_EQ(back.sample_count, m.sample_count);
  EXPECT_EQ(back.positives, m.positives);
  EXPECT_DOUBLE_EQ(back.mean_logloss, m.mean_logloss);
  ASSERT_TRUE(back.auc.has_value());
  EXPECT_DOUBLE_EQ(*back.auc, 0.875);

  m.auc.reset();
  EXPECT_FALSE(WindowMetrics::from_json(m.to_json()).auc.has_value());
}

TEST(Downgrade, NeedsMoreThanSmoothKWindows) {
  MonitorConfig cfg;  // smooth_k 5, ratio 1.2
  EXPECT_FALSE(should_downgrade({}, cfg).trigger);
  EXPECT_FALSE(should_downgrade({9.0, 9.0, 9.0, 9.0, 9.0}, cfg).trigger);
  EXPECT_TRUE(
      should_downgrade({0.1, 9.0, 9.0, 9.0, 9.0, 9.0}, cfg).trigger);
}

TEST(Downgrade, SteadyBaselineThenJump) {
  MonitorConfig cfg;
  std::vector<double> series(30, 0.30);

  // Five recent windows of 0.336 sit under the 0.36 threshold.
  auto mild = series;
  mild.insert(mild.end(), {0.31, 0.50, 0.29, 0.30, 0.28});
  const auto no_fire = should_downgrade(mild, cfg);
  EXPECT_FALSE(no_fire.trigger);
  EXPECT_NEAR(no_fire.recent_mean, 0.336, 1e-12);
  EXPECT_NEAR(no_fire.threshold, 0.36, 1e-12);

  // Five windows of 0.40 clear it.
  auto sustained = series;
  sustained.insert(sustained.end(), 5, 0.40);
  const auto fire = should_downgrade(sustained, cfg);
  EXPECT_TRUE(fire.trigger);
  EXPECT_NEAR(fire.recent_mean, 0.40, 1e-12);
  EXPECT_NEAR(fire.baseline_mean, 0.30, 1e-12);
}

TEST(Downgrade, SmoothingSuppressesSingleOutlier) {
  std::vector<double> series(20, 0.30);
  series.push_back(0.50);

  MonitorConfig spiky;
  spiky.smooth_k = 1;
  EXPECT_TRUE(should_downgrade(series, spiky).trigger);

  MonitorConfig smoothed;  // smooth_k 5: recent mean 0.34 <= 0.36
  const auto d = should_downgrade(series, smoothed);
  EXPECT_FALSE(d.trigger);
  EXPECT_NEAR(d.recent_mean, 0.34, 1e-12);
}

TEST(Downgrade, BaselineUsesAtMostBaselineWindows) {
  MonitorConfig cfg;
  cfg.smooth_k = 1;
  cfg.baseline_windows = 3;
  // Ancient awful windows fall outside the baseline span.
  std::vector<double> series{9.0, 9.0, 9.0, 0.30, 0.30, 0.30, 0.40};
  const auto d = should_downgrade(series, cfg);
  EXPECT_TRUE(d.trigger);
  EXPECT_NEAR(d.baseline_mean, 0.30, 1e-12);
}

TEST(Downgrade, TriggerIsMonotoneInRecentLogloss) {
  MonitorConfig cfg;
  Rng rng(55);
  for (int case_i = 0; case_i < 200; ++case_i) {
    std::vector<double> series;
    const int n = 6 + static_cast<int>(rng.next_below(30));
    for (int i = 0; i < n; ++i) series.push_back(rng.uniform(0.05, 2.0));
    const auto base = should_downgrade(series, cfg);
    // Worsening every recent window never un-triggers.
    auto worse = series;
    for (std::uint32_t k = 0; k < cfg.smooth_k; ++k) {
      worse[worse.size() - 1 - k] += 1.0;
    }
    const auto after = should_downgrade(worse, cfg);
    if (base.trigger) {
      EXPECT_TRUE(after.trigger);
    }
    EXPECT_GE(after.recent_mean, base.recent_mean);
    EXPECT_DOUBLE_EQ(after.baseline_mean, base.baseline_mean);
  }
}

TEST(SelectVersion, LatestPicksHighestBelowMarker) {
  const std::vector<VersionCandidate> c{{3, 0.30}, {5, 0.35}, {7, 0.90}};
  EXPECT_EQ(select_version(VersionStrategy::kLatest, c, 7), 5u);
  EXPECT_EQ(select_version(VersionStrategy::kLatest, c, 100), 7u);
  EXPECT_EQ(select_version(VersionStrategy::kLatest, c, 4), 3u);
  EXPECT_THROW(select_version(VersionStrategy::kLatest, c, 3), Error);
  EXPECT_THROW(select_version(VersionStrategy::kLatest, {}, 10), Error);
}

TEST(SelectVersion, BestMetricPicksLowestLoglossTiesToHigherVersion) {
  const std::vector<VersionCandidate> c{{3, 0.30}, {5, 0.35}, {7, 0.90}};
  EXPECT_EQ(select_version(VersionStrategy::kBestMetric, c, 7), 3u);

  const std::vector<VersionCandidate> tied{{3, 0.30}, {5, 0.30}, {7, 0.90}};
  EXPECT_EQ(select_version(VersionStrategy::kBestMetric, tied, 7), 5u);
}

TEST(VersionStrategyNames, RoundTrip) {
  EXPECT_EQ(version_strategy_from_name(version_strategy_name(
                VersionStrategy::kLatest)),
            VersionStrategy::kLatest);
  EXPECT_EQ(version_strategy_from_name(version_strategy_name(
                VersionStrategy::kBestMetric)),
            VersionStrategy::kBestMetric);
  EXPECT_THROW(version_strategy_from_name("noisiest"), Error);
}

}  // namespace
}  // namespace weips::monitor
