#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "weips/types.hpp"

namespace weips::monitor {

struct WindowMetrics {
  std::uint64_t window_id = 0;
  std::uint64_t sample_count = 0;
  std::uint64_t positives = 0;
  double mean_logloss = 0.0;
  // Absent when the window holds a single label class.
  std::optional<double> auc;

  std::string to_json() const;
  static WindowMetrics from_json(const std::string& text);
};

// Area under the ROC curve by the rank-sum formula with midranks for tied
// scores. Returns nullopt when only one class is present.
std::optional<double> auc_midrank(std::vector<std::pair<double, int>> scored);

struct MonitorConfig {
  std::uint64_t window_size = 1000;
  std::uint32_t smooth_k = 5;
  double degrade_ratio = 1.2;
  std::uint32_t baseline_windows = 20;
};

// Streaming predict-before-update validation: every observation carries the
// prediction made before that sample's gradient was applied. Windows close
// after exactly window_size observations.
class ProgressiveValidator {
 public:
  explicit ProgressiveValidator(MonitorConfig cfg);

  // Thread-safe. Returns the window closed by this observation, if any.
  std::optional<WindowMetrics> observe(double prediction, int label);

  std::vector<WindowMetrics> closed_windows() const;
  std::vector<double> logloss_series() const;
  std::uint64_t observed_count() const;
  const MonitorConfig& config() const { return cfg_; }

 private:
  MonitorConfig cfg_;
  mutable std::mutex mu_;
  std::vector<std::pair<double, int>> buffer_;
  double logloss_sum_ = 0.0;
  std::uint64_t positives_ = 0;
  std::uint64_t next_window_id_ = 0;
  std::uint64_t observed_ = 0;
  std::vector<WindowMetrics> closed_;
};

struct DowngradeDecision {
  bool trigger = false;
  double recent_mean = 0.0;
  double baseline_mean = 0.0;
  double threshold = 0.0;
};

// Compares the mean of the last smooth_k window loglosses against ratio times
// the mean of up to baseline_windows windows immediately before them. Never
// triggers without at least smooth_k + 1 windows, so a single bad window
// cannot fire a rollback.
DowngradeDecision should_downgrade(const std::vector<double>& window_logloss,
                                   const MonitorConfig& cfg);

enum class VersionStrategy : std::uint8_t { kLatest = 0, kBestMetric = 1 };

const char* version_strategy_name(VersionStrategy s);
VersionStrategy version_strategy_from_name(const std::string& name);

struct VersionCandidate {
  Version version = 0;
  double mean_logloss = 0.0;
};

// kLatest: highest candidate version strictly below below_version.
// kBestMetric: lowest mean_logloss among candidates strictly below
// below_version, ties resolved toward the higher version.
// Throws not-found when no candidate qualifies.
Version select_version(VersionStrategy strategy,
                       const std::vector<VersionCandidate>& candidates,
                       Version below_version);

}  // namespace weips::monitor
