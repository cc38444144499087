#include "weips/monitor/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "weips/error.hpp"
#include "weips/model/ops.hpp"

namespace weips::monitor {

std::string WindowMetrics::to_json() const {
  nlohmann::json j;
  j["window_id"] = window_id;
  j["sample_count"] = sample_count;
  j["positives"] = positives;
  j["mean_logloss"] = mean_logloss;
  if (auc)
    j["auc"] = *auc;
  else
    j["auc"] = nullptr;
  return j.dump();
}

WindowMetrics WindowMetrics::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  WindowMetrics m;
  m.window_id = j.at("window_id").get<std::uint64_t>();
  m.sample_count = j.at("sample_count").get<std::uint64_t>();
  m.positives = j.at("positives").get<std::uint64_t>();
  m.mean_logloss = j.at("mean_logloss").get<double>();
  if (!j.at("auc").is_null()) m.auc = j.at("auc").get<double>();
  return m;
}

std::optional<double> auc_midrank(std::vector<std::pair<double, int>> scored) {
  std::uint64_t pos = 0;
  for (const auto& [score, label] : scored) {
    (void)score;
    if (label == 1) ++pos;
  }
  const std::uint64_t neg = scored.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < scored.size()) {
    std::size_t j = i;
    while (j < scored.size() && scored[j].first == scored[i].first) ++j;
    // Ranks are 1-based; tied scores all take the group's mean rank.
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (scored[k].second == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double n = static_cast<double>(neg);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

ProgressiveValidator::ProgressiveValidator(MonitorConfig cfg) : cfg_(cfg) {
  if (cfg_.window_size == 0)
    throw Error(ErrorCode::kInvalidArgument, "window_size must be positive");
  if (cfg_.smooth_k == 0)
    throw Error(ErrorCode::kInvalidArgument, "smooth_k must be positive");
  if (!(cfg_.degrade_ratio > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "degrade_ratio must be > 0");
  if (cfg_.baseline_windows == 0)
    throw Error(ErrorCode::kInvalidArgument, "baseline_windows must be positive");
  buffer_.reserve(cfg_.window_size);
}

std::optional<WindowMetrics> ProgressiveValidator::observe(double prediction,
                                                           int label) {
  if (!(prediction >= 0.0 && prediction <= 1.0) || !std::isfinite(prediction))
    throw Error(ErrorCode::kInvalidArgument, "prediction outside [0, 1]");
  if (label != 0 && label != 1)
    throw Error(ErrorCode::kInvalidArgument, "label must be 0 or 1");

  std::lock_guard lock(mu_);
  ++observed_;
  buffer_.emplace_back(prediction, label);
  logloss_sum_ += model::logloss(label, prediction);
  if (label == 1) ++positives_;
  if (buffer_.size() < cfg_.window_size) return std::nullopt;

  WindowMetrics m;
  m.window_id = next_window_id_++;
  m.sample_count = buffer_.size();
  m.positives = positives_;
  m.mean_logloss = logloss_sum_ / static_cast<double>(buffer_.size());
  m.auc = auc_midrank(std::move(buffer_));
  buffer_.clear();
  buffer_.reserve(cfg_.window_size);
  logloss_sum_ = 0.0;
  positives_ = 0;
  closed_.push_back(m);
  return m;
}

std::vector<WindowMetrics> ProgressiveValidator::closed_windows() const {
  std::lock_guard lock(mu_);
  return closed_;
}

std::vector<double> ProgressiveValidator::logloss_series() const {
  std::lock_guard lock(mu_);
  std::vector<double> out;
  out.reserve(closed_.size());
  for (const auto& w : closed_) out.push_back(w.mean_logloss);
  return out;
}

std::uint64_t ProgressiveValidator::observed_count() const {
  std::lock_guard lock(mu_);
  return observed_;
}

DowngradeDecision should_downgrade(const std::vector<double>& window_logloss,
                                   const MonitorConfig& cfg) {
  DowngradeDecision d;
  const std::size_t n = window_logloss.size();
  if (n < cfg.smooth_k + 1) return d;

  const std::size_t recent_begin = n - cfg.smooth_k;
  double recent_sum = 0.0;
  for (std::size_t i = recent_begin; i < n; ++i) recent_sum += window_logloss[i];
  d.recent_mean = recent_sum / static_cast<double>(cfg.smooth_k);

  const std::size_t baseline_count =
      std::min<std::size_t>(cfg.baseline_windows, recent_begin);
  double baseline_sum = 0.0;
  for (std::size_t i = recent_begin - baseline_count; i < recent_begin; ++i)
    baseline_sum += window_logloss[i];
  d.baseline_mean = baseline_sum / static_cast<double>(baseline_count);

  d.threshold = cfg.degrade_ratio * d.baseline_mean;
  d.trigger = d.recent_mean > d.threshold;
  return d;
}

const char* version_strategy_name(VersionStrategy s) {
  return s == VersionStrategy::kLatest ? "latest" : "best_metric";
}

VersionStrategy version_strategy_from_name(const std::string& name) {
  if (name == "latest") return VersionStrategy::kLatest;
  if (name == "best_metric") return VersionStrategy::kBestMetric;
  throw Error(ErrorCode::kInvalidArgument, "unknown version strategy: " + name);
}

Version select_version(VersionStrategy strategy,
                       const std::vector<VersionCandidate>& candidates,
                       Version below_version) {
  const VersionCandidate* chosen = nullptr;
  for (const auto& c : candidates) {
    if (c.version >= below_version) continue;
    if (chosen == nullptr) {
      chosen = &c;
      continue;
    }
    switch (strategy) {
      case VersionStrategy::kLatest:
        if (c.version > chosen->version) chosen = &c;
        break;
      case VersionStrategy::kBestMetric:
        if (c.mean_logloss < chosen->mean_logloss ||
            (c.mean_logloss == chosen->mean_logloss && c.version > chosen->version))
          chosen = &c;
        break;
    }
  }
  if (chosen == nullptr)
    throw Error(ErrorCode::kNotFound,
                "no candidate version below " + std::to_string(below_version));
  return chosen->version;
}

}  // namespace weips::monitor
