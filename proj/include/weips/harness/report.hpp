#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "weips/harness/cluster.hpp"
#include "weips/harness/freshness.hpp"

namespace weips::harness {

struct MasterDedup {
  ShardId shard = 0;
  std::uint64_t drained = 0;
  std::uint64_t emitted = 0;
  double ratio = 0.0;  // drained / emitted; 1.0 when nothing was emitted
};

struct RunReport {
  std::string config_json;
  std::uint64_t samples = 0;
  std::uint64_t applied = 0;
  std::uint64_t rejected = 0;
  std::vector<monitor::WindowMetrics> windows;
  std::vector<MasterDedup> dedup;
  double dedup_ratio = 0.0;  // aggregate over masters
  std::uint64_t log_records = 0;
  std::uint64_t log_bytes = 0;
  std::uint64_t log_frames = 0;
  std::vector<Cluster::TimelineEvent> events;
  std::vector<FreshnessBenchEntry> freshness;  // may be empty
  bool consistent = false;
  std::string consistency_detail;
  std::vector<Version> versions;
  std::optional<Version> rollback_version;

  std::string summary_text() const;
};

// Pulls counters, metric history and the event timeline out of a finished
// run. Window metrics come from the registry entries published during
// training, so the export path is the same one external dashboards would use.
RunReport collect_report(Cluster& cluster, const TrainResult& train);

// Writes metrics.csv, events.csv, freshness.csv (when measured), dedup.csv,
// summary.json and summary.txt under dir.
void write_report(const RunReport& report, const std::string& dir);

}  // namespace weips::harness
