#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "weips/harness/cluster.hpp"

namespace weips::harness {

struct FreshnessOptions {
  std::size_t probes = 500;
  std::int64_t stagger_ms = 5;    // delay between probe launches
  std::int64_t poll_ms = 2;       // poll interval while waiting
  std::int64_t timeout_ms = 60'000;  // per-run budget after the last launch
};

struct FreshnessResult {
  std::vector<double> latencies_ms;  // completed probes only, launch order
  std::size_t timed_out = 0;
  double p50 = 0.0;
  double p99 = 0.0;
  double mean = 0.0;
};

double percentile(std::vector<double> values, double p);

// Pushes a gradient to a fresh sentinel feature, then polls the owning slave
// until the served slot equals the expected post-update transform bit for
// bit. Latency is push-start to first visible pull. Probes overlap, so slow
// gather modes finish in wall time close to one gather period, not
// probes x period.
FreshnessResult measure_freshness(Cluster& cluster, const FreshnessOptions& opts);

struct FreshnessBenchEntry {
  std::string gather_mode;
  FreshnessResult result;
};

// Runs one topology per gather mode on the same workload and probe schedule.
// Background training keeps the threshold mode draining.
std::vector<FreshnessBenchEntry> run_freshness_bench(ClusterConfig base,
                                                     const FreshnessOptions& opts);

}  // namespace weips::harness
