#pragma once

#include <cstdint>
#include <string>

#include "weips/harness/workload.hpp"
#include "weips/master/shard.hpp"
#include "weips/model/schema.hpp"
#include "weips/monitor/metrics.hpp"

namespace weips::harness {

// Everything a run needs, loadable from one JSON file. configs/example.json
// in the repo shows every field with comments in the README.
struct ClusterConfig {
  std::string model_id = "ctr";
  std::string model_kind = "lr_ftrl";  // lr_ftrl | fm_sgd
  model::HyperParams hp{};

  std::uint32_t num_masters = 4;
  std::uint32_t num_slaves = 8;
  std::uint32_t slave_replicas = 2;
  std::uint32_t num_partitions = 4;

  std::string gather_mode = "realtime";  // realtime | threshold | period
  std::uint32_t gather_threshold = 4096;
  std::int64_t gather_period_ms = 10'000;
  std::int64_t sync_interval_ms = 1;
  std::int64_t scatter_interval_ms = 1;
  std::uint64_t collector_capacity = std::uint64_t{1} << 20;

  // Root for logs, checkpoints and reports. Empty means a fresh directory
  // under the system temp root.
  std::string work_dir;
  bool file_log = false;  // false keeps the log in memory
  bool compress_log = true;

  std::int64_t probe_interval_ms = 200;
  int probe_miss_limit = 3;
  std::int64_t ckpt_local_interval_ms = 0;   // 0 disables the timer
  std::int64_t ckpt_remote_interval_ms = 0;
  double ckpt_jitter_frac = 0.2;
  std::uint32_t min_slave_replicas = 1;
  std::string rollback_strategy = "latest";  // latest | best_metric

  monitor::MonitorConfig monitor{};

  std::uint32_t trainers = 1;
  std::uint32_t batch_size = 64;
  WorkloadSpec workload{};

  // Run-level behavior for `weips run`.
  std::uint64_t checkpoint_every_samples = 0;  // 0 = no sample-driven cuts
  bool rollback_on_degrade = false;
  std::string mode = "local";  // local | multiproc
  std::uint64_t seed = 1;

  void validate() const;
  model::ModelSchema schema() const;
  master::GatherConfig gather() const;

  std::string to_json() const;
  static ClusterConfig from_json(const std::string& text);
  static ClusterConfig load_file(const std::string& path);
  void save_file(const std::string& path) const;
};

// A small topology with every feature exercised; written by `weips init-config`.
ClusterConfig example_config();

}  // namespace weips::harness
