#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "weips/clock.hpp"
#include "weips/model/schema.hpp"
#include "weips/plog/log.hpp"
#include "weips/plog/record.hpp"
#include "weips/types.hpp"

namespace weips::slave {

struct SlaveConfig {
  std::string model_id;
  ShardId shard_id = 0;
  std::uint32_t num_shards = 1;
  std::uint32_t replica_id = 0;
  std::size_t scatter_batch = 4096;  // max records per partition per step
  std::int64_t scatter_interval_ms = 1;
};

// Where consumption resumes after load_version. kReplayFromVersion rewinds
// to the version's safe replay offsets (bootstrap, hot switch while the log
// suffix is trusted). kSkipToTail jumps to the current tails, discarding the
// backlog; used for rollback, where masters re-announce the restored state.
enum class OffsetPolicy : std::uint8_t {
  kReplayFromVersion = 0,
  kSkipToTail = 1,
};

// Serving-side shard replica. Consumes every log partition from its consumed
// offsets, applies records whose ids it owns (id % num_shards == shard_id),
// and answers lookups with serving-view slots. Replicas of the same shard run
// this independently and converge because record application is a pure fold.
class SlaveShard {
 public:
  SlaveShard(SlaveConfig cfg, model::ModelSchema schema,
             std::shared_ptr<plog::PartitionedLog> log,
             std::shared_ptr<Clock> clock);
  ~SlaveShard();

  SlaveShard(const SlaveShard&) = delete;
  SlaveShard& operator=(const SlaveShard&) = delete;

  void start_scatter();
  void stop_scatter();

  // One sweep over all partitions. Returns records applied (upserts plus
  // deletes); offsets advance past skipped records too.
  std::size_t scatter_step();

  // Scatters until every partition has reached the tail observed at entry.
  void catch_up_to_tails();

  // Serving-view lookup. Absent ids come back zero-initialized. Throws
  // unavailable while the replica is marked unhealthy, routing on foreign ids.
  std::vector<std::pair<FeatureId, model::ParameterSlot>> pull_serving(
      const std::vector<FeatureId>& ids) const;

  // Replaces the table with this shard's slice of a master checkpoint
  // (training slots projected to serving view) and repositions consumed
  // offsets per the policy.
  void load_version(const std::string& version_dir, Version version,
                    OffsetPolicy policy = OffsetPolicy::kReplayFromVersion);

  void set_healthy(bool healthy) { healthy_.store(healthy, std::memory_order_relaxed); }
  bool healthy() const { return healthy_.load(std::memory_order_relaxed); }

  // Called after each applied record, before the table lock is released.
  void set_apply_hook(std::function<void(const plog::UpdateRecord&)> hook);

  struct Stats {
    std::uint64_t applied_upserts = 0;
    std::uint64_t applied_deletes = 0;
    std::uint64_t skipped_unowned = 0;
    std::uint64_t skipped_other_model = 0;
    std::uint64_t quarantined = 0;
    std::uint64_t param_count = 0;
    Version version = 0;
    bool healthy = true;
    std::map<PartitionId, Offset> consumed_offsets;
  };
  Stats stats() const;

  std::vector<std::pair<FeatureId, model::ParameterSlot>> dump_table() const;

  Version serving_version() const { return version_.load(std::memory_order_relaxed); }
  const SlaveConfig& config() const { return cfg_; }
  const model::ModelSchema& schema() const { return schema_; }

 private:
  void validate_ownership(FeatureId id) const;
  std::size_t apply_batch(const std::vector<plog::LogEntry>& entries,
                          PartitionId partition);

  SlaveConfig cfg_;
  model::ModelSchema schema_;
  std::shared_ptr<plog::PartitionedLog> log_;
  std::shared_ptr<Clock> clock_;

  mutable std::shared_mutex table_mu_;
  std::unordered_map<FeatureId, model::ParameterSlot> table_;
  std::vector<Offset> consumed_;  // per partition

  std::mutex scatter_mu_;  // serializes scatter_step/load_version sweeps

  std::atomic<bool> healthy_{true};
  std::atomic<Version> version_{0};
  std::atomic<std::uint64_t> applied_upserts_{0};
  std::atomic<std::uint64_t> applied_deletes_{0};
  std::atomic<std::uint64_t> skipped_unowned_{0};
  std::atomic<std::uint64_t> skipped_other_model_{0};
  std::atomic<std::uint64_t> quarantined_{0};

  std::function<void(const plog::UpdateRecord&)> apply_hook_;

  std::thread puller_;
  std::atomic<bool> stop_puller_{false};
};

}  // namespace weips::slave
