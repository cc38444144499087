#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "weips/clock.hpp"
#include "weips/master/checkpoint.hpp"
#include "weips/master/collector.hpp"
#include "weips/model/ops.hpp"
#include "weips/model/schema.hpp"
#include "weips/plog/log.hpp"
#include "weips/plog/record.hpp"
#include "weips/types.hpp"

namespace weips::master {

enum class GatherMode : std::uint8_t { kRealtime = 0, kThreshold = 1, kPeriod = 2 };

const char* gather_mode_name(GatherMode m);
GatherMode gather_mode_from_name(const std::string& name);

struct GatherConfig {
  GatherMode mode = GatherMode::kRealtime;
  std::uint32_t threshold_count = 4096;  // distinct dirty ids
  std::int64_t period_ms = 10'000;
};

struct FilterPolicy {
  // Evict least-recently-touched entries until at most this many remain.
  std::optional<std::uint64_t> max_params;
  // Evict entries whose touched_epoch is at least this far behind the
  // current epoch.
  std::optional<Epoch> max_epoch_age;
};

struct PushAck {
  std::uint32_t applied = 0;
  std::uint32_t rejected = 0;
  Epoch epoch = 0;
};

struct MasterConfig {
  std::string model_id;
  ShardId shard_id = 0;
  std::uint32_t num_shards = 1;
  GatherConfig gather;
  std::size_t collector_capacity = std::size_t{1} << 20;
  std::int64_t sync_interval_ms = 2;
  int append_retries = 5;
  std::int64_t append_backoff_ms = 1;  // doubles per retry
};

// Training-side shard: owns the feature table for ids with id % num_shards ==
// shard_id, applies streamed gradients, and emits full-value serving records
// to its log partition through a collector/gather/pusher pipeline.
class MasterShard {
 public:
  MasterShard(MasterConfig cfg, model::ModelSchema schema,
              std::shared_ptr<plog::PartitionedLog> log,
              std::shared_ptr<Clock> clock);
  ~MasterShard();

  MasterShard(const MasterShard&) = delete;
  MasterShard& operator=(const MasterShard&) = delete;

  // Applies one summed gradient per id. Ids must be owned by this shard.
  // Non-finite results reject that id's update and leave its slot unchanged.
  PushAck push_gradients(
      const std::vector<std::pair<FeatureId, model::GradientMap>>& updates);

  // Training-view slots; absent ids come back zero-initialized.
  std::vector<std::pair<FeatureId, model::ParameterSlot>> pull_parameters(
      const std::vector<FeatureId>& ids) const;

  // Background pusher loop control.
  void start_sync();
  void stop_sync();

  // One drain+gather step; emits when the mode fires. Returns the number of
  // records appended (0 when the mode held back or nothing was pending).
  std::size_t sync_pass();

  // Emits everything pending regardless of mode. Used for quiesce.
  std::size_t force_sync();

  // Evicts stale features and emits delete records for them.
  std::vector<FeatureId> filter_features(const FilterPolicy& policy);

  // Snapshot protocol: under the table lock, drains the collector and
  // force-emits pending records, then captures the table and all partition
  // tails; the body is serialized and fsynced outside the lock. The snapshot
  // therefore equals a fold of the log prefixes at the recorded offsets.
  ckpt::CheckpointMeta save_checkpoint(Version version, const std::string& root,
                                       std::int64_t jitter_ms = 0);

  // Replaces the table with this shard's slice of the version (re-routed by
  // current num_shards) and re-announces every loaded id to the log.
  void restore_from_checkpoint(const std::string& dir, bool reannounce = true);

  struct Stats {
    std::uint64_t enqueued = 0;
    std::uint64_t drained = 0;
    std::uint64_t emitted_records = 0;
    std::uint64_t emitted_batches = 0;
    std::uint64_t rejected_updates = 0;
    std::uint64_t filtered_features = 0;
    std::uint64_t backpressure_waits = 0;
    Epoch epoch = 0;
    std::uint64_t param_count = 0;
    bool sync_stalled = false;
  };
  Stats stats() const;

  std::vector<std::pair<FeatureId, model::ParameterSlot>> dump_table() const;

  const model::ModelSchema& schema() const { return schema_; }
  const MasterConfig& config() const { return cfg_; }
  ShardId shard_id() const { return cfg_.shard_id; }
  PartitionId partition() const { return partition_; }
  Epoch epoch() const;
  std::uint64_t param_count() const;
  bool sync_stalled() const { return sync_stalled_.load(std::memory_order_relaxed); }

 private:
  struct SlotEntry {
    model::ParameterSlot slot;
    Epoch touched_epoch = 0;
  };

  void validate_ownership(FeatureId id) const;
  // Drains the collector into pending_ (last-op-wins). Caller holds sync_mu_.
  std::size_t drain_into_pending();
  bool mode_fires_locked(std::int64_t now_ms) const;
  // Materializes full-value records for pending ids from the live table.
  // Caller holds sync_mu_; table_locked says whether table_mu_ is already
  // held exclusively by this thread.
  std::vector<plog::UpdateRecord> materialize_pending(bool table_locked);
  // Appends with bounded retry; on success clears pending. Returns records
  // appended, 0 after exhausted retries (pending retained, sync_stalled set).
  std::size_t emit_locked(std::vector<plog::UpdateRecord> records);
  std::size_t sync_pass_internal(bool force, bool table_locked);

  MasterConfig cfg_;
  model::ModelSchema schema_;
  std::shared_ptr<plog::PartitionedLog> log_;
  std::shared_ptr<Clock> clock_;
  PartitionId partition_ = 0;

  mutable std::shared_mutex table_mu_;
  std::unordered_map<FeatureId, SlotEntry> table_;
  Epoch epoch_ = 0;

  Collector collector_;

  // Single-consumer gather state.
  std::mutex sync_mu_;
  std::unordered_map<FeatureId, UpdateOp> pending_op_;
  std::vector<FeatureId> pending_order_;
  std::int64_t last_emit_ms_ = 0;
  std::vector<DirtyEntry> drain_buf_;

  std::atomic<bool> sync_stalled_{false};
  std::atomic<std::uint64_t> emitted_records_{0};
  std::atomic<std::uint64_t> emitted_batches_{0};
  std::atomic<std::uint64_t> rejected_updates_{0};
  std::atomic<std::uint64_t> filtered_features_{0};

  std::thread pusher_;
  std::atomic<bool> stop_pusher_{false};
};

}  // namespace weips::master
