#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "weips/clock.hpp"
#include "weips/harness/config.hpp"
#include "weips/harness/fault_plan.hpp"
#include "weips/harness/workload.hpp"
#include "weips/master/shard.hpp"
#include "weips/monitor/metrics.hpp"
#include "weips/net/bus.hpp"
#include "weips/net/client.hpp"
#include "weips/plog/log.hpp"
#include "weips/scheduler/registry.hpp"
#include "weips/scheduler/scheduler.hpp"
#include "weips/slave/shard.hpp"

namespace weips::harness {

struct TrainOptions {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;  // exclusive sample index
  bool validate = true;   // feed predict-before-update into the validator
  std::uint64_t checkpoint_every = 0;  // samples between version cuts, 0 = off
  std::string checkpoint_dest = "local";
  bool stop_on_downgrade = false;
  std::uint64_t throttle_samples_per_sec = 0;
  const FaultPlan* faults = nullptr;
  // When set, training winds down as soon as the flag turns true.
  const std::atomic<bool>* external_stop = nullptr;
};

struct TrainResult {
  std::uint64_t samples = 0;
  std::uint64_t applied = 0;
  std::uint64_t rejected = 0;
  std::vector<Version> versions_cut;
  bool downgrade_triggered = false;
  std::uint64_t trigger_sample = 0;  // observed count when the trigger fired
  monitor::DowngradeDecision decision{};
};

// Sentinel probe ids live far above any workload vocabulary so freshness
// probes never collide with trained features.
inline constexpr FeatureId kSentinelBase = FeatureId{1} << 32;

// Single-process topology: masters, slave replicas, registry, scheduler and
// trainers share one bus. Components still talk only through bus frames and
// the log, so every protocol path is the same one the multi-process mode uses.
class Cluster final : public scheduler::Spawner {
 public:
  explicit Cluster(ClusterConfig cfg,
                   std::shared_ptr<Clock> clock = std::make_shared<WallClock>());
  ~Cluster() override;

  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  void start();
  void stop();

  TrainResult train(const TrainOptions& opts);

  // Stops nothing but flushes everything: masters force-emit pending records,
  // slaves consume to the tails. Call with trainers idle.
  void quiesce();

  // Exact serving oracle: every replica's table must equal the serving
  // transform of the master union restricted to the ids that shard owns.
  // Slot payloads are compared bit for bit.
  bool serving_consistent(std::string* detail = nullptr);

  // Fault injection.
  void kill_master(ShardId shard);
  void kill_slave(ShardId shard, std::uint32_t replica);
  void stall_log(PartitionId partition, std::int64_t duration_ms);
  std::string corrupt_checkpoint(Version version, ShardId shard);
  void apply_fault(const FaultStep& step);

  // Spawner contract: build the replacement shard and its endpoint; the
  // scheduler restores state and republishes routing afterwards.
  std::string respawn_master(ShardId shard, std::uint64_t generation) override;
  std::string respawn_slave(ShardId shard, std::uint32_t replica,
                            std::uint64_t generation) override;

  // Component access for tests and tooling.
  scheduler::Scheduler& sched() { return *scheduler_; }
  std::shared_ptr<scheduler::Scheduler> sched_ptr() { return scheduler_; }
  net::ModelClient& client() { return *client_; }
  monitor::ProgressiveValidator& validator() { return *validator_; }
  std::shared_ptr<registry::RegistryHandle> registry() { return registry_; }
  net::LocalBus& bus() { return *bus_; }
  plog::PartitionedLog& log() { return *log_; }
  plog::FaultyLog& faulty_log() { return *faulty_; }
  const Workload& workload() const { return *workload_; }
  const ClusterConfig& config() const { return cfg_; }
  const std::string& work_dir() const { return work_dir_; }
  std::string version_dir(Version version) const;

  std::shared_ptr<master::MasterShard> master(ShardId shard);
  std::shared_ptr<slave::SlaveShard> slave(ShardId shard, std::uint32_t replica);
  std::vector<std::pair<FeatureId, model::ParameterSlot>> master_union();

  // Fresh probe id, unique across the cluster's lifetime.
  FeatureId next_sentinel_id();

  struct TimelineEvent {
    std::int64_t at_ms = 0;
    std::string kind;
    std::string detail;
  };
  void record_event(const std::string& kind, const std::string& detail);
  std::vector<TimelineEvent> timeline() const;  // cluster + scheduler events

  Version cut_version(const std::string& dest = "local");

 private:
  std::string master_endpoint(ShardId shard, std::uint64_t generation) const;
  std::string slave_endpoint(ShardId shard, std::uint32_t replica,
                             std::uint64_t generation) const;
  std::shared_ptr<master::MasterShard> make_master(ShardId shard);
  std::shared_ptr<slave::SlaveShard> make_slave(ShardId shard,
                                                std::uint32_t replica);
  void publish_window_metric(const monitor::WindowMetrics& wm);

  ClusterConfig cfg_;
  std::shared_ptr<Clock> clock_;
  model::ModelSchema schema_;
  std::string work_dir_;
  bool owns_work_dir_ = false;

  std::shared_ptr<net::LocalBus> bus_;
  std::shared_ptr<plog::FaultyLog> faulty_;
  std::shared_ptr<plog::PartitionedLog> log_;
  std::shared_ptr<registry::RegistryCore> registry_core_;
  std::shared_ptr<registry::RegistryHandle> registry_;
  std::shared_ptr<scheduler::Scheduler> scheduler_;
  std::unique_ptr<net::ModelClient> client_;
  std::unique_ptr<monitor::ProgressiveValidator> validator_;
  std::unique_ptr<Workload> workload_;

  mutable std::mutex comp_mu_;
  std::vector<std::shared_ptr<master::MasterShard>> masters_;
  std::vector<std::uint64_t> master_gen_;
  std::vector<std::vector<std::shared_ptr<slave::SlaveShard>>> slaves_;
  std::vector<std::vector<std::uint64_t>> slave_gen_;

  mutable std::mutex events_mu_;
  std::vector<TimelineEvent> events_;

  std::atomic<FeatureId> next_sentinel_{kSentinelBase};
  std::atomic<std::uint64_t> published_windows_{0};
  bool started_ = false;
};

// Sorted-table comparison for the consistency oracles; slots compare bit for
// bit via model::bitwise_equal.
bool tables_bitwise_equal(
    const std::vector<std::pair<FeatureId, model::ParameterSlot>>& a,
    const std::vector<std::pair<FeatureId, model::ParameterSlot>>& b,
    std::string* detail = nullptr);

}  // namespace weips::harness
