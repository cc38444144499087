#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "weips/clock.hpp"
#include "weips/monitor/metrics.hpp"
#include "weips/net/bus.hpp"
#include "weips/net/client.hpp"
#include "weips/rng.hpp"
#include "weips/scheduler/registry.hpp"
#include "weips/scheduler/shard_map.hpp"
#include "weips/types.hpp"

namespace weips::scheduler {

struct SchedulerConfig {
  std::string model_id;
  std::int64_t probe_interval_ms = 500;
  int probe_miss_limit = 3;
  // 0 disables the corresponding periodic trigger.
  std::int64_t ckpt_local_interval_ms = 0;
  std::int64_t ckpt_remote_interval_ms = 0;
  double ckpt_jitter_frac = 0.2;
  std::string ckpt_root_local;
  std::string ckpt_root_remote;
  std::uint32_t min_slave_replicas = 1;
  monitor::VersionStrategy rollback_strategy = monitor::VersionStrategy::kLatest;
  std::uint64_t rng_seed = 1;
  bool auto_failover = true;
  std::int64_t call_timeout_ms = 30'000;
};

struct Event {
  std::int64_t at_ms = 0;
  std::string kind;
  std::string detail;
};

// Brings up replacement shards. The single-process harness constructs a new
// shard object and registers its bus endpoint; the multi-process harness
// spawns a worker process. Returns the endpoint once it answers health.
class Spawner {
 public:
  virtual ~Spawner() = default;
  virtual std::string respawn_master(ShardId shard, std::uint64_t generation) = 0;
  virtual std::string respawn_slave(ShardId shard, std::uint32_t replica,
                                    std::uint64_t generation) = 0;
};

// Stateless control plane: every durable fact lives in the registry (shard
// registrations, routing, published versions), so a restarted scheduler
// resumes from registry state alone. Probes double as heartbeats: a shard is
// healthy while its endpoint keeps answering HEALTH with the expected
// generation within the miss budget.
class Scheduler {
 public:
  Scheduler(SchedulerConfig cfg, std::shared_ptr<registry::RegistryHandle> registry,
            std::shared_ptr<net::Bus> bus, std::shared_ptr<Clock> clock,
            Spawner* spawner = nullptr);
  ~Scheduler();

  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;

  // Registration helpers used at cluster bootstrap and by supervisors.
  void register_master(ShardId shard, const std::string& endpoint,
                       std::uint64_t generation);
  void register_slave(ShardId shard, std::uint32_t replica,
                      const std::string& endpoint, std::uint64_t generation);

  // Probes registered shards and publishes the initial routing document.
  void initialize_routing(std::uint32_t num_master_shards,
                          std::uint32_t num_slave_shards);

  void start();
  void stop();

  // One control iteration: refresh registrations, probe everything, handle
  // miss-limit transitions, fire due checkpoint timers.
  void step();

  // Saves a coordinated checkpoint on every master (parallel, jittered) and
  // publishes the version only when every shard succeeded.
  Version trigger_checkpoint_round(const std::string& dest);

  // Points serving at an already published version, loading one replica at a
  // time so the shard keeps serving throughout. No-op when already active.
  void switch_serving_version(Version version);

  // Reverts training and serving to a published version. Callers stop the
  // gradient stream first. Slaves jump their consumption to the log tails,
  // masters restore and re-announce, slaves then catch up, so both sides
  // converge exactly to the checkpoint state.
  Version rollback(monitor::VersionStrategy strategy);

  // Attaches a quality metric to a published version; feeds best-metric
  // rollback selection.
  void record_version_metric(Version version, double mean_logloss);

  void failover_master(ShardId shard);
  void failover_slave(ShardId shard, std::uint32_t replica);

  ShardMap current_map() const;
  std::vector<Event> events() const;
  std::optional<Version> latest_version() const;
  std::vector<monitor::VersionCandidate> version_candidates() const;
  Version active_version() const;
  const SchedulerConfig& config() const { return cfg_; }

  struct ProbeState {
    std::string endpoint;
    std::uint64_t generation = 0;
    int misses = 0;
    bool healthy = true;
  };
  std::map<std::string, ProbeState> probe_states() const;

 private:
  struct Registration {
    std::string endpoint;
    std::uint64_t generation = 0;
    net::Role role = net::Role::kMaster;
    ShardId shard = 0;
    std::uint32_t replica = 0;
  };

  void add_event(const std::string& kind, const std::string& detail);
  std::vector<Registration> registrations() const;
  std::string version_dir_for(Version version) const;
  std::optional<std::string> version_doc(Version version) const;
  void publish_routing_update(const std::function<void(ShardMap&)>& mutate);
  void handle_unhealthy(const Registration& reg);
  std::int64_t jitter_for(std::int64_t interval_ms);

  SchedulerConfig cfg_;
  std::shared_ptr<registry::RegistryHandle> registry_;
  std::shared_ptr<net::Bus> bus_;
  std::shared_ptr<Clock> clock_;
  Spawner* spawner_;

  mutable std::mutex mu_;
  Rng rng_;
  std::map<std::string, ProbeState> probes_;
  std::vector<Event> events_;
  std::int64_t next_local_ckpt_ms_ = 0;
  std::int64_t next_remote_ckpt_ms_ = 0;
  std::uint64_t next_version_hint_ = 1;

  std::mutex control_mu_;  // serializes checkpoint/switch/rollback/failover

  std::thread loop_;
  std::atomic<bool> stop_{false};
};

// Exposes TRIGGER_CKPT, SWITCH_VERSION, ROLLBACK, STATUS and HEALTH.
net::Handler make_scheduler_handler(std::shared_ptr<Scheduler> scheduler);

}  // namespace weips::scheduler
