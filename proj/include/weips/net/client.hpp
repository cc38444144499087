#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "weips/model/ops.hpp"
#include "weips/model/schema.hpp"
#include "weips/net/bus.hpp"
#include "weips/net/service.hpp"
#include "weips/scheduler/registry.hpp"
#include "weips/scheduler/shard_map.hpp"
#include "weips/slave/shard.hpp"
#include "weips/types.hpp"

namespace weips::net {

struct HealthInfo {
  Role role = Role::kMaster;
  std::string model_id;
  ShardId shard_id = 0;
  std::uint32_t replica_id = 0;
  std::uint64_t generation = 0;
  bool healthy = false;
  Version serving_version = 0;
  Epoch epoch = 0;
  std::uint64_t param_count = 0;
  bool sync_stalled = false;
};

struct PushResult {
  std::uint32_t applied = 0;
  std::uint32_t rejected = 0;
  Epoch epoch = 0;
};

struct ServingPull {
  Version version = 0;
  std::vector<std::pair<FeatureId, model::ParameterSlot>> slots;
};

// Typed request/response calls against one endpoint.
class ServiceClient {
 public:
  ServiceClient(Bus& bus, std::string endpoint, std::int64_t timeout_ms = 10'000)
      : bus_(&bus), endpoint_(std::move(endpoint)), timeout_ms_(timeout_ms) {}

  const std::string& endpoint() const { return endpoint_; }

  PushResult push_gradients(
      const std::string& model_id, ShardId shard,
      const std::vector<std::pair<FeatureId, model::GradientMap>>& updates);

  std::vector<std::pair<FeatureId, model::ParameterSlot>> pull_parameters(
      const std::string& model_id, ShardId shard, const std::vector<FeatureId>& ids);

  ServingPull pull_serving(const std::string& model_id, ShardId shard,
                           const std::vector<FeatureId>& ids);

  // Returns the manifest json.
  std::string save_checkpoint(const std::string& model_id, Version version,
                              const std::string& root, std::int64_t jitter_ms);

  std::uint64_t load_checkpoint(const std::string& model_id, const std::string& dir,
                                bool reannounce, bool force_sync);

  void load_version(const std::string& model_id, const std::string& dir,
                    Version version, slave::OffsetPolicy policy, bool catch_up);

  std::uint64_t force_sync(const std::string& model_id);

  std::vector<std::pair<FeatureId, model::ParameterSlot>> dump_table(
      const std::string& model_id);

  HealthInfo health(std::int64_t timeout_ms = 0);

  std::string status();

  // Scheduler endpoints only.
  Version trigger_checkpoint(const std::string& model_id, const std::string& dest);
  void switch_version(const std::string& model_id, Version version);
  Version rollback(const std::string& model_id, const std::string& strategy);

  void shutdown();
  void inject(const std::string& plan_json);

 private:
  Bus* bus_;
  std::string endpoint_;
  std::int64_t timeout_ms_;
};

// Registry access over the bus, for shards and tools running outside the
// registry's process.
class RemoteRegistry final : public registry::RegistryHandle {
 public:
  RemoteRegistry(Bus& bus, std::string endpoint, std::int64_t timeout_ms = 10'000)
      : bus_(&bus), endpoint_(std::move(endpoint)), timeout_ms_(timeout_ms) {}

  std::optional<registry::Entry> get(const std::string& key) override;
  std::optional<std::uint64_t> compare_and_set(const std::string& key,
                                               const std::string& value,
                                               std::uint64_t expected_version) override;
  bool erase(const std::string& key, std::uint64_t expected_version) override;
  std::vector<std::pair<std::string, registry::Entry>> list_prefix(
      const std::string& prefix) override;
  std::vector<registry::Change> poll(std::uint64_t after_seq,
                                     std::int64_t timeout_ms) override;

 private:
  Bus* bus_;
  std::string endpoint_;
  std::int64_t timeout_ms_;
};

// Client-side fan-out over the shard map: gradients and parameter pulls go to
// the owning master; serving pulls round-robin across a shard's replicas and
// fail over to the next replica, surfacing shard-down only when every replica
// refused.
class ModelClient {
 public:
  ModelClient(Bus& bus, std::string model_id, std::int64_t timeout_ms = 10'000);

  void set_shard_map(const scheduler::ShardMap& map);
  scheduler::ShardMap shard_map() const;

  // Loads "<model_id>/routing" from the registry.
  void refresh_routing(registry::RegistryHandle& registry);

  PushResult push(const std::vector<std::pair<FeatureId, model::GradientMap>>& updates);

  std::vector<std::pair<FeatureId, model::ParameterSlot>> pull(
      const std::vector<FeatureId>& ids);

  // Throws shard-down when a shard has no reachable healthy replica.
  ServingPull pull_serving(const std::vector<FeatureId>& ids);

  Version active_version() const;

 private:
  Bus* bus_;
  std::string model_id_;
  std::int64_t timeout_ms_;

  mutable std::mutex mu_;
  scheduler::ShardMap map_;
  std::unordered_map<ShardId, std::size_t> rr_next_;
};

}  // namespace weips::net
