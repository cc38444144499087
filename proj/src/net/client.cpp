#include "weips/net/client.hpp"

#include <algorithm>

#include "weips/model/slot_codec.hpp"
#include "weips/net/wire.hpp"

namespace weips::net {

namespace {

std::vector<std::pair<FeatureId, model::ParameterSlot>> read_slots(BinaryReader& r) {
  const std::uint32_t count = r.u32();
  std::vector<std::pair<FeatureId, model::ParameterSlot>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureId id = r.u64();
    out.emplace_back(id, model::decode_slot(r));
  }
  return out;
}

}  // namespace

PushResult ServiceClient::push_gradients(
    const std::string& model_id, ShardId shard,
    const std::vector<std::pair<FeatureId, model::GradientMap>>& updates) {
  auto req = make_request(MsgType::kPushGrad, [&](BinaryWriter& w) {
    w.str(model_id);
    w.u32(shard);
    w.u32(static_cast<std::uint32_t>(updates.size()));
    for (const auto& [id, gm] : updates) {
      w.u64(id);
      w.u32(static_cast<std::uint32_t>(gm.size()));
      for (const auto& [name, grad] : gm) {
        w.str(name);
        w.f64_vec(grad);
      }
    }
  });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  PushResult out;
  out.applied = r.u32();
  out.rejected = r.u32();
  out.epoch = r.u64();
  return out;
}

std::vector<std::pair<FeatureId, model::ParameterSlot>>
ServiceClient::pull_parameters(const std::string& model_id, ShardId shard,
                               const std::vector<FeatureId>& ids) {
  auto req = make_request(MsgType::kPullParams, [&](BinaryWriter& w) {
    w.str(model_id);
    w.u32(shard);
    w.u32(static_cast<std::uint32_t>(ids.size()));
    for (FeatureId id : ids) w.u64(id);
  });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  return read_slots(r);
}

ServingPull ServiceClient::pull_serving(const std::string& model_id, ShardId shard,
                                        const std::vector<FeatureId>& ids) {
  auto req = make_request(MsgType::kPullServing, [&](BinaryWriter& w) {
    w.str(model_id);
    w.u32(shard);
    w.u32(static_cast<std::uint32_t>(ids.size()));
    for (FeatureId id : ids) w.u64(id);
  });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  ServingPull out;
  out.version = r.u64();
  out.slots = read_slots(r);
  return out;
}

std::string ServiceClient::save_checkpoint(const std::string& model_id,
                                           Version version, const std::string& root,
                                           std::int64_t jitter_ms) {
  auto req = make_request(MsgType::kSaveCkpt, [&](BinaryWriter& w) {
    w.str(model_id);
    w.u64(version);
    w.str(root);
    w.i64(jitter_ms);
  });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  return r.str();
}

std::uint64_t ServiceClient::load_checkpoint(const std::string& model_id,
                                             const std::string& dir, bool reannounce,
                                             bool force_sync) {
  auto req = make_request(MsgType::kLoadCkpt, [&](BinaryWriter& w) {
    w.str(model_id);
    w.str(dir);
    w.u8(reannounce ? 1 : 0);
    w.u8(force_sync ? 1 : 0);
  });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  return r.u64();
}

void ServiceClient::load_version(const std::string& model_id, const std::string& dir,
                                 Version version, slave::OffsetPolicy policy,
                                 bool catch_up) {
  auto req = make_request(MsgType::kLoadVersion, [&](BinaryWriter& w) {
    w.str(model_id);
    w.str(dir);
    w.u64(version);
    w.u8(static_cast<std::uint8_t>(policy));
    w.u8(catch_up ? 1 : 0);
  });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  open_response(resp);
}

std::uint64_t ServiceClient::force_sync(const std::string& model_id) {
  auto req = make_request(MsgType::kForceSync,
                          [&](BinaryWriter& w) { w.str(model_id); });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  return r.u64();
}

std::vector<std::pair<FeatureId, model::ParameterSlot>> ServiceClient::dump_table(
    const std::string& model_id) {
  auto req = make_request(MsgType::kDumpTable,
                          [&](BinaryWriter& w) { w.str(model_id); });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  return read_slots(r);
}

HealthInfo ServiceClient::health(std::int64_t timeout_ms) {
  auto req = make_request(MsgType::kHealth);
  auto resp =
      bus_->call(endpoint_, req, timeout_ms > 0 ? timeout_ms : timeout_ms_);
  BinaryReader r = open_response(resp);
  HealthInfo info;
  info.role = static_cast<Role>(r.u8());
  info.model_id = r.str();
  info.shard_id = r.u32();
  info.replica_id = r.u32();
  info.generation = r.u64();
  info.healthy = r.u8() != 0;
  info.serving_version = r.u64();
  info.epoch = r.u64();
  info.param_count = r.u64();
  info.sync_stalled = r.u8() != 0;
  return info;
}

std::string ServiceClient::status() {
  auto req = make_request(MsgType::kStatus);
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  return r.str();
}

Version ServiceClient::trigger_checkpoint(const std::string& model_id,
                                          const std::string& dest) {
  auto req = make_request(MsgType::kTriggerCkpt, [&](BinaryWriter& w) {
    w.str(model_id);
    w.str(dest);
  });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  return r.u64();
}

void ServiceClient::switch_version(const std::string& model_id, Version version) {
  auto req = make_request(MsgType::kSwitchVersion, [&](BinaryWriter& w) {
    w.str(model_id);
    w.u64(version);
  });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  open_response(resp);
}

Version ServiceClient::rollback(const std::string& model_id,
                                const std::string& strategy) {
  auto req = make_request(MsgType::kRollback, [&](BinaryWriter& w) {
    w.str(model_id);
    w.str(strategy);
  });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  return r.u64();
}

void ServiceClient::shutdown() {
  auto req = make_request(MsgType::kShutdown);
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  open_response(resp);
}

void ServiceClient::inject(const std::string& plan_json) {
  auto req =
      make_request(MsgType::kInject, [&](BinaryWriter& w) { w.str(plan_json); });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  open_response(resp);
}

std::optional<registry::Entry> RemoteRegistry::get(const std::string& key) {
  auto req = make_request(MsgType::kRegGet, [&](BinaryWriter& w) { w.str(key); });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  const bool found = r.u8() != 0;
  registry::Entry e;
  e.value = r.str();
  e.cas_version = r.u64();
  if (!found) return std::nullopt;
  return e;
}

std::optional<std::uint64_t> RemoteRegistry::compare_and_set(
    const std::string& key, const std::string& value,
    std::uint64_t expected_version) {
  auto req = make_request(MsgType::kRegCas, [&](BinaryWriter& w) {
    w.str(key);
    w.str(value);
    w.u64(expected_version);
    w.u8(0);
  });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  const bool ok = r.u8() != 0;
  const std::uint64_t version = r.u64();
  if (!ok) return std::nullopt;
  return version;
}

bool RemoteRegistry::erase(const std::string& key, std::uint64_t expected_version) {
  auto req = make_request(MsgType::kRegCas, [&](BinaryWriter& w) {
    w.str(key);
    w.str("");
    w.u64(expected_version);
    w.u8(1);
  });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  return r.u8() != 0;
}

std::vector<std::pair<std::string, registry::Entry>> RemoteRegistry::list_prefix(
    const std::string& prefix) {
  auto req =
      make_request(MsgType::kRegList, [&](BinaryWriter& w) { w.str(prefix); });
  auto resp = bus_->call(endpoint_, req, timeout_ms_);
  BinaryReader r = open_response(resp);
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, registry::Entry>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string key = r.str();
    registry::Entry e;
    e.value = r.str();
    e.cas_version = r.u64();
    out.emplace_back(std::move(key), std::move(e));
  }
  return out;
}

std::vector<registry::Change> RemoteRegistry::poll(std::uint64_t after_seq,
                                                   std::int64_t timeout_ms) {
  auto req = make_request(MsgType::kRegPoll, [&](BinaryWriter& w) {
    w.u64(after_seq);
    w.i64(timeout_ms);
  });
  // The server may block for the full poll window; allow for it.
  auto resp = bus_->call(endpoint_, req, timeout_ms_ + timeout_ms);
  BinaryReader r = open_response(resp);
  const std::uint32_t count = r.u32();
  std::vector<registry::Change> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    registry::Change c;
    c.seq = r.u64();
    c.key = r.str();
    c.value = r.str();
    c.cas_version = r.u64();
    c.deleted = r.u8() != 0;
    out.push_back(std::move(c));
  }
  return out;
}

ModelClient::ModelClient(Bus& bus, std::string model_id, std::int64_t timeout_ms)
    : bus_(&bus), model_id_(std::move(model_id)), timeout_ms_(timeout_ms) {}

void ModelClient::set_shard_map(const scheduler::ShardMap& map) {
  std::lock_guard lock(mu_);
  map_ = map;
}

scheduler::ShardMap ModelClient::shard_map() const {
  std::lock_guard lock(mu_);
  return map_;
}

void ModelClient::refresh_routing(registry::RegistryHandle& registry) {
  auto entry = registry.get(scheduler::ShardMap::routing_key(model_id_));
  if (!entry)
    throw Error(ErrorCode::kNotFound, "no routing for model " + model_id_);
  set_shard_map(scheduler::ShardMap::from_json(entry->value));
}

Version ModelClient::active_version() const {
  std::lock_guard lock(mu_);
  return map_.active_version;
}

PushResult ModelClient::push(
    const std::vector<std::pair<FeatureId, model::GradientMap>>& updates) {
  scheduler::ShardMap map = shard_map();
  if (map.num_master_shards == 0)
    throw Error(ErrorCode::kUnavailable, "no masters in shard map");
  std::unordered_map<ShardId, std::vector<std::pair<FeatureId, model::GradientMap>>>
      by_shard;
  for (const auto& u : updates)
    by_shard[owner_shard(u.first, map.num_master_shards)].push_back(u);
  PushResult total;
  for (auto& [shard, batch] : by_shard) {
    auto it = map.masters.find(shard);
    if (it == map.masters.end())
      throw Error(ErrorCode::kUnavailable,
                  "no master for shard " + std::to_string(shard));
    ServiceClient client(*bus_, it->second, timeout_ms_);
    auto ack = client.push_gradients(model_id_, shard, batch);
    total.applied += ack.applied;
    total.rejected += ack.rejected;
    total.epoch = std::max(total.epoch, ack.epoch);
  }
  return total;
}

std::vector<std::pair<FeatureId, model::ParameterSlot>> ModelClient::pull(
    const std::vector<FeatureId>& ids) {
  scheduler::ShardMap map = shard_map();
  if (map.num_master_shards == 0)
    throw Error(ErrorCode::kUnavailable, "no masters in shard map");
  std::unordered_map<ShardId, std::vector<FeatureId>> by_shard;
  for (FeatureId id : ids) by_shard[owner_shard(id, map.num_master_shards)].push_back(id);
  std::vector<std::pair<FeatureId, model::ParameterSlot>> out;
  out.reserve(ids.size());
  for (auto& [shard, batch] : by_shard) {
    auto it = map.masters.find(shard);
    if (it == map.masters.end())
      throw Error(ErrorCode::kUnavailable,
                  "no master for shard " + std::to_string(shard));
    ServiceClient client(*bus_, it->second, timeout_ms_);
    auto slots = client.pull_parameters(model_id_, shard, batch);
    out.insert(out.end(), std::make_move_iterator(slots.begin()),
               std::make_move_iterator(slots.end()));
  }
  return out;
}

ServingPull ModelClient::pull_serving(const std::vector<FeatureId>& ids) {
  scheduler::ShardMap map = shard_map();
  if (map.num_slave_shards == 0)
    throw Error(ErrorCode::kShardDown, "no slaves in shard map");
  std::unordered_map<ShardId, std::vector<FeatureId>> by_shard;
  for (FeatureId id : ids) by_shard[owner_shard(id, map.num_slave_shards)].push_back(id);

  ServingPull out;
  for (auto& [shard, batch] : by_shard) {
    auto it = map.slaves.find(shard);
    if (it == map.slaves.end() || it->second.empty())
      throw Error(ErrorCode::kShardDown,
                  "no replicas for slave shard " + std::to_string(shard));
    const auto& replicas = it->second;
    std::size_t start;
    {
      std::lock_guard lock(mu_);
      start = rr_next_[shard]++ % replicas.size();
    }
    bool served = false;
    std::string last_error;
    for (std::size_t i = 0; i < replicas.size() && !served; ++i) {
      const std::string& ep = replicas[(start + i) % replicas.size()];
      try {
        ServiceClient client(*bus_, ep, timeout_ms_);
        auto pulled = client.pull_serving(model_id_, shard, batch);
        out.version = std::max(out.version, pulled.version);
        out.slots.insert(out.slots.end(),
                         std::make_move_iterator(pulled.slots.begin()),
                         std::make_move_iterator(pulled.slots.end()));
        served = true;
      } catch (const Error& e) {
        last_error = e.what();
      }
    }
    if (!served)
      throw Error(ErrorCode::kShardDown,
                  "all replicas failed for slave shard " + std::to_string(shard) +
                      ": " + last_error);
  }
  return out;
}

}  // namespace weips::net
