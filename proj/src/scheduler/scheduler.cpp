#include "weips/scheduler/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "weips/error.hpp"
#include "weips/master/checkpoint.hpp"
#include "weips/net/wire.hpp"

namespace weips::scheduler {

namespace {

std::string reg_doc(const std::string& endpoint, std::uint64_t generation) {
  nlohmann::json j;
  j["endpoint"] = endpoint;
  j["generation"] = generation;
  return j.dump();
}

void parse_reg_doc(const std::string& text, std::string& endpoint,
                   std::uint64_t& generation) {
  nlohmann::json j = nlohmann::json::parse(text);
  endpoint = j.at("endpoint").get<std::string>();
  generation = j.at("generation").get<std::uint64_t>();
}

}  // namespace

Scheduler::Scheduler(SchedulerConfig cfg,
                     std::shared_ptr<registry::RegistryHandle> registry,
                     std::shared_ptr<net::Bus> bus, std::shared_ptr<Clock> clock,
                     Spawner* spawner)
    : cfg_(std::move(cfg)),
      registry_(std::move(registry)),
      bus_(std::move(bus)),
      clock_(std::move(clock)),
      spawner_(spawner),
      rng_(cfg_.rng_seed) {
  if (cfg_.probe_interval_ms <= 0)
    throw Error(ErrorCode::kInvalidArgument, "probe_interval_ms must be positive");
  if (cfg_.probe_miss_limit <= 0)
    throw Error(ErrorCode::kInvalidArgument, "probe_miss_limit must be positive");
  if (cfg_.ckpt_jitter_frac < 0.0 || cfg_.ckpt_jitter_frac > 1.0)
    throw Error(ErrorCode::kInvalidArgument, "ckpt_jitter_frac outside [0, 1]");
}

Scheduler::~Scheduler() { stop(); }

void Scheduler::add_event(const std::string& kind, const std::string& detail) {
  std::lock_guard lock(mu_);
  events_.push_back({clock_->now_ms(), kind, detail});
}

void Scheduler::register_master(ShardId shard, const std::string& endpoint,
                                std::uint64_t generation) {
  const std::string key = cfg_.model_id + "/masters/" + std::to_string(shard);
  registry_->update(key, [&](const std::optional<std::string>&) {
    return reg_doc(endpoint, generation);
  });
  add_event("register_master", "shard " + std::to_string(shard) + " gen " +
                                   std::to_string(generation) + " at " + endpoint);
}

void Scheduler::register_slave(ShardId shard, std::uint32_t replica,
                               const std::string& endpoint,
                               std::uint64_t generation) {
  const std::string key = cfg_.model_id + "/slaves/" + std::to_string(shard) + "/" +
                          std::to_string(replica);
  registry_->update(key, [&](const std::optional<std::string>&) {
    return reg_doc(endpoint, generation);
  });
  add_event("register_slave", "shard " + std::to_string(shard) + " replica " +
                                  std::to_string(replica) + " gen " +
                                  std::to_string(generation) + " at " + endpoint);
}

std::vector<Scheduler::Registration> Scheduler::registrations() const {
  std::vector<Registration> out;
  const std::string mprefix = cfg_.model_id + "/masters/";
  for (const auto& [key, entry] : registry_->list_prefix(mprefix)) {
    Registration r;
    r.role = net::Role::kMaster;
    r.shard = static_cast<ShardId>(std::stoul(key.substr(mprefix.size())));
    parse_reg_doc(entry.value, r.endpoint, r.generation);
    out.push_back(std::move(r));
  }
  const std::string sprefix = cfg_.model_id + "/slaves/";
  for (const auto& [key, entry] : registry_->list_prefix(sprefix)) {
    const std::string rest = key.substr(sprefix.size());
    const auto slash = rest.find('/');
    if (slash == std::string::npos) continue;
    Registration r;
    r.role = net::Role::kSlave;
    r.shard = static_cast<ShardId>(std::stoul(rest.substr(0, slash)));
    r.replica = static_cast<std::uint32_t>(std::stoul(rest.substr(slash + 1)));
    parse_reg_doc(entry.value, r.endpoint, r.generation);
    out.push_back(std::move(r));
  }
  return out;
}

void Scheduler::initialize_routing(std::uint32_t num_master_shards,
                                   std::uint32_t num_slave_shards) {
  ShardMap map;
  map.model_id = cfg_.model_id;
  map.num_master_shards = num_master_shards;
  map.num_slave_shards = num_slave_shards;
  auto latest = latest_version();
  map.active_version = latest.value_or(0);
  for (const auto& reg : registrations()) {
    if (reg.role == net::Role::kMaster)
      map.masters[reg.shard] = reg.endpoint;
    else
      map.slaves[reg.shard].push_back(reg.endpoint);
  }
  for (ShardId s = 0; s < num_master_shards; ++s)
    if (!map.masters.contains(s))
      throw Error(ErrorCode::kUnavailable,
                  "no registered master for shard " + std::to_string(s));
  for (ShardId s = 0; s < num_slave_shards; ++s)
    if (!map.slaves.contains(s) || map.slaves[s].empty())
      throw Error(ErrorCode::kUnavailable,
                  "no registered slave replica for shard " + std::to_string(s));
  registry_->update(ShardMap::routing_key(cfg_.model_id),
                    [&](const std::optional<std::string>&) { return map.to_json(); });
  add_event("routing_initialized",
            std::to_string(num_master_shards) + " masters, " +
                std::to_string(num_slave_shards) + " slave shards");
}

ShardMap Scheduler::current_map() const {
  auto entry = registry_->get(ShardMap::routing_key(cfg_.model_id));
  if (!entry)
    throw Error(ErrorCode::kNotFound, "no routing for model " + cfg_.model_id);
  return ShardMap::from_json(entry->value);
}

void Scheduler::publish_routing_update(
    const std::function<void(ShardMap&)>& mutate) {
  registry_->update(ShardMap::routing_key(cfg_.model_id),
                    [&](const std::optional<std::string>& current) {
                      if (!current)
                        throw Error(ErrorCode::kNotFound, "routing not initialized");
                      ShardMap map = ShardMap::from_json(*current);
                      mutate(map);
                      return map.to_json();
                    });
}

std::optional<Version> Scheduler::latest_version() const {
  auto entry = registry_->get(cfg_.model_id + "/versions/latest");
  if (!entry) return std::nullopt;
  return nlohmann::json::parse(entry->value).at("version").get<Version>();
}

std::optional<std::string> Scheduler::version_doc(Version version) const {
  auto entry =
      registry_->get(cfg_.model_id + "/versions/v" + std::to_string(version));
  if (!entry) return std::nullopt;
  return entry->value;
}

std::string Scheduler::version_dir_for(Version version) const {
  auto doc = version_doc(version);
  if (!doc)
    throw Error(ErrorCode::kNotFound,
                "version " + std::to_string(version) + " not published");
  return nlohmann::json::parse(*doc).at("dir").get<std::string>();
}

std::vector<monitor::VersionCandidate> Scheduler::version_candidates() const {
  std::vector<monitor::VersionCandidate> out;
  const std::string prefix = cfg_.model_id + "/versions/v";
  for (const auto& [key, entry] : registry_->list_prefix(prefix)) {
    nlohmann::json j = nlohmann::json::parse(entry.value);
    monitor::VersionCandidate c;
    c.version = j.at("version").get<Version>();
    if (j.contains("metric_logloss") && !j.at("metric_logloss").is_null())
      c.mean_logloss = j.at("metric_logloss").get<double>();
    else
      c.mean_logloss = std::numeric_limits<double>::infinity();
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.version < b.version; });
  return out;
}

Version Scheduler::active_version() const { return current_map().active_version; }

std::int64_t Scheduler::jitter_for(std::int64_t interval_ms) {
  if (interval_ms <= 0 || cfg_.ckpt_jitter_frac <= 0.0) return 0;
  const auto bound =
      static_cast<std::uint64_t>(cfg_.ckpt_jitter_frac * static_cast<double>(interval_ms));
  if (bound == 0) return 0;
  std::lock_guard lock(mu_);
  return static_cast<std::int64_t>(rng_.next_below(bound + 1));
}

Version Scheduler::trigger_checkpoint_round(const std::string& dest) {
  std::lock_guard control(control_mu_);
  const bool remote = dest == "remote";
  if (!remote && dest != "local")
    throw Error(ErrorCode::kInvalidArgument, "dest must be local or remote");
  const std::string root = remote ? cfg_.ckpt_root_remote : cfg_.ckpt_root_local;
  if (root.empty())
    throw Error(ErrorCode::kInvalidArgument, "no checkpoint root for dest " + dest);

  ShardMap map = current_map();
  if (map.masters.size() != map.num_master_shards)
    throw Error(ErrorCode::kUnavailable, "master set incomplete");

  Version version = latest_version().value_or(0) + 1;
  {
    std::lock_guard lock(mu_);
    version = std::max<Version>(version, next_version_hint_);
  }
  const std::int64_t interval =
      remote ? cfg_.ckpt_remote_interval_ms : cfg_.ckpt_local_interval_ms;

  struct Result {
    std::string meta_json;
    std::string error;
  };
  std::vector<Result> results(map.masters.size());
  std::vector<std::thread> workers;
  std::size_t idx = 0;
  for (const auto& [shard, endpoint] : map.masters) {
    const std::int64_t jitter = jitter_for(interval);
    workers.emplace_back([this, endpoint, version, root, jitter, &results, idx] {
      try {
        net::ServiceClient client(*bus_, endpoint, cfg_.call_timeout_ms);
        results[idx].meta_json =
            client.save_checkpoint(cfg_.model_id, version, root, jitter);
      } catch (const std::exception& e) {
        results[idx].error = e.what();
      }
    });
    ++idx;
  }
  for (auto& t : workers) t.join();

  std::string failure;
  for (const auto& r : results)
    if (!r.error.empty()) failure = r.error;
  if (!failure.empty()) {
    add_event("checkpoint_failed",
              "v" + std::to_string(version) + " (" + dest + "): " + failure);
    throw Error(ErrorCode::kCheckpointFailed,
                "checkpoint v" + std::to_string(version) + " failed: " + failure);
  }

  nlohmann::json doc;
  doc["version"] = version;
  doc["dest"] = dest;
  doc["dir"] = ckpt::version_dir(root, cfg_.model_id, version);
  doc["created_at_ms"] = clock_->now_ms();
  doc["metric_logloss"] = nullptr;
  nlohmann::json shards = nlohmann::json::array();
  for (const auto& r : results) shards.push_back(nlohmann::json::parse(r.meta_json));
  doc["shards"] = shards;
  registry_->update(cfg_.model_id + "/versions/v" + std::to_string(version),
                    [&](const std::optional<std::string>&) { return doc.dump(); });
  registry_->update(cfg_.model_id + "/versions/latest",
                    [&](const std::optional<std::string>&) {
                      nlohmann::json j;
                      j["version"] = version;
                      return j.dump();
                    });
  {
    std::lock_guard lock(mu_);
    next_version_hint_ = version + 1;
  }
  add_event("checkpoint_published", "v" + std::to_string(version) + " (" + dest + ")");
  return version;
}

void Scheduler::record_version_metric(Version version, double mean_logloss) {
  const std::string key = cfg_.model_id + "/versions/v" + std::to_string(version);
  registry_->update(key, [&](const std::optional<std::string>& current) {
    if (!current)
      throw Error(ErrorCode::kNotFound,
                  "version " + std::to_string(version) + " not published");
    nlohmann::json j = nlohmann::json::parse(*current);
    j["metric_logloss"] = mean_logloss;
    return j.dump();
  });
}

void Scheduler::switch_serving_version(Version version) {
  std::lock_guard control(control_mu_);
  const std::string dir = version_dir_for(version);
  ShardMap map = current_map();
  if (map.active_version == version) {
    add_event("switch_noop", "v" + std::to_string(version) + " already active");
    return;
  }
  for (const auto& [shard, replicas] : map.slaves) {
    (void)shard;
    for (const auto& endpoint : replicas) {
      net::ServiceClient client(*bus_, endpoint, cfg_.call_timeout_ms);
      client.load_version(cfg_.model_id, dir, version,
                          slave::OffsetPolicy::kReplayFromVersion, true);
    }
  }
  publish_routing_update([&](ShardMap& m) { m.active_version = version; });
  add_event("switch_version", "serving now v" + std::to_string(version));
}

Version Scheduler::rollback(monitor::VersionStrategy strategy) {
  std::lock_guard control(control_mu_);
  auto candidates = version_candidates();
  const Version below = latest_version().value_or(0) + 1;
  const Version chosen = monitor::select_version(strategy, candidates, below);
  const std::string dir = version_dir_for(chosen);
  ShardMap map = current_map();

  // Slaves abandon the degraded log backlog first, so the masters'
  // re-announcements are the only records they will apply.
  for (const auto& [shard, replicas] : map.slaves) {
    (void)shard;
    for (const auto& endpoint : replicas) {
      net::ServiceClient client(*bus_, endpoint, cfg_.call_timeout_ms);
      client.load_version(cfg_.model_id, dir, chosen,
                          slave::OffsetPolicy::kSkipToTail, false);
    }
  }
  for (const auto& [shard, endpoint] : map.masters) {
    (void)shard;
    net::ServiceClient client(*bus_, endpoint, cfg_.call_timeout_ms);
    client.load_checkpoint(cfg_.model_id, dir, true, true);
  }
  for (const auto& [shard, replicas] : map.slaves) {
    (void)shard;
    for (const auto& endpoint : replicas) {
      net::ServiceClient client(*bus_, endpoint, cfg_.call_timeout_ms);
      client.force_sync(cfg_.model_id);
    }
  }
  publish_routing_update([&](ShardMap& m) { m.active_version = chosen; });
  add_event("rollback", std::string(monitor::version_strategy_name(strategy)) +
                            " selected v" + std::to_string(chosen));
  return chosen;
}

void Scheduler::failover_master(ShardId shard) {
  std::lock_guard control(control_mu_);
  if (spawner_ == nullptr)
    throw Error(ErrorCode::kUnavailable, "no spawner attached");
  const std::string key = cfg_.model_id + "/masters/" + std::to_string(shard);
  std::uint64_t generation = 0;
  if (auto entry = registry_->get(key)) {
    std::string old_endpoint;
    parse_reg_doc(entry->value, old_endpoint, generation);
  }
  const std::uint64_t new_gen = generation + 1;
  const std::string endpoint = spawner_->respawn_master(shard, new_gen);
  register_master(shard, endpoint, new_gen);

  if (auto latest = latest_version()) {
    const std::string dir = version_dir_for(*latest);
    net::ServiceClient client(*bus_, endpoint, cfg_.call_timeout_ms);
    client.load_checkpoint(cfg_.model_id, dir, true, true);
  }
  publish_routing_update([&](ShardMap& m) { m.masters[shard] = endpoint; });
  {
    std::lock_guard lock(mu_);
    probes_.erase("master/" + std::to_string(shard));
  }
  add_event("master_failover", "shard " + std::to_string(shard) + " gen " +
                                   std::to_string(new_gen) + " at " + endpoint);
}

void Scheduler::failover_slave(ShardId shard, std::uint32_t replica) {
  std::lock_guard control(control_mu_);
  const std::string key = cfg_.model_id + "/slaves/" + std::to_string(shard) + "/" +
                          std::to_string(replica);
  std::uint64_t generation = 0;
  std::string old_endpoint;
  if (auto entry = registry_->get(key)) {
    parse_reg_doc(entry->value, old_endpoint, generation);
    registry_->erase(key, 0);
  }
  if (!old_endpoint.empty()) {
    publish_routing_update([&](ShardMap& m) {
      auto& eps = m.slaves[shard];
      eps.erase(std::remove(eps.begin(), eps.end(), old_endpoint), eps.end());
    });
  }
  {
    std::lock_guard lock(mu_);
    probes_.erase("slave/" + std::to_string(shard) + "/" + std::to_string(replica));
  }
  add_event("slave_removed", "shard " + std::to_string(shard) + " replica " +
                                 std::to_string(replica) + " at " + old_endpoint);

  const std::size_t remaining = current_map().slaves[shard].size();
  if (remaining >= cfg_.min_slave_replicas || spawner_ == nullptr) return;

  const std::uint64_t new_gen = generation + 1;
  const std::string endpoint = spawner_->respawn_slave(shard, replica, new_gen);
  register_slave(shard, replica, endpoint, new_gen);
  net::ServiceClient client(*bus_, endpoint, cfg_.call_timeout_ms);
  const Version active = current_map().active_version;
  if (active > 0) {
    client.load_version(cfg_.model_id, version_dir_for(active), active,
                        slave::OffsetPolicy::kReplayFromVersion, true);
  } else {
    client.force_sync(cfg_.model_id);
  }
  publish_routing_update([&](ShardMap& m) { m.slaves[shard].push_back(endpoint); });
  add_event("slave_respawned", "shard " + std::to_string(shard) + " replica " +
                                   std::to_string(replica) + " gen " +
                                   std::to_string(new_gen) + " at " + endpoint);
}

void Scheduler::handle_unhealthy(const Registration& reg) {
  add_event("unhealthy",
            std::string(net::role_name(reg.role)) + " shard " +
                std::to_string(reg.shard) +
                (reg.role == net::Role::kSlave
                     ? " replica " + std::to_string(reg.replica)
                     : "") +
                " missed " + std::to_string(cfg_.probe_miss_limit) + " probes");
  if (!cfg_.auto_failover || spawner_ == nullptr) return;
  if (reg.role == net::Role::kMaster)
    failover_master(reg.shard);
  else
    failover_slave(reg.shard, reg.replica);
}

void Scheduler::step() {
  const std::int64_t now = clock_->now_ms();
  auto regs = registrations();

  for (const auto& reg : regs) {
    const std::string key =
        reg.role == net::Role::kMaster
            ? "master/" + std::to_string(reg.shard)
            : "slave/" + std::to_string(reg.shard) + "/" + std::to_string(reg.replica);
    bool ok = false;
    try {
      net::ServiceClient client(*bus_, reg.endpoint, cfg_.call_timeout_ms);
      auto info = client.health(std::min<std::int64_t>(cfg_.probe_interval_ms, 400));
      ok = info.generation == reg.generation && info.healthy;
    } catch (const std::exception&) {
      ok = false;
    }
    bool fire = false;
    {
      std::lock_guard lock(mu_);
      auto& st = probes_[key];
      st.endpoint = reg.endpoint;
      st.generation = reg.generation;
      if (ok) {
        st.misses = 0;
        st.healthy = true;
      } else {
        ++st.misses;
        if (st.misses >= cfg_.probe_miss_limit && st.healthy) {
          st.healthy = false;
          fire = true;
        }
      }
    }
    if (fire) handle_unhealthy(reg);
  }

  bool fire_local = false;
  bool fire_remote = false;
  {
    std::lock_guard lock(mu_);
    if (cfg_.ckpt_local_interval_ms > 0) {
      if (next_local_ckpt_ms_ == 0)
        next_local_ckpt_ms_ = now + cfg_.ckpt_local_interval_ms;
      else if (now >= next_local_ckpt_ms_) {
        fire_local = true;
        next_local_ckpt_ms_ = now + cfg_.ckpt_local_interval_ms;
      }
    }
    if (cfg_.ckpt_remote_interval_ms > 0) {
      if (next_remote_ckpt_ms_ == 0)
        next_remote_ckpt_ms_ = now + cfg_.ckpt_remote_interval_ms;
      else if (now >= next_remote_ckpt_ms_) {
        fire_remote = true;
        next_remote_ckpt_ms_ = now + cfg_.ckpt_remote_interval_ms;
      }
    }
  }
  if (fire_local) {
    try {
      trigger_checkpoint_round("local");
    } catch (const std::exception&) {
      // Event already recorded; the next interval retries.
    }
  }
  if (fire_remote) {
    try {
      trigger_checkpoint_round("remote");
    } catch (const std::exception&) {
    }
  }
}

void Scheduler::start() {
  if (loop_.joinable()) return;
  stop_.store(false, std::memory_order_relaxed);
  loop_ = std::thread([this] {
    while (!stop_.load(std::memory_order_relaxed)) {
      step();
      clock_->sleep_ms(cfg_.probe_interval_ms);
    }
  });
}

void Scheduler::stop() {
  if (!loop_.joinable()) return;
  stop_.store(true, std::memory_order_relaxed);
  loop_.join();
}

std::vector<Event> Scheduler::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::map<std::string, Scheduler::ProbeState> Scheduler::probe_states() const {
  std::lock_guard lock(mu_);
  return probes_;
}

net::Handler make_scheduler_handler(std::shared_ptr<Scheduler> scheduler) {
  return [scheduler](std::span<const std::uint8_t> request)
             -> std::vector<std::uint8_t> {
    try {
      net::MsgType type;
      BinaryReader r = net::open_request(request, type);
      switch (type) {
        case net::MsgType::kTriggerCkpt: {
          const std::string model = r.str();
          const std::string dest = r.str();
          if (model != scheduler->config().model_id)
            throw Error(ErrorCode::kNotFound, "unknown model: " + model);
          const Version v = scheduler->trigger_checkpoint_round(dest);
          return net::ok_response([&](BinaryWriter& w) { w.u64(v); });
        }
        case net::MsgType::kSwitchVersion: {
          const std::string model = r.str();
          const Version v = r.u64();
          if (model != scheduler->config().model_id)
            throw Error(ErrorCode::kNotFound, "unknown model: " + model);
          scheduler->switch_serving_version(v);
          return net::ok_response();
        }
        case net::MsgType::kRollback: {
          const std::string model = r.str();
          const std::string strategy = r.str();
          if (model != scheduler->config().model_id)
            throw Error(ErrorCode::kNotFound, "unknown model: " + model);
          const Version v =
              scheduler->rollback(monitor::version_strategy_from_name(strategy));
          return net::ok_response([&](BinaryWriter& w) { w.u64(v); });
        }
        case net::MsgType::kStatus: {
          nlohmann::json j;
          j["role"] = "scheduler";
          j["model_id"] = scheduler->config().model_id;
          try {
            auto map = scheduler->current_map();
            j["active_version"] = map.active_version;
            j["num_master_shards"] = map.num_master_shards;
            j["num_slave_shards"] = map.num_slave_shards;
          } catch (const Error&) {
            j["active_version"] = nullptr;
          }
          auto latest = scheduler->latest_version();
          if (latest)
            j["latest_version"] = *latest;
          else
            j["latest_version"] = nullptr;
          nlohmann::json probes = nlohmann::json::object();
          for (const auto& [key, st] : scheduler->probe_states()) {
            nlohmann::json p;
            p["endpoint"] = st.endpoint;
            p["healthy"] = st.healthy;
            p["misses"] = st.misses;
            p["generation"] = st.generation;
            probes[key] = p;
          }
          j["probes"] = probes;
          return net::ok_response([&](BinaryWriter& w) { w.str(j.dump()); });
        }
        case net::MsgType::kHealth: {
          return net::ok_response([&](BinaryWriter& w) {
            w.u8(static_cast<std::uint8_t>(net::Role::kScheduler));
            w.str(scheduler->config().model_id);
            w.u32(0);
            w.u32(0);
            w.u64(0);
            w.u8(1);
            w.u64(0);
            w.u64(0);
            w.u64(0);
            w.u8(0);
          });
        }
        default:
          throw Error(ErrorCode::kInvalidArgument,
                      std::string("scheduler cannot serve ") +
                          net::msg_type_name(type));
      }
    } catch (const Error& e) {
      return net::error_response(e.code(), e.what());
    } catch (const std::exception& e) {
      return net::error_response(ErrorCode::kInternal, e.what());
    }
  };
}

}  // namespace weips::scheduler
