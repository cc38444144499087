#include "weips/net/service.hpp"

#include <nlohmann/json.hpp>

#include "weips/model/slot_codec.hpp"
#include "weips/net/wire.hpp"

namespace weips::net {

namespace {

void check_model(const std::string& got, const std::string& want) {
  if (got != want)
    throw Error(ErrorCode::kNotFound, "unknown model: " + got);
}

void write_slots(
    BinaryWriter& w,
    const std::vector<std::pair<FeatureId, model::ParameterSlot>>& slots) {
  w.u32(static_cast<std::uint32_t>(slots.size()));
  for (const auto& [id, slot] : slots) {
    w.u64(id);
    model::encode_slot(w, slot);
  }
}

template <typename Fn>
std::vector<std::uint8_t> guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    return error_response(e.code(), e.what());
  } catch (const std::exception& e) {
    return error_response(ErrorCode::kInternal, e.what());
  }
}

}  // namespace

const char* role_name(Role r) {
  switch (r) {
    case Role::kMaster: return "master";
    case Role::kSlave: return "slave";
    case Role::kScheduler: return "scheduler";
    case Role::kRegistry: return "registry";
  }
  return "unknown";
}

Handler make_master_handler(std::shared_ptr<master::MasterShard> shard,
                            std::uint64_t generation) {
  return [shard, generation](std::span<const std::uint8_t> request) {
    return guarded([&]() -> std::vector<std::uint8_t> {
      MsgType type;
      BinaryReader r = open_request(request, type);
      switch (type) {
        case MsgType::kPushGrad: {
          check_model(r.str(), shard->config().model_id);
          const ShardId target = r.u32();
          if (target != shard->shard_id())
            throw Error(ErrorCode::kRouting, "request for wrong shard");
          const std::uint32_t count = r.u32();
          std::vector<std::pair<FeatureId, model::GradientMap>> updates;
          updates.reserve(count);
          for (std::uint32_t i = 0; i < count; ++i) {
            FeatureId id = r.u64();
            model::GradientMap gm;
            const std::uint32_t nmat = r.u32();
            gm.reserve(nmat);
            for (std::uint32_t j = 0; j < nmat; ++j) {
              std::string name = r.str();
              gm.emplace_back(std::move(name), r.f64_vec());
            }
            updates.emplace_back(id, std::move(gm));
          }
          auto ack = shard->push_gradients(updates);
          return ok_response([&](BinaryWriter& w) {
            w.u32(ack.applied);
            w.u32(ack.rejected);
            w.u64(ack.epoch);
          });
        }
        case MsgType::kPullParams: {
          check_model(r.str(), shard->config().model_id);
          const ShardId target = r.u32();
          if (target != shard->shard_id())
            throw Error(ErrorCode::kRouting, "request for wrong shard");
          const std::uint32_t count = r.u32();
          std::vector<FeatureId> ids(count);
          for (auto& id : ids) id = r.u64();
          auto slots = shard->pull_parameters(ids);
          return ok_response([&](BinaryWriter& w) { write_slots(w, slots); });
        }
        case MsgType::kSaveCkpt: {
          check_model(r.str(), shard->config().model_id);
          const Version version = r.u64();
          const std::string root = r.str();
          const std::int64_t jitter_ms = r.i64();
          auto meta = shard->save_checkpoint(version, root, jitter_ms);
          return ok_response([&](BinaryWriter& w) { w.str(meta.to_json()); });
        }
        case MsgType::kLoadCkpt: {
          check_model(r.str(), shard->config().model_id);
          const std::string dir = r.str();
          const bool reannounce = r.u8() != 0;
          const bool force_sync = r.u8() != 0;
          shard->restore_from_checkpoint(dir, reannounce);
          if (force_sync) shard->force_sync();
          return ok_response(
              [&](BinaryWriter& w) { w.u64(shard->param_count()); });
        }
        case MsgType::kForceSync: {
          check_model(r.str(), shard->config().model_id);
          const std::uint64_t emitted = shard->force_sync();
          return ok_response([&](BinaryWriter& w) { w.u64(emitted); });
        }
        case MsgType::kDumpTable: {
          check_model(r.str(), shard->config().model_id);
          auto slots = shard->dump_table();
          return ok_response([&](BinaryWriter& w) { write_slots(w, slots); });
        }
        case MsgType::kHealth: {
          auto stats = shard->stats();
          return ok_response([&](BinaryWriter& w) {
            w.u8(static_cast<std::uint8_t>(Role::kMaster));
            w.str(shard->config().model_id);
            w.u32(shard->shard_id());
            w.u32(0);  // replica
            w.u64(generation);
            w.u8(1);   // healthy
            w.u64(0);  // serving version
            w.u64(stats.epoch);
            w.u64(stats.param_count);
            w.u8(stats.sync_stalled ? 1 : 0);
          });
        }
        case MsgType::kStatus: {
          auto stats = shard->stats();
          nlohmann::json j;
          j["role"] = "master";
          j["model_id"] = shard->config().model_id;
          j["shard_id"] = shard->shard_id();
          j["generation"] = generation;
          j["epoch"] = stats.epoch;
          j["param_count"] = stats.param_count;
          j["enqueued"] = stats.enqueued;
          j["drained"] = stats.drained;
          j["emitted_records"] = stats.emitted_records;
          j["emitted_batches"] = stats.emitted_batches;
          j["rejected_updates"] = stats.rejected_updates;
          j["filtered_features"] = stats.filtered_features;
          j["backpressure_waits"] = stats.backpressure_waits;
          j["sync_stalled"] = stats.sync_stalled;
          return ok_response([&](BinaryWriter& w) { w.str(j.dump()); });
        }
        default:
          throw Error(ErrorCode::kInvalidArgument,
                      std::string("master cannot serve ") + msg_type_name(type));
      }
    });
  };
}

Handler make_slave_handler(std::shared_ptr<slave::SlaveShard> shard,
                           std::uint64_t generation) {
  return [shard, generation](std::span<const std::uint8_t> request) {
    return guarded([&]() -> std::vector<std::uint8_t> {
      MsgType type;
      BinaryReader r = open_request(request, type);
      switch (type) {
        case MsgType::kPullServing: {
          check_model(r.str(), shard->config().model_id);
          const ShardId target = r.u32();
          if (target != shard->config().shard_id)
            throw Error(ErrorCode::kRouting, "request for wrong shard");
          const std::uint32_t count = r.u32();
          std::vector<FeatureId> ids(count);
          for (auto& id : ids) id = r.u64();
          auto slots = shard->pull_serving(ids);
          return ok_response([&](BinaryWriter& w) {
            w.u64(shard->serving_version());
            write_slots(w, slots);
          });
        }
        case MsgType::kLoadVersion: {
          check_model(r.str(), shard->config().model_id);
          const std::string dir = r.str();
          const Version version = r.u64();
          const auto policy = static_cast<slave::OffsetPolicy>(r.u8());
          const bool catch_up = r.u8() != 0;
          shard->load_version(dir, version, policy);
          if (catch_up) shard->catch_up_to_tails();
          return ok_response();
        }
        case MsgType::kForceSync: {
          check_model(r.str(), shard->config().model_id);
          shard->catch_up_to_tails();
          return ok_response([&](BinaryWriter& w) { w.u64(0); });
        }
        case MsgType::kDumpTable: {
          check_model(r.str(), shard->config().model_id);
          auto slots = shard->dump_table();
          return ok_response([&](BinaryWriter& w) { write_slots(w, slots); });
        }
        case MsgType::kHealth: {
          auto stats = shard->stats();
          return ok_response([&](BinaryWriter& w) {
            w.u8(static_cast<std::uint8_t>(Role::kSlave));
            w.str(shard->config().model_id);
            w.u32(shard->config().shard_id);
            w.u32(shard->config().replica_id);
            w.u64(generation);
            w.u8(stats.healthy ? 1 : 0);
            w.u64(stats.version);
            w.u64(0);  // epoch
            w.u64(stats.param_count);
            w.u8(0);   // sync_stalled
          });
        }
        case MsgType::kStatus: {
          auto stats = shard->stats();
          nlohmann::json j;
          j["role"] = "slave";
          j["model_id"] = shard->config().model_id;
          j["shard_id"] = shard->config().shard_id;
          j["replica_id"] = shard->config().replica_id;
          j["generation"] = generation;
          j["healthy"] = stats.healthy;
          j["serving_version"] = stats.version;
          j["param_count"] = stats.param_count;
          j["applied_upserts"] = stats.applied_upserts;
          j["applied_deletes"] = stats.applied_deletes;
          j["skipped_unowned"] = stats.skipped_unowned;
          j["skipped_other_model"] = stats.skipped_other_model;
          j["quarantined"] = stats.quarantined;
          nlohmann::json offs = nlohmann::json::object();
          for (const auto& [p, off] : stats.consumed_offsets)
            offs[std::to_string(p)] = off;
          j["consumed_offsets"] = offs;
          return ok_response([&](BinaryWriter& w) { w.str(j.dump()); });
        }
        default:
          throw Error(ErrorCode::kInvalidArgument,
                      std::string("slave cannot serve ") + msg_type_name(type));
      }
    });
  };
}

Handler make_registry_handler(std::shared_ptr<registry::RegistryCore> core) {
  return [core](std::span<const std::uint8_t> request) {
    return guarded([&]() -> std::vector<std::uint8_t> {
      MsgType type;
      BinaryReader r = open_request(request, type);
      switch (type) {
        case MsgType::kRegGet: {
          const std::string key = r.str();
          auto entry = core->get(key);
          return ok_response([&](BinaryWriter& w) {
            w.u8(entry ? 1 : 0);
            w.str(entry ? entry->value : "");
            w.u64(entry ? entry->cas_version : 0);
          });
        }
        case MsgType::kRegCas: {
          const std::string key = r.str();
          const std::string value = r.str();
          const std::uint64_t expected = r.u64();
          const bool del = r.u8() != 0;
          if (del) {
            const bool ok = core->erase(key, expected);
            return ok_response([&](BinaryWriter& w) {
              w.u8(ok ? 1 : 0);
              w.u64(0);
            });
          }
          auto version = core->compare_and_set(key, value, expected);
          return ok_response([&](BinaryWriter& w) {
            w.u8(version ? 1 : 0);
            w.u64(version.value_or(0));
          });
        }
        case MsgType::kRegPoll: {
          const std::uint64_t after = r.u64();
          const std::int64_t timeout_ms = r.i64();
          auto changes = core->poll(after, timeout_ms);
          return ok_response([&](BinaryWriter& w) {
            w.u32(static_cast<std::uint32_t>(changes.size()));
            for (const auto& c : changes) {
              w.u64(c.seq);
              w.str(c.key);
              w.str(c.value);
              w.u64(c.cas_version);
              w.u8(c.deleted ? 1 : 0);
            }
          });
        }
        case MsgType::kRegList: {
          const std::string prefix = r.str();
          auto entries = core->list_prefix(prefix);
          return ok_response([&](BinaryWriter& w) {
            w.u32(static_cast<std::uint32_t>(entries.size()));
            for (const auto& [key, entry] : entries) {
              w.str(key);
              w.str(entry.value);
              w.u64(entry.cas_version);
            }
          });
        }
        case MsgType::kHealth: {
          return ok_response([&](BinaryWriter& w) {
            w.u8(static_cast<std::uint8_t>(Role::kRegistry));
            w.str("");
            w.u32(0);
            w.u32(0);
            w.u64(0);
            w.u8(1);
            w.u64(0);
            w.u64(core->head_seq());
            w.u64(0);
            w.u8(0);
          });
        }
        default:
          throw Error(ErrorCode::kInvalidArgument,
                      std::string("registry cannot serve ") + msg_type_name(type));
      }
    });
  };
}

}  // namespace weips::net
