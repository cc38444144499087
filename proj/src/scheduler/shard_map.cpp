#include "weips/scheduler/shard_map.hpp"

#include <nlohmann/json.hpp>

#include "weips/error.hpp"

namespace weips::scheduler {

std::string ShardMap::to_json() const {
  nlohmann::json j;
  j["model_id"] = model_id;
  j["num_master_shards"] = num_master_shards;
  j["num_slave_shards"] = num_slave_shards;
  j["active_version"] = active_version;
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [shard, ep] : masters) m[std::to_string(shard)] = ep;
  j["masters"] = m;
  nlohmann::json s = nlohmann::json::object();
  for (const auto& [shard, eps] : slaves) s[std::to_string(shard)] = eps;
  j["slaves"] = s;
  return j.dump();
}

ShardMap ShardMap::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("bad shard map: ") + e.what());
  }
  ShardMap m;
  m.model_id = j.at("model_id").get<std::string>();
  m.num_master_shards = j.at("num_master_shards").get<std::uint32_t>();
  m.num_slave_shards = j.at("num_slave_shards").get<std::uint32_t>();
  m.active_version = j.at("active_version").get<Version>();
  for (const auto& [key, val] : j.at("masters").items())
    m.masters[static_cast<ShardId>(std::stoul(key))] = val.get<std::string>();
  for (const auto& [key, val] : j.at("slaves").items())
    m.slaves[static_cast<ShardId>(std::stoul(key))] =
        val.get<std::vector<std::string>>();
  return m;
}

}  // namespace weips::scheduler
