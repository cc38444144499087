#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "weips/types.hpp"

namespace weips::scheduler {

// The routing document the scheduler maintains in the registry under
// "<model_id>/routing". Single writer (the scheduler); clients read or watch.
struct ShardMap {
  std::string model_id;
  std::uint32_t num_master_shards = 0;
  std::uint32_t num_slave_shards = 0;
  Version active_version = 0;
  std::map<ShardId, std::string> masters;               // shard -> endpoint
  std::map<ShardId, std::vector<std::string>> slaves;   // shard -> replicas

  std::string to_json() const;
  static ShardMap from_json(const std::string& text);

  static std::string routing_key(const std::string& model_id) {
    return model_id + "/routing";
  }
};

}  // namespace weips::scheduler
