#pragma once

#include <cstdint>
#include <string>

namespace weips {

using FeatureId = std::uint64_t;
using ShardId = std::uint32_t;
using PartitionId = std::uint32_t;
using Offset = std::uint64_t;
using Version = std::uint64_t;
using Epoch = std::uint64_t;

enum class UpdateOp : std::uint8_t {
  kUpsert = 0,
  kDelete = 1,
};

// Modulo routing. Used for feature->master shard, feature->slave shard and
// master shard->log partition alike; master and slave counts are independent
// moduli, so any partition can carry ids for any slave shard.
inline ShardId owner_shard(FeatureId id, std::uint32_t num_shards) {
  return static_cast<ShardId>(id % num_shards);
}

inline PartitionId partition_for_shard(ShardId source_shard,
                                       std::uint32_t num_partitions) {
  return static_cast<PartitionId>(source_shard % num_partitions);
}

inline const char* update_op_name(UpdateOp op) {
  return op == UpdateOp::kUpsert ? "UPSERT" : "DELETE";
}

}  // namespace weips
