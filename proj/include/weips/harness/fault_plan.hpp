#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "weips/types.hpp"

namespace weips::harness {

enum class FaultAction : std::uint8_t {
  kKillMaster = 0,
  kKillSlaveReplica = 1,
  kStallLog = 2,
  kCorruptCheckpoint = 3,
};

const char* fault_action_name(FaultAction a);

struct FaultStep {
  std::uint64_t at_samples = 0;  // fires when training progress crosses this
  FaultAction action = FaultAction::kKillMaster;
  ShardId shard = 0;
  std::uint32_t replica = 0;
  PartitionId partition = 0;
  std::int64_t duration_ms = 0;
  Version version = 0;
};

// Ordered fault schedule, loadable from a JSON file:
//   [{"at_samples": 30000, "action": "kill-master", "shard": 1},
//    {"at_samples": 35000, "action": "kill-slave-replica", "shard": 0, "replica": 1},
//    {"at_samples": 40000, "action": "stall-log", "partition": 0, "duration_ms": 2000},
//    {"at_samples": 45000, "action": "corrupt-checkpoint", "version": 2, "shard": 0}]
struct FaultPlan {
  std::vector<FaultStep> steps;  // kept sorted by at_samples

  void validate(std::uint32_t num_masters, std::uint32_t num_slaves,
                std::uint32_t replicas, std::uint32_t partitions) const;

  std::string to_json() const;
  static FaultPlan from_json(const std::string& text);
  static FaultPlan load_file(const std::string& path);
};

}  // namespace weips::harness
