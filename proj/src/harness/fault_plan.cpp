#include "weips/harness/fault_plan.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "weips/error.hpp"

namespace weips::harness {

using nlohmann::json;

const char* fault_action_name(FaultAction a) {
  switch (a) {
    case FaultAction::kKillMaster: return "kill-master";
    case FaultAction::kKillSlaveReplica: return "kill-slave-replica";
    case FaultAction::kStallLog: return "stall-log";
    case FaultAction::kCorruptCheckpoint: return "corrupt-checkpoint";
  }
  return "unknown";
}

namespace {

FaultAction action_from_name(const std::string& name) {
  if (name == "kill-master") return FaultAction::kKillMaster;
  if (name == "kill-slave-replica") return FaultAction::kKillSlaveReplica;
  if (name == "stall-log") return FaultAction::kStallLog;
  if (name == "corrupt-checkpoint") return FaultAction::kCorruptCheckpoint;
  throw Error(ErrorCode::kInvalidArgument, "unknown fault action: " + name);
}

}  // namespace

void FaultPlan::validate(std::uint32_t num_masters, std::uint32_t num_slaves,
                         std::uint32_t replicas, std::uint32_t partitions) const {
  for (const auto& s : steps) {
    switch (s.action) {
      case FaultAction::kKillMaster:
        if (s.shard >= num_masters)
          throw Error(ErrorCode::kInvalidArgument,
                      "kill-master references shard " + std::to_string(s.shard));
        break;
      case FaultAction::kKillSlaveReplica:
        if (s.shard >= num_slaves || s.replica >= replicas)
          throw Error(ErrorCode::kInvalidArgument,
                      "kill-slave-replica references shard " +
                          std::to_string(s.shard) + " replica " +
                          std::to_string(s.replica));
        break;
      case FaultAction::kStallLog:
        if (s.partition >= partitions)
          throw Error(ErrorCode::kInvalidArgument,
                      "stall-log references partition " +
                          std::to_string(s.partition));
        break;
      case FaultAction::kCorruptCheckpoint:
        if (s.shard >= num_masters)
          throw Error(ErrorCode::kInvalidArgument,
                      "corrupt-checkpoint references shard " +
                          std::to_string(s.shard));
        break;
    }
  }
}

std::string FaultPlan::to_json() const {
  json arr = json::array();
  for (const auto& s : steps) {
    json j{{"at_samples", s.at_samples},
           {"action", fault_action_name(s.action)}};
    switch (s.action) {
      case FaultAction::kKillMaster:
        j["shard"] = s.shard;
        break;
      case FaultAction::kKillSlaveReplica:
        j["shard"] = s.shard;
        j["replica"] = s.replica;
        break;
      case FaultAction::kStallLog:
        j["partition"] = s.partition;
        j["duration_ms"] = s.duration_ms;
        break;
      case FaultAction::kCorruptCheckpoint:
        j["version"] = s.version;
        j["shard"] = s.shard;
        break;
    }
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

FaultPlan FaultPlan::from_json(const std::string& text) {
  FaultPlan plan;
  try {
    const json arr = json::parse(text);
    if (!arr.is_array())
      throw Error(ErrorCode::kInvalidArgument, "fault plan must be a json array");
    for (const json& j : arr) {
      FaultStep s;
      s.at_samples = j.value("at_samples", std::uint64_t{0});
      s.action = action_from_name(j.at("action").get<std::string>());
      s.shard = j.value("shard", ShardId{0});
      s.replica = j.value("replica", std::uint32_t{0});
      s.partition = j.value("partition", PartitionId{0});
      s.duration_ms = j.value("duration_ms", std::int64_t{0});
      s.version = j.value("version", Version{0});
      plan.steps.push_back(s);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("bad fault plan json: ") + e.what());
  }
  std::stable_sort(plan.steps.begin(), plan.steps.end(),
                   [](const FaultStep& a, const FaultStep& b) {
                     return a.at_samples < b.at_samples;
                   });
  return plan;
}

FaultPlan FaultPlan::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open fault plan: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

}  // namespace weips::harness
