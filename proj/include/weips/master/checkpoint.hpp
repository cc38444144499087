#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "weips/model/schema.hpp"
#include "weips/types.hpp"

namespace weips::ckpt {

struct CheckpointMeta {
  std::string model_id;
  ShardId shard_id = 0;
  std::uint32_t num_shards = 1;
  Version version = 0;
  std::int64_t created_at_ms = 0;  // wall time
  std::map<PartitionId, Offset> log_offsets;
  std::uint64_t param_count = 0;
  std::uint64_t content_digest = 0;

  std::string to_json() const;
  static CheckpointMeta from_json(const std::string& text);
};

// One master shard's snapshot: training-view slots plus the log tail offsets
// captured at snapshot time.
struct ShardSnapshot {
  CheckpointMeta meta;
  model::ModelSchema schema;
  Epoch epoch = 0;
  std::vector<std::pair<FeatureId, model::ParameterSlot>> slots;
};

// Layout: <root>/<model_id>/v<version>/shard-<k>.ckpt (binary body)
//         <root>/<model_id>/v<version>/shard-<k>.meta.json
// The body is fsynced before its manifest is written, so a manifest's
// presence implies a durable body.
std::string version_dir(const std::string& root, const std::string& model_id,
                        Version version);

// Returns the manifest actually written (digest and param_count filled in).
CheckpointMeta write_shard_snapshot(const std::string& dir,
                                    const ShardSnapshot& snapshot);

// Verifies the stored digest against the body; throws corrupt-checkpoint on
// mismatch, not-found/incomplete-set when files are missing.
ShardSnapshot read_shard_snapshot(const std::string& dir, ShardId shard_id);

// Reads every shard of a version; throws incomplete-set unless files for all
// of 0..num_shards-1 (from the first manifest found) are present.
std::vector<ShardSnapshot> read_all_shards(const std::string& dir);

struct LoadedTable {
  ShardId shard_id = 0;
  Epoch epoch = 0;
  std::vector<std::pair<FeatureId, model::ParameterSlot>> slots;
};

// Re-routes a checkpoint written by N shards onto target_shard_count tables
// by id ownership; the multiset of (id, slot) is preserved for any counts.
std::vector<LoadedTable> load_for_shard_count(const std::string& dir,
                                              std::uint32_t target_shard_count);

// Loads only the ids owned by target_shard under target_shard_count.
LoadedTable load_slice(const std::string& dir, std::uint32_t target_shard_count,
                       ShardId target_shard);

// Per-partition minimum of the stored tail offsets across shard manifests —
// the safe replay start for a consumer bootstrapping from this version.
std::map<PartitionId, Offset> replay_offsets(const std::string& dir);

// Versions with a complete shard set under <root>/<model_id>, ascending.
std::vector<Version> list_complete_versions(const std::string& root,
                                            const std::string& model_id);

}  // namespace weips::ckpt
