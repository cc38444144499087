#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "weips/codec.hpp"
#include "weips/model/schema.hpp"
#include "weips/types.hpp"

namespace weips::plog {

// ID-granularity full-value synchronization message. An UPSERT carries the
// complete current serving-view slot for its feature id, never a delta, so
// applying any record twice (or replaying an old one under a newer table and
// then catching up) converges to the same state. A DELETE carries no payload.
struct UpdateRecord {
  std::string model_id;
  FeatureId feature_id = 0;
  UpdateOp op = UpdateOp::kUpsert;
  Epoch epoch = 0;
  ShardId source_shard = 0;
  model::ParameterSlot payload;

  bool operator==(const UpdateRecord&) const = default;
};

// record := model_id:str feature_id:u64 op:u8 epoch:u64 source_shard:u32
//           matrix_count:u32 (name:str width:u32 values:f64[width])*
void encode_record(const UpdateRecord& r, BinaryWriter& w);
UpdateRecord decode_record(BinaryReader& r);

std::vector<std::uint8_t> encode_record(const UpdateRecord& r);
UpdateRecord decode_record(std::span<const std::uint8_t> bytes);

}  // namespace weips::plog
