#include "weips/plog/record.hpp"

namespace weips::plog {

void encode_record(const UpdateRecord& r, BinaryWriter& w) {
  w.str(r.model_id);
  w.u64(r.feature_id);
  w.u8(static_cast<std::uint8_t>(r.op));
  w.u64(r.epoch);
  w.u32(r.source_shard);
  if (r.op == UpdateOp::kDelete) {
    w.u32(0);
    return;
  }
  const auto& mats = r.payload.matrices();
  w.u32(static_cast<std::uint32_t>(mats.size()));
  for (const auto& m : mats) {
    w.str(m.name);
    w.f64_vec(m.values);
  }
}

UpdateRecord decode_record(BinaryReader& r) {
  UpdateRecord rec;
  rec.model_id = r.str();
  rec.feature_id = r.u64();
  const std::uint8_t op = r.u8();
  if (op > 1) throw Error(ErrorCode::kIo, "bad op byte in record");
  rec.op = static_cast<UpdateOp>(op);
  rec.epoch = r.u64();
  rec.source_shard = r.u32();
  const std::uint32_t mats = r.u32();
  for (std::uint32_t i = 0; i < mats; ++i) {
    std::string name = r.str();
    rec.payload.set(name, r.f64_vec());
  }
  return rec;
}

std::vector<std::uint8_t> encode_record(const UpdateRecord& r) {
  BinaryWriter w;
  encode_record(r, w);
  return w.take();
}

UpdateRecord decode_record(std::span<const std::uint8_t> bytes) {
  BinaryReader r(bytes);
  return decode_record(r);
}

}  // namespace weips::plog
