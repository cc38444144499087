#include "weips/model/slot_codec.hpp"

namespace weips::model {

void encode_slot(BinaryWriter& w, const ParameterSlot& slot) {
  const auto& mats = slot.matrices();
  w.u32(static_cast<std::uint32_t>(mats.size()));
  for (const auto& m : mats) {
    w.str(m.name);
    w.f64_vec(m.values);
  }
}

ParameterSlot decode_slot(BinaryReader& r) {
  ParameterSlot slot;
  const std::uint32_t count = r.u32();
  slot.matrices().reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ParameterSlot::Matrix m;
    m.name = r.str();
    m.values = r.f64_vec();
    slot.matrices().push_back(std::move(m));
  }
  return slot;
}

}  // namespace weips::model
