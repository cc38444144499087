#pragma once

#include "weips/codec.hpp"
#include "weips/model/schema.hpp"

namespace weips::model {

// Matrix list as u32 count, then per matrix a length-prefixed name and a
// count-prefixed f64 vector. Matches the layout used by log records and
// checkpoint bodies.
void encode_slot(BinaryWriter& w, const ParameterSlot& slot);
ParameterSlot decode_slot(BinaryReader& r);

}  // namespace weips::model
