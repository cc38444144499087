#include "weips/net/wire.hpp"

namespace weips::net {

const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::kPushGrad: return "PUSH_GRAD";
    case MsgType::kPullParams: return "PULL_PARAMS";
    case MsgType::kPullServing: return "PULL_SERVING";
    case MsgType::kSaveCkpt: return "SAVE_CKPT";
    case MsgType::kLoadCkpt: return "LOAD_CKPT";
    case MsgType::kHealth: return "HEALTH";
    case MsgType::kLoadVersion: return "LOAD_VERSION";
    case MsgType::kSwitchVersion: return "SWITCH_VERSION";
    case MsgType::kTriggerCkpt: return "TRIGGER_CKPT";
    case MsgType::kStatus: return "STATUS";
    case MsgType::kDumpTable: return "DUMP_TABLE";
    case MsgType::kForceSync: return "FORCE_SYNC";
    case MsgType::kRegGet: return "REG_GET";
    case MsgType::kRegCas: return "REG_CAS";
    case MsgType::kRegPoll: return "REG_POLL";
    case MsgType::kRegList: return "REG_LIST";
    case MsgType::kShutdown: return "SHUTDOWN";
    case MsgType::kInject: return "INJECT";
    case MsgType::kRollback: return "ROLLBACK";
  }
  return "UNKNOWN";
}

MsgType peek_type(std::span<const std::uint8_t> request) {
  BinaryReader r(request);
  return static_cast<MsgType>(r.u16());
}

std::vector<std::uint8_t> make_request(
    MsgType type, const std::function<void(BinaryWriter&)>& payload) {
  BinaryWriter w;
  w.u16(static_cast<std::uint16_t>(type));
  if (payload) payload(w);
  return w.take();
}

BinaryReader open_request(std::span<const std::uint8_t> request, MsgType& type) {
  BinaryReader r(request);
  type = static_cast<MsgType>(r.u16());
  return r;
}

std::vector<std::uint8_t> ok_response(
    const std::function<void(BinaryWriter&)>& payload) {
  BinaryWriter w;
  w.u16(0);
  w.str("");
  if (payload) payload(w);
  return w.take();
}

std::vector<std::uint8_t> error_response(ErrorCode code, std::string_view message) {
  BinaryWriter w;
  w.u16(static_cast<std::uint16_t>(code));
  w.str(message);
  return w.take();
}

BinaryReader open_response(std::span<const std::uint8_t> response) {
  BinaryReader r(response);
  const std::uint16_t status = r.u16();
  std::string message = r.str();
  if (status != 0) throw Error(static_cast<ErrorCode>(status), message);
  return r;
}

}  // namespace weips::net
