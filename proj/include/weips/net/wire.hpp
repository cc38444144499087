#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "weips/codec.hpp"
#include "weips/error.hpp"

namespace weips::net {

// Every exchange is one request frame answered by one response frame. On the
// wire a frame is a u32 little-endian body length followed by the body; the
// in-process bus passes bodies directly.
//
// Request body:  u16 message type, then the message payload.
// Response body: u16 status (0 = ok, else an ErrorCode), a length-prefixed
//                error message (empty on ok), then the response payload.

enum class MsgType : std::uint16_t {
  kPushGrad = 1,
  kPullParams = 2,
  kPullServing = 3,
  kSaveCkpt = 4,
  kLoadCkpt = 5,
  kHealth = 6,
  kLoadVersion = 7,
  kSwitchVersion = 8,
  kTriggerCkpt = 9,
  kStatus = 10,
  kDumpTable = 11,
  kForceSync = 12,
  kRegGet = 13,
  kRegCas = 14,
  kRegPoll = 15,
  kRegList = 16,
  kShutdown = 17,
  kInject = 18,
  kRollback = 19,
};

const char* msg_type_name(MsgType t);

// Reads the message type without consuming the request.
MsgType peek_type(std::span<const std::uint8_t> request);

std::vector<std::uint8_t> make_request(
    MsgType type, const std::function<void(BinaryWriter&)>& payload = {});

// Returns a reader positioned at the request payload (type already consumed).
BinaryReader open_request(std::span<const std::uint8_t> request, MsgType& type);

std::vector<std::uint8_t> ok_response(
    const std::function<void(BinaryWriter&)>& payload = {});

std::vector<std::uint8_t> error_response(ErrorCode code, std::string_view message);

// Throws the carried Error when status != 0; otherwise returns a reader
// positioned at the response payload.
BinaryReader open_response(std::span<const std::uint8_t> response);

}  // namespace weips::net
