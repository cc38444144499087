#pragma once

#include <memory>

#include "weips/master/shard.hpp"
#include "weips/net/bus.hpp"
#include "weips/scheduler/registry.hpp"
#include "weips/slave/shard.hpp"

namespace weips::net {

enum class Role : std::uint8_t { kMaster = 0, kSlave = 1, kScheduler = 2, kRegistry = 3 };

const char* role_name(Role r);

// Frame dispatchers. Each turns one request body into one response body and
// never throws; errors come back as error responses. The generation tags the
// incarnation assigned by whoever spawned this shard, so probes can tell a
// replacement from a stale survivor.
Handler make_master_handler(std::shared_ptr<master::MasterShard> shard,
                            std::uint64_t generation);

Handler make_slave_handler(std::shared_ptr<slave::SlaveShard> shard,
                           std::uint64_t generation);

Handler make_registry_handler(std::shared_ptr<registry::RegistryCore> core);

}  // namespace weips::net
