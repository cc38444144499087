#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace weips::net {

using Handler =
    std::function<std::vector<std::uint8_t>(std::span<const std::uint8_t>)>;

// Request/response transport. Endpoints look like "local:<name>" for the
// in-process bus or "<host>:<port>" for TCP.
class Bus {
 public:
  virtual ~Bus() = default;
  virtual std::vector<std::uint8_t> call(const std::string& endpoint,
                                         std::span<const std::uint8_t> request,
                                         std::int64_t timeout_ms) = 0;
};

// Single-process dispatch table. Calls run the handler on the caller's
// thread; an unregistered endpoint throws unavailable, which is how a killed
// shard looks to its peers.
class LocalBus : public Bus {
 public:
  void register_endpoint(const std::string& name, Handler handler);
  void unregister_endpoint(const std::string& name);
  bool has_endpoint(const std::string& name) const;

  std::vector<std::uint8_t> call(const std::string& endpoint,
                                 std::span<const std::uint8_t> request,
                                 std::int64_t timeout_ms) override;

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, Handler> handlers_;
};

class TcpBus;

// Routes "local:" endpoints to a LocalBus and anything else over TCP. The
// TCP side is created lazily so single-process runs never open sockets.
class DualBus : public Bus {
 public:
  explicit DualBus(std::shared_ptr<LocalBus> local);
  ~DualBus() override;

  std::vector<std::uint8_t> call(const std::string& endpoint,
                                 std::span<const std::uint8_t> request,
                                 std::int64_t timeout_ms) override;

  LocalBus& local() { return *local_; }

 private:
  std::shared_ptr<LocalBus> local_;
  std::once_flag tcp_once_;
  std::unique_ptr<TcpBus> tcp_;
};

}  // namespace weips::net
