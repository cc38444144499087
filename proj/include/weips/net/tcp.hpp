#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "weips/net/bus.hpp"

namespace weips::net {

// Blocking TCP client with one cached connection per endpoint. Calls to the
// same endpoint serialize; an IO failure drops the cached connection and
// surfaces as unavailable (timeout for deadline overruns).
class TcpBus : public Bus {
 public:
  ~TcpBus() override;

  std::vector<std::uint8_t> call(const std::string& endpoint,
                                 std::span<const std::uint8_t> request,
                                 std::int64_t timeout_ms) override;

  void drop_connections();

 private:
  struct Conn {
    std::mutex mu;
    int fd = -1;
  };
  std::shared_ptr<Conn> conn_for(const std::string& endpoint);

  std::mutex map_mu_;
  std::unordered_map<std::string, std::shared_ptr<Conn>> conns_;
};

// Accept loop plus one thread per connection; each frame read is answered
// with one handler invocation. Pass port 0 to bind an ephemeral port.
class TcpServer {
 public:
  TcpServer(std::uint16_t port, Handler handler);
  ~TcpServer();

  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return port_; }
  std::string endpoint() const { return "127.0.0.1:" + std::to_string(port_); }
  void stop();

 private:
  void accept_loop();
  void serve_connection(int fd);

  Handler handler_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::thread acceptor_;
  std::mutex workers_mu_;
  std::vector<std::thread> workers_;
};

}  // namespace weips::net
