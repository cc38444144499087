#include "weips/net/tcp.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "weips/error.hpp"

namespace weips::net {

namespace {

void set_timeouts(int fd, std::int64_t timeout_ms) {
  if (timeout_ms <= 0) timeout_ms = 30'000;
  timeval tv{};
  tv.tv_sec = timeout_ms / 1000;
  tv.tv_usec = (timeout_ms % 1000) * 1000;
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
}

bool write_all(int fd, const std::uint8_t* data, std::size_t len) {
  std::size_t off = 0;
  while (off < len) {
    ssize_t n = ::write(fd, data + off, len - off);
    if (n <= 0) return false;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

// Returns 1 on success, 0 on clean EOF at a frame boundary, -1 on error or
// timeout mid-read.
int read_all(int fd, std::uint8_t* data, std::size_t len, bool* timed_out) {
  std::size_t off = 0;
  while (off < len) {
    ssize_t n = ::read(fd, data + off, len - off);
    if (n == 0) return off == 0 ? 0 : -1;
    if (n < 0) {
      if (timed_out != nullptr && (errno == EAGAIN || errno == EWOULDBLOCK))
        *timed_out = true;
      return -1;
    }
    off += static_cast<std::size_t>(n);
  }
  return 1;
}

bool write_frame(int fd, std::span<const std::uint8_t> body) {
  std::uint32_t len = static_cast<std::uint32_t>(body.size());
  std::uint8_t hdr[4];
  std::memcpy(hdr, &len, 4);
  if (!write_all(fd, hdr, 4)) return false;
  return write_all(fd, body.data(), body.size());
}

// 1 = frame read, 0 = clean EOF, -1 = error/timeout.
int read_frame(int fd, std::vector<std::uint8_t>& body, bool* timed_out) {
  std::uint8_t hdr[4];
  int rc = read_all(fd, hdr, 4, timed_out);
  if (rc != 1) return rc;
  std::uint32_t len = 0;
  std::memcpy(&len, hdr, 4);
  if (len > (64u << 20)) return -1;
  body.resize(len);
  return read_all(fd, body.data(), len, timed_out) == 1 ? 1 : -1;
}

int connect_to(const std::string& endpoint, std::int64_t timeout_ms) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos)
    throw Error(ErrorCode::kInvalidArgument, "bad endpoint: " + endpoint);
  const std::string host = endpoint.substr(0, colon);
  const int port = std::stoi(endpoint.substr(colon + 1));

  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error(ErrorCode::kIo, "socket() failed");
  set_timeouts(fd, timeout_ms);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw Error(ErrorCode::kInvalidArgument, "bad host in endpoint: " + endpoint);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw Error(ErrorCode::kUnavailable, "connect to " + endpoint + " failed");
  }
  return fd;
}

}  // namespace

TcpBus::~TcpBus() { drop_connections(); }

std::shared_ptr<TcpBus::Conn> TcpBus::conn_for(const std::string& endpoint) {
  std::lock_guard lock(map_mu_);
  auto& slot = conns_[endpoint];
  if (!slot) slot = std::make_shared<Conn>();
  return slot;
}

void TcpBus::drop_connections() {
  std::lock_guard lock(map_mu_);
  for (auto& [ep, conn] : conns_) {
    (void)ep;
    std::lock_guard cl(conn->mu);
    if (conn->fd >= 0) {
      ::close(conn->fd);
      conn->fd = -1;
    }
  }
}

std::vector<std::uint8_t> TcpBus::call(const std::string& endpoint,
                                       std::span<const std::uint8_t> request,
                                       std::int64_t timeout_ms) {
  auto conn = conn_for(endpoint);
  std::lock_guard lock(conn->mu);
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (conn->fd < 0) conn->fd = connect_to(endpoint, timeout_ms);
    set_timeouts(conn->fd, timeout_ms);
    if (!write_frame(conn->fd, request)) {
      ::close(conn->fd);
      conn->fd = -1;
      // A stale cached connection fails the first write; retry once fresh.
      if (attempt == 0) continue;
      throw Error(ErrorCode::kUnavailable, "write to " + endpoint + " failed");
    }
    std::vector<std::uint8_t> body;
    bool timed_out = false;
    int rc = read_frame(conn->fd, body, &timed_out);
    if (rc == 1) return body;
    ::close(conn->fd);
    conn->fd = -1;
    if (timed_out)
      throw Error(ErrorCode::kTimeout, "call to " + endpoint + " timed out");
    if (attempt == 0 && rc == 0) continue;
    throw Error(ErrorCode::kUnavailable, "read from " + endpoint + " failed");
  }
  throw Error(ErrorCode::kUnavailable, "call to " + endpoint + " failed");
}

TcpServer::TcpServer(std::uint16_t port, Handler handler)
    : handler_(std::move(handler)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::kIo, "socket() failed");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(listen_fd_);
    throw Error(ErrorCode::kIo, "bind to port " + std::to_string(port) + " failed");
  }
  if (::listen(listen_fd_, 64) != 0) {
    ::close(listen_fd_);
    throw Error(ErrorCode::kIo, "listen failed");
  }
  socklen_t alen = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &alen);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::stop() {
  if (stop_.exchange(true)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(workers_mu_);
    workers.swap(workers_);
  }
  for (auto& t : workers)
    if (t.joinable()) t.join();
}

void TcpServer::accept_loop() {
  while (!stop_.load(std::memory_order_relaxed)) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stop_.load(std::memory_order_relaxed)) return;
      continue;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::lock_guard lock(workers_mu_);
    workers_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void TcpServer::serve_connection(int fd) {
  std::vector<std::uint8_t> body;
  while (!stop_.load(std::memory_order_relaxed)) {
    int rc = read_frame(fd, body, nullptr);
    if (rc != 1) break;
    std::vector<std::uint8_t> response;
    try {
      response = handler_(body);
    } catch (...) {
      break;
    }
    if (!write_frame(fd, response)) break;
  }
  ::close(fd);
}

}  // namespace weips::net
