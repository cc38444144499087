#include "weips/net/bus.hpp"

#include "weips/error.hpp"
#include "weips/net/tcp.hpp"

namespace weips::net {

void LocalBus::register_endpoint(const std::string& name, Handler handler) {
  std::unique_lock lock(mu_);
  handlers_[name] = std::move(handler);
}

void LocalBus::unregister_endpoint(const std::string& name) {
  std::unique_lock lock(mu_);
  handlers_.erase(name);
}

bool LocalBus::has_endpoint(const std::string& name) const {
  std::shared_lock lock(mu_);
  return handlers_.contains(name);
}

std::vector<std::uint8_t> LocalBus::call(const std::string& endpoint,
                                         std::span<const std::uint8_t> request,
                                         std::int64_t timeout_ms) {
  (void)timeout_ms;
  Handler handler;
  {
    std::shared_lock lock(mu_);
    auto it = handlers_.find(endpoint);
    if (it == handlers_.end())
      throw Error(ErrorCode::kUnavailable, "no endpoint: " + endpoint);
    handler = it->second;
  }
  return handler(request);
}

DualBus::DualBus(std::shared_ptr<LocalBus> local) : local_(std::move(local)) {}

DualBus::~DualBus() = default;

std::vector<std::uint8_t> DualBus::call(const std::string& endpoint,
                                        std::span<const std::uint8_t> request,
                                        std::int64_t timeout_ms) {
  if (endpoint.rfind("local:", 0) == 0)
    return local_->call(endpoint.substr(6), request, timeout_ms);
  std::call_once(tcp_once_, [this] { tcp_ = std::make_unique<TcpBus>(); });
  return tcp_->call(endpoint, request, timeout_ms);
}

}  // namespace weips::net
