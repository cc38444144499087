#include "weips/scheduler/registry.hpp"

#include <chrono>

#include "weips/error.hpp"

namespace weips::registry {

std::uint64_t RegistryCore::record_change_locked(const std::string& key,
                                                 const std::string& value,
                                                 std::uint64_t cas_version,
                                                 bool deleted) {
  Change c;
  c.seq = history_.size() + 1;
  c.key = key;
  c.value = value;
  c.cas_version = cas_version;
  c.deleted = deleted;
  history_.push_back(std::move(c));
  return history_.back().seq;
}

std::optional<std::uint64_t> RegistryCore::compare_and_set(
    const std::string& key, const std::string& value,
    std::uint64_t expected_version) {
  std::unique_lock lock(mu_);
  auto it = data_.find(key);
  const std::uint64_t current = it == data_.end() ? 0 : it->second.cas_version;
  if (current != expected_version) return std::nullopt;
  Entry e;
  e.value = value;
  e.cas_version = next_cas_++;
  data_[key] = e;
  record_change_locked(key, e.value, e.cas_version, false);
  lock.unlock();
  cv_.notify_all();
  return e.cas_version;
}

std::uint64_t RegistryCore::put(const std::string& key, const std::string& value) {
  std::unique_lock lock(mu_);
  Entry e;
  e.value = value;
  e.cas_version = next_cas_++;
  data_[key] = e;
  record_change_locked(key, e.value, e.cas_version, false);
  lock.unlock();
  cv_.notify_all();
  return e.cas_version;
}

bool RegistryCore::erase(const std::string& key, std::uint64_t expected_version) {
  std::unique_lock lock(mu_);
  auto it = data_.find(key);
  if (it == data_.end()) return false;
  if (expected_version != 0 && it->second.cas_version != expected_version)
    return false;
  data_.erase(it);
  record_change_locked(key, "", 0, true);
  lock.unlock();
  cv_.notify_all();
  return true;
}

std::optional<Entry> RegistryCore::get(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = data_.find(key);
  if (it == data_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::pair<std::string, Entry>> RegistryCore::list_prefix(
    const std::string& prefix) const {
  std::lock_guard lock(mu_);
  std::vector<std::pair<std::string, Entry>> out;
  for (auto it = data_.lower_bound(prefix); it != data_.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    out.emplace_back(it->first, it->second);
  }
  return out;
}

std::vector<Change> RegistryCore::poll(std::uint64_t after_seq,
                                       std::int64_t timeout_ms) {
  std::unique_lock lock(mu_);
  if (timeout_ms > 0 && history_.size() <= after_seq) {
    cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                 [&] { return history_.size() > after_seq; });
  }
  std::vector<Change> out;
  for (std::size_t i = after_seq; i < history_.size(); ++i)
    out.push_back(history_[i]);
  return out;
}

std::uint64_t RegistryCore::head_seq() const {
  std::lock_guard lock(mu_);
  return history_.size();
}

std::string RegistryHandle::update(
    const std::string& key,
    const std::function<std::string(const std::optional<std::string>&)>& fn) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    auto current = get(key);
    std::optional<std::string> cur_value;
    std::uint64_t expected = 0;
    if (current) {
      cur_value = current->value;
      expected = current->cas_version;
    }
    std::string next = fn(cur_value);
    if (compare_and_set(key, next, expected)) return next;
  }
  throw Error(ErrorCode::kConflict, "registry update contention on " + key);
}

}  // namespace weips::registry
