#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace weips::registry {

struct Entry {
  std::string value;
  std::uint64_t cas_version = 0;  // 0 never appears on a live entry
};

struct Change {
  std::uint64_t seq = 0;
  std::string key;
  std::string value;
  std::uint64_t cas_version = 0;
  bool deleted = false;
};

// Single-writer-per-key coordination store: linearizable compare-and-set over
// string keys plus a sequence-numbered change feed for long-poll watches.
class RegistryCore {
 public:
  // expected_version 0 means create-if-absent. Returns the new cas_version,
  // or nullopt when the expectation failed.
  std::optional<std::uint64_t> compare_and_set(const std::string& key,
                                               const std::string& value,
                                               std::uint64_t expected_version);

  // Unconditional write; returns the new cas_version.
  std::uint64_t put(const std::string& key, const std::string& value);

  bool erase(const std::string& key, std::uint64_t expected_version);

  std::optional<Entry> get(const std::string& key) const;

  std::vector<std::pair<std::string, Entry>> list_prefix(
      const std::string& prefix) const;

  // Changes with seq > after_seq. Blocks up to timeout_ms while none exist
  // (0 = return immediately).
  std::vector<Change> poll(std::uint64_t after_seq, std::int64_t timeout_ms);

  std::uint64_t head_seq() const;

 private:
  std::uint64_t record_change_locked(const std::string& key,
                                     const std::string& value,
                                     std::uint64_t cas_version, bool deleted);

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, Entry> data_;
  std::vector<Change> history_;  // history_[i].seq == i + 1
  std::uint64_t next_cas_ = 1;
};

// Accessor used by everything above the core, so callers work identically
// against an embedded core or a remote registry process.
class RegistryHandle {
 public:
  virtual ~RegistryHandle() = default;
  virtual std::optional<Entry> get(const std::string& key) = 0;
  virtual std::optional<std::uint64_t> compare_and_set(
      const std::string& key, const std::string& value,
      std::uint64_t expected_version) = 0;
  virtual bool erase(const std::string& key, std::uint64_t expected_version) = 0;
  virtual std::vector<std::pair<std::string, Entry>> list_prefix(
      const std::string& prefix) = 0;
  virtual std::vector<Change> poll(std::uint64_t after_seq,
                                   std::int64_t timeout_ms) = 0;

  // Read-modify-write loop over compare_and_set; fn maps the current value
  // (nullopt when absent) to the next one. Returns the value that won.
  std::string update(const std::string& key,
                     const std::function<std::string(
                         const std::optional<std::string>&)>& fn);
};

class EmbeddedRegistry final : public RegistryHandle {
 public:
  explicit EmbeddedRegistry(std::shared_ptr<RegistryCore> core)
      : core_(std::move(core)) {}

  std::optional<Entry> get(const std::string& key) override {
    return core_->get(key);
  }
  std::optional<std::uint64_t> compare_and_set(
      const std::string& key, const std::string& value,
      std::uint64_t expected_version) override {
    return core_->compare_and_set(key, value, expected_version);
  }
  bool erase(const std::string& key, std::uint64_t expected_version) override {
    return core_->erase(key, expected_version);
  }
  std::vector<std::pair<std::string, Entry>> list_prefix(
      const std::string& prefix) override {
    return core_->list_prefix(prefix);
  }
  std::vector<Change> poll(std::uint64_t after_seq,
                           std::int64_t timeout_ms) override {
    return core_->poll(after_seq, timeout_ms);
  }

  RegistryCore& core() { return *core_; }

 private:
  std::shared_ptr<RegistryCore> core_;
};

}  // namespace weips::registry
