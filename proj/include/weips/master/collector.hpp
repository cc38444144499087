#pragma once

#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

#include "weips/types.hpp"

namespace weips::master {

// Dirty-id notification produced on the update path. Carries no parameter
// values; the gather stage reads the current full slot at emission time.
struct DirtyEntry {
  FeatureId feature_id = 0;
  UpdateOp op = UpdateOp::kUpsert;
};

// Bounded lock-free multi-producer queue (Vyukov ring) with one consumer.
// Producers spin-yield when the ring is full (backpressure), so entries are
// never dropped; capacity is rounded up to a power of two.
class Collector {
 public:
  explicit Collector(std::size_t capacity = 1u << 20);

  Collector(const Collector&) = delete;
  Collector& operator=(const Collector&) = delete;

  bool try_collect(DirtyEntry entry);

  // Blocks (yielding) until the entry is enqueued.
  void collect(DirtyEntry entry) {
    while (!try_collect(entry)) {
      backpressure_waits_.fetch_add(1, std::memory_order_relaxed);
      std::this_thread::yield();
    }
  }

  // Single-consumer drain of up to `max` entries, in queue order.
  std::size_t drain(std::vector<DirtyEntry>& out, std::size_t max);

  std::uint64_t enqueued() const { return enqueued_.load(std::memory_order_relaxed); }
  std::uint64_t drained() const { return drained_.load(std::memory_order_relaxed); }
  std::uint64_t backpressure_waits() const {
    return backpressure_waits_.load(std::memory_order_relaxed);
  }

 private:
  struct Cell {
    std::atomic<std::size_t> sequence;
    DirtyEntry entry;
  };

  std::size_t mask_;
  std::vector<Cell> cells_;
  alignas(64) std::atomic<std::size_t> head_{0};  // producers
  alignas(64) std::atomic<std::size_t> tail_{0};  // consumer
  std::atomic<std::uint64_t> enqueued_{0};
  std::atomic<std::uint64_t> drained_{0};
  std::atomic<std::uint64_t> backpressure_waits_{0};
};

}  // namespace weips::master
