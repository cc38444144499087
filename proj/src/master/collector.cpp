#include "weips/master/collector.hpp"

namespace weips::master {

namespace {
std::size_t round_up_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}
}  // namespace

Collector::Collector(std::size_t capacity)
    : mask_(round_up_pow2(capacity < 2 ? 2 : capacity) - 1),
      cells_(mask_ + 1) {
  for (std::size_t i = 0; i <= mask_; ++i) {
    cells_[i].sequence.store(i, std::memory_order_relaxed);
  }
}

bool Collector::try_collect(DirtyEntry entry) {
  std::size_t pos = head_.load(std::memory_order_relaxed);
  for (;;) {
    Cell& cell = cells_[pos & mask_];
    const std::size_t seq = cell.sequence.load(std::memory_order_acquire);
    const std::intptr_t diff =
        static_cast<std::intptr_t>(seq) - static_cast<std::intptr_t>(pos);
    if (diff == 0) {
      if (head_.compare_exchange_weak(pos, pos + 1,
                                      std::memory_order_relaxed)) {
        cell.entry = entry;
        cell.sequence.store(pos + 1, std::memory_order_release);
        enqueued_.fetch_add(1, std::memory_order_relaxed);
        return true;
      }
    } else if (diff < 0) {
      return false;  // full
    } else {
      pos = head_.load(std::memory_order_relaxed);
    }
  }
}

std::size_t Collector::drain(std::vector<DirtyEntry>& out, std::size_t max) {
  std::size_t n = 0;
  std::size_t pos = tail_.load(std::memory_order_relaxed);
  while (n < max) {
    Cell& cell = cells_[pos & mask_];
    const std::size_t seq = cell.sequence.load(std::memory_order_acquire);
    if (static_cast<std::intptr_t>(seq) - static_cast<std::intptr_t>(pos + 1) !=
        0) {
      break;  // empty (or a producer mid-publish)
    }
    out.push_back(cell.entry);
    cell.sequence.store(pos + mask_ + 1, std::memory_order_release);
    ++pos;
    ++n;
  }
  tail_.store(pos, std::memory_order_relaxed);
  drained_.fetch_add(n, std::memory_order_relaxed);
  return n;
}

}  // namespace weips::master
