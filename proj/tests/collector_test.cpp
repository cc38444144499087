#include "weips/master/collector.hpp"

#include <gtest/gtest.h>

#include <thread>
#include <unordered_map>
#include <vector>

namespace weips::master {
namespace {

TEST(Collector, SingleThreadFifo) {
  Collector c(16);
  for (FeatureId i = 0; i < 10; ++i) {
    c.collect({i, i % 2 == 0 ? UpdateOp::kUpsert : UpdateOp::kDelete});
  }
  std::vector<DirtyEntry> out;
  EXPECT_EQ(c.drain(out, 100), 10u);
  ASSERT_EQ(out.size(), 10u);
  for (FeatureId i = 0; i < 10; ++i) {
    EXPECT_EQ(out[i].feature_id, i);
    EXPECT_EQ(out[i].op, i % 2 == 0 ? UpdateOp::kUpsert : UpdateOp::kDelete);
  }
}

TEST(Collector, DrainRespectsMax) {
  Collector c(16);
  for (FeatureId i = 0; i < 8; ++i) c.collect({i, UpdateOp::kUpsert});
  std::vector<DirtyEntry> out;
  EXPECT_EQ(c.drain(out, 3), 3u);
  EXPECT_EQ(c.drain(out, 3), 3u);
  EXPECT_EQ(c.drain(out, 3), 2u);
  EXPECT_EQ(out.size(), 8u);
  EXPECT_EQ(c.drain(out, 3), 0u);
}

TEST(Collector, TryCollectReportsFullRing) {
  Collector c(4);
  int accepted = 0;
  for (int i = 0; i < 16; ++i) {
    if (c.try_collect({static_cast<FeatureId>(i), UpdateOp::kUpsert})) ++accepted;
  }
  EXPECT_EQ(accepted, 4);
  std::vector<DirtyEntry> out;
  EXPECT_EQ(c.drain(out, 16), 4u);
  EXPECT_TRUE(c.try_collect({99, UpdateOp::kUpsert}));
}

// Conservation with a deliberately tiny ring so producers hit backpressure
// and the ring wraps many times. Entry identity is producer * 2^32 + seq,
// which also lets the consumer check per-producer FIFO order.
TEST(Collector, ConservationUnderConcurrencyWithWraparound) {
  constexpr int kProducers = 4;
  constexpr std::uint64_t kPerProducer = 200000;
  Collector c(256);

  std::vector<std::thread> producers;
  producers.reserve(kProducers);
  for (int p = 0; p < kProducers; ++p) {
    producers.emplace_back([&c, p] {
      for (std::uint64_t s = 0; s < kPerProducer; ++s) {
        c.collect({(static_cast<FeatureId>(p) << 32) | s, UpdateOp::kUpsert});
      }
    });
  }

  std::uint64_t consumed = 0;
  std::unordered_map<std::uint64_t, std::uint64_t> next_seq;
  std::vector<DirtyEntry> out;
  while (consumed < kProducers * kPerProducer) {
    out.clear();
    const std::size_t n = c.drain(out, 1024);
    if (n == 0) {
      std::this_thread::yield();
      continue;
    }
    for (const auto& e : out) {
      const std::uint64_t p = e.feature_id >> 32;
      const std::uint64_t s = e.feature_id & 0xFFFFFFFFull;
      ASSERT_EQ(s, next_seq[p]) << "producer " << p << " out of order";
      ++next_seq[p];
    }
    consumed += n;
  }

  for (auto& t : producers) t.join();
  EXPECT_EQ(consumed, kProducers * kPerProducer);
  EXPECT_EQ(c.enqueued(), kProducers * kPerProducer);
  EXPECT_EQ(c.drained(), kProducers * kPerProducer);
  std::vector<DirtyEntry> rest;
  EXPECT_EQ(c.drain(rest, 16), 0u);
  EXPECT_GT(c.backpressure_waits(), 0u);
}

}  // namespace
}  // namespace weips::master
