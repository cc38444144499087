#include "weips/master/shard.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <map>
#include <set>
#include <thread>

#include "weips/error.hpp"
#include "weips/rng.hpp"

namespace weips::master {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("weips-master-test-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

model::GradientMap lr_grad(double g) { return {{"w", {g}}}; }

MasterConfig single_shard_cfg(GatherMode mode, std::uint32_t threshold = 4096) {
  MasterConfig cfg;
  cfg.model_id = "ctr";
  cfg.shard_id = 0;
  cfg.num_shards = 1;
  cfg.gather.mode = mode;
  cfg.gather.threshold_count = threshold;
  return cfg;
}

// Last-op-wins fold of a log prefix into the serving table it describes.
std::map<FeatureId, model::ParameterSlot> fold_log(plog::PartitionedLog& log,
                                                   PartitionId partition,
                                                   Offset end) {
  std::map<FeatureId, model::ParameterSlot> state;
  for (const auto& entry : log.read_from(partition, 0, end)) {
    const auto& r = *entry.record;
    if (r.op == UpdateOp::kUpsert) {
      state[r.feature_id] = r.payload;
    } else {
      state.erase(r.feature_id);
    }
  }
  return state;
}

TEST(Gather, RealtimeEmitsOnNextPass) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  MasterShard shard(single_shard_cfg(GatherMode::kRealtime),
                    model::ModelSchema::lr_ftrl({}), log,
                    std::make_shared<LogicalClock>());

  const auto ack = shard.push_gradients({{7, lr_grad(1.0)}});
  EXPECT_EQ(ack.applied, 1u);
  EXPECT_EQ(shard.sync_pass(), 1u);
  EXPECT_EQ(log->tail(0), 1u);
  EXPECT_EQ(shard.sync_pass(), 0u);

  const auto entries = log->read_from(0, 0, 1);
  EXPECT_EQ(entries[0].record->feature_id, 7u);
  EXPECT_EQ(entries[0].record->op, UpdateOp::kUpsert);
  EXPECT_DOUBLE_EQ(entries[0].record->payload.scalar("w"), -0.05);
  EXPECT_TRUE(entries[0].record->payload.find("z") == nullptr);
}

TEST(Gather, ThresholdHoldsUntilDistinctIdCount) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  MasterShard shard(single_shard_cfg(GatherMode::kThreshold, 4),
                    model::ModelSchema::lr_ftrl({}), log,
                    std::make_shared<LogicalClock>());

  // Repeated touches of one id count once toward the threshold.
  for (int i = 0; i < 3; ++i) shard.push_gradients({{0, lr_grad(0.1)}});
  shard.push_gradients({{1, lr_grad(0.1)}, {2, lr_grad(0.1)}});
  EXPECT_EQ(shard.sync_pass(), 0u);
  EXPECT_EQ(log->tail(0), 0u);

  shard.push_gradients({{3, lr_grad(0.1)}});
  EXPECT_EQ(shard.sync_pass(), 4u);
  EXPECT_EQ(log->tail(0), 4u);
}

TEST(Gather, PeriodFiresOnClockAdvance) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  auto clock = std::make_shared<LogicalClock>();
  auto cfg = single_shard_cfg(GatherMode::kPeriod);
  cfg.gather.period_ms = 10'000;
  MasterShard shard(cfg, model::ModelSchema::lr_ftrl({}), log, clock);

  shard.push_gradients({{5, lr_grad(1.0)}});
  EXPECT_EQ(shard.sync_pass(), 0u);
  clock->advance_ms(9'999);
  EXPECT_EQ(shard.sync_pass(), 0u);
  clock->advance_ms(1);
  EXPECT_EQ(shard.sync_pass(), 1u);

  // The timer fires on schedule even with nothing dirty; no records result.
  clock->advance_ms(10'000);
  EXPECT_EQ(shard.sync_pass(), 0u);
  EXPECT_EQ(log->tail(0), 1u);
}

TEST(Gather, DedupKeepsOneRecordPerIdWithFinalValue) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  MasterShard shard(single_shard_cfg(GatherMode::kThreshold, 1000),
                    model::ModelSchema::lr_ftrl({}), log,
                    std::make_shared<LogicalClock>());

  for (int i = 0; i < 5; ++i) shard.push_gradients({{9, lr_grad(0.5)}});
  EXPECT_EQ(shard.force_sync(), 1u);

  const auto entries = log->read_from(0, 0, 10);
  ASSERT_EQ(entries.size(), 1u);
  const auto table = shard.dump_table();
  ASSERT_EQ(table.size(), 1u);
  EXPECT_TRUE(model::bitwise_equal(
      entries[0].record->payload,
      model::transform_for_serving(shard.schema(), table[0].second)));
}

TEST(Gather, DeleteAfterUpsertCollapsesToDelete) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  MasterShard shard(single_shard_cfg(GatherMode::kThreshold, 1000),
                    model::ModelSchema::lr_ftrl({}), log,
                    std::make_shared<LogicalClock>());

  shard.push_gradients({{4, lr_grad(1.0)}});
  const auto evicted = shard.filter_features(FilterPolicy{.max_params = 0, .max_epoch_age = {}});
  EXPECT_EQ(evicted, std::vector<FeatureId>{4});

  EXPECT_EQ(shard.force_sync(), 1u);
  const auto entries = log->read_from(0, 0, 10);
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0].record->op, UpdateOp::kDelete);
  EXPECT_TRUE(entries[0].record->payload.empty());
}

TEST(Ownership, ForeignIdsAreRejectedUpfront) {
  MasterConfig cfg = single_shard_cfg(GatherMode::kRealtime);
  cfg.shard_id = 1;
  cfg.num_shards = 4;
  MasterShard shard(cfg, model::ModelSchema::lr_ftrl({}),
                    std::make_shared<plog::MemoryLog>(4),
                    std::make_shared<LogicalClock>());

  EXPECT_THROW(shard.push_gradients({{0, lr_grad(1.0)}}), Error);
  EXPECT_THROW(shard.pull_parameters({2}), Error);
  EXPECT_EQ(shard.push_gradients({{5, lr_grad(1.0)}}).applied, 1u);
  EXPECT_EQ(shard.partition(), 1u);
}

TEST(Push, NonFiniteResultRejectsThatIdOnly) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  MasterShard shard(single_shard_cfg(GatherMode::kThreshold, 1000),
                    model::ModelSchema::lr_ftrl({}), log,
                    std::make_shared<LogicalClock>());

  shard.push_gradients({{1, lr_grad(1.0)}});
  const auto before = shard.pull_parameters({1});

  const auto ack = shard.push_gradients(
      {{1, lr_grad(1e308)}, {2, lr_grad(0.5)}});
  EXPECT_EQ(ack.rejected, 1u);
  EXPECT_EQ(ack.applied, 1u);

  const auto after = shard.pull_parameters({1});
  EXPECT_TRUE(model::bitwise_equal(before[0].second, after[0].second));
  EXPECT_EQ(shard.stats().rejected_updates, 1u);
  EXPECT_EQ(shard.stats().param_count, 2u);
}

TEST(Pull, AbsentIdsComeBackZeroInitialized) {
  MasterShard shard(single_shard_cfg(GatherMode::kRealtime),
                    model::ModelSchema::lr_ftrl({}),
                    std::make_shared<plog::MemoryLog>(1),
                    std::make_shared<LogicalClock>());
  const auto out = shard.pull_parameters({42});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].first, 42u);
  EXPECT_EQ(out[0].second,
            model::ParameterSlot::zero(shard.schema(), model::View::kTraining));
}

TEST(Checkpoint, SnapshotEqualsFoldOfLogPrefixAtRecordedOffsets) {
  TempDir dir;
  auto log = std::make_shared<plog::MemoryLog>(2);
  MasterShard shard(single_shard_cfg(GatherMode::kThreshold, 8),
                    model::ModelSchema::lr_ftrl({}), log,
                    std::make_shared<LogicalClock>());

  Rng rng(500);
  for (int round = 0; round < 40; ++round) {
    std::vector<std::pair<FeatureId, model::GradientMap>> updates;
    for (int i = 0; i < 5; ++i) {
      updates.emplace_back(rng.next_below(60), lr_grad(rng.uniform(-1.0, 1.0)));
    }
    shard.push_gradients(updates);
    shard.sync_pass();
    if (round == 25) shard.filter_features(FilterPolicy{.max_params = 20, .max_epoch_age = {}});
  }

  const auto meta = shard.save_checkpoint(1, dir.str());
  EXPECT_EQ(meta.version, 1u);
  EXPECT_EQ(meta.num_shards, 1u);
  ASSERT_TRUE(meta.log_offsets.count(0));

  // Anything appended after the snapshot must not disturb the prefix fold.
  shard.push_gradients({{3, lr_grad(2.0)}});
  shard.force_sync();

  const auto snapshot =
      ckpt::read_shard_snapshot(ckpt::version_dir(dir.str(), "ctr", 1), 0);
  EXPECT_EQ(snapshot.meta.param_count, snapshot.slots.size());

  const auto folded = fold_log(*log, 0, meta.log_offsets.at(0));
  ASSERT_EQ(folded.size(), snapshot.slots.size());
  for (const auto& [id, slot] : snapshot.slots) {
    auto it = folded.find(id);
    ASSERT_NE(it, folded.end()) << "id " << id << " missing from fold";
    EXPECT_TRUE(model::bitwise_equal(
        it->second, model::transform_for_serving(snapshot.schema, slot)))
        << "id " << id;
  }
}

TEST(Checkpoint, ThrowsWhenPendingCannotFlushThenRecovers) {
  TempDir dir;
  auto faulty =
      std::make_shared<plog::FaultyLog>(std::make_shared<plog::MemoryLog>(1));
  MasterShard shard(single_shard_cfg(GatherMode::kThreshold, 1000),
                    model::ModelSchema::lr_ftrl({}), faulty,
                    std::make_shared<WallClock>());

  shard.push_gradients({{1, lr_grad(1.0)}});
  faulty->fail_next_appends(6, false);  // outlasts the 5 retries
  EXPECT_THROW(shard.save_checkpoint(1, dir.str()), Error);
  EXPECT_TRUE(shard.stats().sync_stalled);

  const auto meta = shard.save_checkpoint(1, dir.str());
  EXPECT_EQ(meta.param_count, 1u);
  EXPECT_FALSE(shard.stats().sync_stalled);
  EXPECT_EQ(faulty->tail(0), 1u);
}

TEST(Checkpoint, RestoreReannouncesEveryLoadedId) {
  TempDir dir;
  auto log_a = std::make_shared<plog::MemoryLog>(1);
  MasterShard a(single_shard_cfg(GatherMode::kRealtime),
                model::ModelSchema::lr_ftrl({}), log_a,
                std::make_shared<LogicalClock>());
  for (FeatureId id = 0; id < 30; ++id) {
    a.push_gradients({{id, lr_grad(0.1 * static_cast<double>(id + 1))}});
  }
  a.save_checkpoint(3, dir.str());
  const auto dir_v3 = ckpt::version_dir(dir.str(), "ctr", 3);

  auto log_b = std::make_shared<plog::MemoryLog>(1);
  MasterShard b(single_shard_cfg(GatherMode::kRealtime),
                model::ModelSchema::lr_ftrl({}), log_b,
                std::make_shared<LogicalClock>());
  b.restore_from_checkpoint(dir_v3);
  EXPECT_EQ(b.stats().param_count, 30u);
  EXPECT_EQ(b.force_sync(), 30u);

  const auto folded = fold_log(*log_b, 0, log_b->tail(0));
  const auto table = a.dump_table();
  ASSERT_EQ(folded.size(), table.size());
  for (const auto& [id, slot] : table) {
    EXPECT_TRUE(model::bitwise_equal(
        folded.at(id), model::transform_for_serving(a.schema(), slot)));
  }

  auto log_c = std::make_shared<plog::MemoryLog>(1);
  MasterShard c(single_shard_cfg(GatherMode::kRealtime),
                model::ModelSchema::lr_ftrl({}), log_c,
                std::make_shared<LogicalClock>());
  c.restore_from_checkpoint(dir_v3, false);
  EXPECT_EQ(c.stats().param_count, 30u);
  EXPECT_EQ(c.force_sync(), 0u);
}

TEST(Checkpoint, ReshardPreservesIdSlotMultiset) {
  TempDir dir;
  const auto schema = model::ModelSchema::lr_ftrl({});

  // Three writers, each owning id % 3 == k, checkpointing the same version.
  std::map<FeatureId, model::ParameterSlot> expected;
  Rng rng(88);
  for (ShardId k = 0; k < 3; ++k) {
    MasterConfig cfg = single_shard_cfg(GatherMode::kRealtime);
    cfg.shard_id = k;
    cfg.num_shards = 3;
    MasterShard shard(cfg, schema, std::make_shared<plog::MemoryLog>(3),
                      std::make_shared<LogicalClock>());
    for (int i = 0; i < 70; ++i) {
      const FeatureId id = rng.next_below(500) * 3 + k;
      shard.push_gradients({{id, lr_grad(rng.uniform(-1.0, 1.0))}});
    }
    shard.save_checkpoint(1, dir.str());
    for (const auto& [id, slot] : shard.dump_table()) expected[id] = slot;
  }

  const auto dir_v1 = ckpt::version_dir(dir.str(), "ctr", 1);
  for (std::uint32_t target : {5u, 1u, 3u, 8u}) {
    const auto tables = ckpt::load_for_shard_count(dir_v1, target);
    ASSERT_EQ(tables.size(), target);
    std::map<FeatureId, model::ParameterSlot> merged;
    for (const auto& t : tables) {
      for (const auto& [id, slot] : t.slots) {
        EXPECT_EQ(owner_shard(id, target), t.shard_id);
        ASSERT_FALSE(merged.count(id)) << "id " << id << " loaded twice";
        merged[id] = slot;
      }
    }
    ASSERT_EQ(merged.size(), expected.size()) << "target " << target;
    for (const auto& [id, slot] : expected) {
      EXPECT_TRUE(model::bitwise_equal(merged.at(id), slot)) << "id " << id;
    }
  }

  // A slice load sees exactly the ids that shard would own.
  const auto slice = ckpt::load_slice(dir_v1, 5, 2);
  std::uint64_t expected_in_slice = 0;
  for (const auto& [id, slot] : expected) {
    (void)slot;
    if (owner_shard(id, 5) == 2) ++expected_in_slice;
  }
  EXPECT_EQ(slice.slots.size(), expected_in_slice);
}

TEST(Checkpoint, ReplayOffsetsTakePerPartitionMinimum) {
  TempDir dir;
  const auto schema = model::ModelSchema::lr_ftrl({});
  auto log = std::make_shared<plog::MemoryLog>(2);

  MasterConfig cfg0 = single_shard_cfg(GatherMode::kRealtime);
  cfg0.shard_id = 0;
  cfg0.num_shards = 2;
  MasterShard m0(cfg0, schema, log, std::make_shared<LogicalClock>());
  MasterConfig cfg1 = cfg0;
  cfg1.shard_id = 1;
  MasterShard m1(cfg1, schema, log, std::make_shared<LogicalClock>());

  m0.push_gradients({{0, lr_grad(1.0)}, {2, lr_grad(1.0)}});
  m0.sync_pass();
  m0.save_checkpoint(1, dir.str());

  // Shard 0 keeps writing before shard 1 snapshots, so shard 1's recorded
  // tail for partition 0 is ahead of shard 0's.
  m0.push_gradients({{4, lr_grad(1.0)}});
  m0.sync_pass();
  m1.push_gradients({{1, lr_grad(1.0)}});
  m1.sync_pass();
  m1.save_checkpoint(1, dir.str());

  const auto dir_v1 = ckpt::version_dir(dir.str(), "ctr", 1);
  const auto offsets = ckpt::replay_offsets(dir_v1);
  const auto meta0 = ckpt::read_shard_snapshot(dir_v1, 0).meta;
  const auto meta1 = ckpt::read_shard_snapshot(dir_v1, 1).meta;
  for (const auto& [p, off] : offsets) {
    EXPECT_EQ(off, std::min(meta0.log_offsets.at(p), meta1.log_offsets.at(p)));
  }
  EXPECT_LT(offsets.at(0), meta1.log_offsets.at(0));
}

TEST(Filter, EvictsByCountThenByAge) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  MasterShard shard(single_shard_cfg(GatherMode::kThreshold, 1000),
                    model::ModelSchema::lr_ftrl({}), log,
                    std::make_shared<LogicalClock>());

  std::vector<std::pair<FeatureId, model::GradientMap>> updates;
  for (FeatureId id = 1; id <= 10; ++id) updates.emplace_back(id, lr_grad(0.1));
  shard.push_gradients(updates);  // epochs 1..10 in order

  const auto evicted = shard.filter_features(FilterPolicy{.max_params = 5, .max_epoch_age = {}});
  EXPECT_EQ(evicted, (std::vector<FeatureId>{1, 2, 3, 4, 5}));
  EXPECT_EQ(shard.stats().param_count, 5u);

  shard.push_gradients({{11, lr_grad(0.1)}});  // epoch 11
  const auto aged = shard.filter_features(FilterPolicy{.max_params = {}, .max_epoch_age = 5});
  EXPECT_EQ(aged, std::vector<FeatureId>{6});
  EXPECT_EQ(shard.stats().filtered_features, 6u);

  shard.force_sync();
  const auto folded = fold_log(*log, 0, log->tail(0));
  std::set<FeatureId> alive;
  for (const auto& [id, slot] : folded) {
    (void)slot;
    alive.insert(id);
  }
  EXPECT_EQ(alive, (std::set<FeatureId>{7, 8, 9, 10, 11}));
}

TEST(Lifecycle, BackgroundPusherDrainsWithWallClock) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  MasterShard shard(single_shard_cfg(GatherMode::kRealtime),
                    model::ModelSchema::lr_ftrl({}), log,
                    std::make_shared<WallClock>());
  shard.start_sync();
  for (FeatureId id = 0; id < 50; ++id) {
    shard.push_gradients({{id, lr_grad(1.0)}});
  }
  for (int i = 0; i < 200 && log->tail(0) < 50; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  shard.stop_sync();
  shard.force_sync();
  EXPECT_EQ(fold_log(*log, 0, log->tail(0)).size(), 50u);
}

}  // namespace
}  // namespace weips::master
