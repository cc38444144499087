#include "weips/slave/shard.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <thread>
#include <vector>

#include "weips/error.hpp"
#include "weips/master/shard.hpp"
#include "weips/model/ops.hpp"
#include "weips/rng.hpp"

namespace weips::slave {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("weips-slave-test-" + std::to_string(::getpid()) + "-" +
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

plog::UpdateRecord upsert(FeatureId id, double w,
                          const std::string& model = "ctr") {
  plog::UpdateRecord r;
  r.model_id = model;
  r.feature_id = id;
  r.op = UpdateOp::kUpsert;
  r.payload.set("w", {w});
  return r;
}

plog::UpdateRecord del(FeatureId id, const std::string& model = "ctr") {
  plog::UpdateRecord r;
  r.model_id = model;
  r.feature_id = id;
  r.op = UpdateOp::kDelete;
  return r;
}

model::GradientMap lr_grad(double g) { return {{"w", {g}}}; }

SlaveConfig slave_cfg(ShardId shard = 0, std::uint32_t num_shards = 1) {
  SlaveConfig cfg;
  cfg.model_id = "ctr";
  cfg.shard_id = shard;
  cfg.num_shards = num_shards;
  return cfg;
}

SlaveShard make_slave(std::shared_ptr<plog::PartitionedLog> log,
                      ShardId shard = 0, std::uint32_t num_shards = 1) {
  return SlaveShard(slave_cfg(shard, num_shards),
                    model::ModelSchema::lr_ftrl({}), std::move(log),
                    std::make_shared<LogicalClock>());
}

TEST(Scatter, AppliesOwnedUpsertsAndDeletes) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  log->append(0, std::vector<plog::UpdateRecord>{upsert(1, 0.5), upsert(2, -0.25),
                                                 del(1)});
  auto slave = make_slave(log);
  EXPECT_EQ(slave.scatter_step(), 3u);

  const auto table = slave.dump_table();
  ASSERT_EQ(table.size(), 1u);
  EXPECT_EQ(table[0].first, 2u);
  EXPECT_DOUBLE_EQ(table[0].second.scalar("w"), -0.25);

  const auto stats = slave.stats();
  EXPECT_EQ(stats.applied_upserts, 2u);
  EXPECT_EQ(stats.applied_deletes, 1u);
  EXPECT_EQ(stats.consumed_offsets.at(0), 3u);
  EXPECT_EQ(slave.scatter_step(), 0u);
}

TEST(Scatter, ReapplyingDuplicateRecordsConvergesToSameTable) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  const std::vector<plog::UpdateRecord> batch{upsert(1, 0.5), upsert(3, 0.125),
                                              del(1), upsert(5, -1.0)};
  log->append(0, batch);
  auto slave = make_slave(log);
  slave.scatter_step();
  const auto first = slave.dump_table();

  // A retried append lands the same batch again; the fold must not move.
  log->append(0, batch);
  slave.scatter_step();
  const auto second = slave.dump_table();

  ASSERT_EQ(first.size(), second.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    EXPECT_EQ(first[i].first, second[i].first);
    EXPECT_TRUE(model::bitwise_equal(first[i].second, second[i].second));
  }
}

TEST(Scatter, SkipsForeignIdsAndModelsButAdvancesOffsets) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  log->append(0, std::vector<plog::UpdateRecord>{
                     upsert(2, 0.5),            // owned by shard 0 of 2
                     upsert(3, 0.5),            // owned by shard 1
                     upsert(4, 0.5, "ranker"),  // some other model
                 });
  auto slave = make_slave(log, 0, 2);
  EXPECT_EQ(slave.scatter_step(), 1u);

  const auto stats = slave.stats();
  EXPECT_EQ(stats.applied_upserts, 1u);
  EXPECT_EQ(stats.skipped_unowned, 1u);
  EXPECT_EQ(stats.skipped_other_model, 1u);
  EXPECT_EQ(stats.consumed_offsets.at(0), 3u);
  EXPECT_EQ(stats.param_count, 1u);
}

TEST(Scatter, QuarantinesMalformedPayloads) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  plog::UpdateRecord training_leak = upsert(1, 0.5);
  training_leak.payload.set("z", {2.0});  // training-only matrix
  plog::UpdateRecord poisoned = upsert(2, std::nan(""));
  log->append(0, std::vector<plog::UpdateRecord>{training_leak, poisoned,
                                                 upsert(3, 1.0)});

  auto slave = make_slave(log);
  EXPECT_EQ(slave.scatter_step(), 1u);
  const auto stats = slave.stats();
  EXPECT_EQ(stats.quarantined, 2u);
  EXPECT_EQ(stats.param_count, 1u);
  EXPECT_EQ(stats.consumed_offsets.at(0), 3u);
}

TEST(Pull, UnhealthyReplicaRefusesAndForeignIdsRoute) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  auto slave = make_slave(log, 1, 2);
  slave.set_healthy(false);
  EXPECT_THROW(slave.pull_serving({1}), Error);
  slave.set_healthy(true);
  EXPECT_THROW(slave.pull_serving({2}), Error);  // owned by shard 0

  const auto out = slave.pull_serving({3});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].second, model::ParameterSlot::zero(
                               slave.schema(), model::View::kServing));
}

TEST(Scatter, ApplyHookFiresOnlyForAppliedRecords) {
  auto log = std::make_shared<plog::MemoryLog>(1);
  log->append(0, std::vector<plog::UpdateRecord>{upsert(2, 0.5), upsert(3, 0.5),
                                                 del(2)});
  auto slave = make_slave(log, 0, 2);
  std::vector<FeatureId> seen;
  slave.set_apply_hook([&](const plog::UpdateRecord& r) {
    seen.push_back(r.feature_id);
  });
  slave.scatter_step();
  EXPECT_EQ(seen, (std::vector<FeatureId>{2, 2}));
}

TEST(LoadVersion, ReplayFromVersionReappliesTheSuffix) {
  TempDir dir;
  auto log = std::make_shared<plog::MemoryLog>(1);
  master::MasterConfig mcfg;
  mcfg.model_id = "ctr";
  mcfg.gather.mode = master::GatherMode::kRealtime;
  master::MasterShard m(mcfg, model::ModelSchema::lr_ftrl({}), log,
                        std::make_shared<LogicalClock>());

  for (FeatureId id = 0; id < 20; ++id) {
    m.push_gradients({{id, lr_grad(0.5)}});
  }
  m.save_checkpoint(1, dir.str());
  const auto dir_v1 = ckpt::version_dir(dir.str(), "ctr", 1);

  // Suffix beyond the snapshot: new id and a fresher value for an old one.
  m.push_gradients({{100, lr_grad(1.0)}, {0, lr_grad(-0.5)}});
  m.force_sync();

  // The uninterrupted replica consumes everything from offset zero.
  auto straight = make_slave(log);
  straight.catch_up_to_tails();

  // The cold replica bootstraps from the version and replays the suffix.
  auto cold = make_slave(log);
  cold.load_version(dir_v1, 1);
  EXPECT_EQ(cold.serving_version(), 1u);
  cold.catch_up_to_tails();

  const auto a = straight.dump_table();
  const auto b = cold.dump_table();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_TRUE(model::bitwise_equal(a[i].second, b[i].second))
        << "id " << a[i].first;
  }
  EXPECT_EQ(cold.stats().consumed_offsets, straight.stats().consumed_offsets);
}

TEST(LoadVersion, SkipToTailDiscardsTheBacklog) {
  TempDir dir;
  auto log = std::make_shared<plog::MemoryLog>(1);
  master::MasterConfig mcfg;
  mcfg.model_id = "ctr";
  mcfg.gather.mode = master::GatherMode::kRealtime;
  master::MasterShard m(mcfg, model::ModelSchema::lr_ftrl({}), log,
                        std::make_shared<LogicalClock>());

  m.push_gradients({{1, lr_grad(0.5)}});
  m.save_checkpoint(2, dir.str());
  const auto snapshot_table = m.dump_table();

  m.push_gradients({{1, lr_grad(9.0)}, {7, lr_grad(1.0)}});
  m.force_sync();

  auto slave = make_slave(log);
  slave.load_version(ckpt::version_dir(dir.str(), "ctr", 2), 2,
                     OffsetPolicy::kSkipToTail);
  EXPECT_EQ(slave.scatter_step(), 0u);  // backlog was skipped

  const auto table = slave.dump_table();
  ASSERT_EQ(table.size(), snapshot_table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    EXPECT_EQ(table[i].first, snapshot_table[i].first);
    EXPECT_TRUE(model::bitwise_equal(
        table[i].second,
        model::transform_for_serving(m.schema(), snapshot_table[i].second)));
  }
  EXPECT_EQ(slave.stats().consumed_offsets.at(0), log->tail(0));

  // New appends after the switch still flow.
  log->append(0, std::vector<plog::UpdateRecord>{upsert(3, 0.25)});
  EXPECT_EQ(slave.scatter_step(), 1u);
}

TEST(Scatter, BackgroundPullerTracksAConcurrentWriter) {
  auto log = std::make_shared<plog::MemoryLog>(2);
  SlaveConfig cfg = slave_cfg();
  cfg.scatter_batch = 64;
  SlaveShard slave(cfg, model::ModelSchema::lr_ftrl({}), log,
                   std::make_shared<WallClock>());
  slave.start_scatter();

  Rng rng(42);
  for (int i = 0; i < 500; ++i) {
    const PartitionId p = static_cast<PartitionId>(rng.next_below(2));
    log->append(p, std::vector<plog::UpdateRecord>{
                       upsert(rng.next_below(64), rng.uniform(-1.0, 1.0))});
    if (i % 100 == 0) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  slave.stop_scatter();
  slave.catch_up_to_tails();

  const auto stats = slave.stats();
  EXPECT_EQ(stats.consumed_offsets.at(0), log->tail(0));
  EXPECT_EQ(stats.consumed_offsets.at(1), log->tail(1));
  EXPECT_EQ(stats.applied_upserts, 500u);
}

}  // namespace
}  // namespace weips::slave
