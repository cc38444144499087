#include "weips/scheduler/scheduler.hpp"

#include <gtest/gtest.h>
#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "weips/error.hpp"
#include "weips/master/shard.hpp"
#include "weips/model/ops.hpp"
#include "weips/net/service.hpp"
#include "weips/plog/log.hpp"
#include "weips/slave/shard.hpp"

namespace weips::scheduler {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("weips-sched-test-" + std::to_string(::getpid()) + "-" +
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

TEST(Registry, CompareAndSetCreateAndConflict) {
  registry::RegistryCore core;
  const auto v1 = core.compare_and_set("k", "a", 0);
  ASSERT_TRUE(v1.has_value());
  EXPECT_FALSE(core.compare_and_set("k", "b", 0).has_value());
  EXPECT_FALSE(core.compare_and_set("k", "b", *v1 + 99).has_value());

  const auto v2 = core.compare_and_set("k", "b", *v1);
  ASSERT_TRUE(v2.has_value());
  EXPECT_GT(*v2, *v1);
  EXPECT_EQ(core.get("k")->value, "b");
  EXPECT_FALSE(core.get("missing").has_value());
}

TEST(Registry, EraseHonorsExpectedVersion) {
  registry::RegistryCore core;
  const auto v = core.compare_and_set("k", "a", 0);
  EXPECT_FALSE(core.erase("k", *v + 1));
  EXPECT_TRUE(core.get("k").has_value());
  EXPECT_TRUE(core.erase("k", *v));
  EXPECT_FALSE(core.get("k").has_value());
  EXPECT_FALSE(core.erase("k", 0));  // already gone

  core.put("j", "x");
  EXPECT_TRUE(core.erase("j", 0));  // 0 matches any live version
}

TEST(Registry, ListPrefixIsExact) {
  registry::RegistryCore core;
  core.put("ctr/masters/0", "a");
  core.put("ctr/masters/1", "b");
  core.put("ctr/masters-old/0", "c");
  core.put("ctr/slaves/0/0", "d");

  const auto out = core.list_prefix("ctr/masters/");
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].first, "ctr/masters/0");
  EXPECT_EQ(out[1].first, "ctr/masters/1");
  EXPECT_TRUE(core.list_prefix("nothing/").empty());
}

TEST(Registry, PollDeliversOrderedChangeFeed) {
  registry::RegistryCore core;
  core.put("a", "1");
  const auto va = core.get("a")->cas_version;
  core.put("b", "2");
  core.erase("a", va);

  const auto all = core.poll(0, 0);
  ASSERT_EQ(all.size(), 3u);
  EXPECT_EQ(all[0].key, "a");
  EXPECT_FALSE(all[0].deleted);
  EXPECT_EQ(all[2].key, "a");
  EXPECT_TRUE(all[2].deleted);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i].seq, i + 1);

  const auto newer = core.poll(all[1].seq, 0);
  ASSERT_EQ(newer.size(), 1u);
  EXPECT_TRUE(newer[0].deleted);
  EXPECT_EQ(core.head_seq(), 3u);
}

TEST(Registry, BlockingPollWakesOnWrite) {
  registry::RegistryCore core;
  std::thread writer([&core] {
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    core.put("late", "v");
  });
  const auto changes = core.poll(0, 5'000);
  writer.join();
  ASSERT_EQ(changes.size(), 1u);
  EXPECT_EQ(changes[0].key, "late");

  EXPECT_TRUE(core.poll(core.head_seq(), 0).empty());
}

TEST(Registry, UpdateRetriesUnderContention) {
  auto core = std::make_shared<registry::RegistryCore>();
  registry::EmbeddedRegistry handle(core);

  constexpr int kThreads = 4;
  constexpr int kIncrements = 250;
  std::vector<std::thread> workers;
  for (int t = 0; t < kThreads; ++t) {
    workers.emplace_back([&handle] {
      for (int i = 0; i < kIncrements; ++i) {
        handle.update("counter", [](const std::optional<std::string>& cur) {
          return std::to_string(cur ? std::stoi(*cur) + 1 : 1);
        });
      }
    });
  }
  for (auto& t : workers) t.join();
  EXPECT_EQ(handle.get("counter")->value,
            std::to_string(kThreads * kIncrements));
}

model::GradientMap lr_grad(double g) { return {{"w", {g}}}; }

// Single-process control-plane fixture: real shards behind a LocalBus, a
// logical clock, and manual step() calls.
class SchedulerFixture : public ::testing::Test {
 protected:
  struct TestSpawner : Spawner {
    SchedulerFixture* fx = nullptr;

    std::string respawn_master(ShardId shard, std::uint64_t generation) override {
      return fx->spawn_master(shard, generation);
    }
    std::string respawn_slave(ShardId shard, std::uint32_t replica,
                              std::uint64_t generation) override {
      return fx->spawn_slave(shard, replica, generation);
    }
  };

  void build(std::uint32_t num_masters, std::uint32_t num_slave_shards,
             std::uint32_t replicas) {
    num_masters_ = num_masters;
    num_slave_shards_ = num_slave_shards;
    log_ = std::make_shared<plog::MemoryLog>(num_masters);
    spawner_.fx = this;

    SchedulerConfig cfg;
    cfg.model_id = "ctr";
    cfg.probe_interval_ms = 50;
    cfg.probe_miss_limit = 3;
    cfg.ckpt_root_local = dir_.str();
    cfg.min_slave_replicas = 1;
    sched_ = std::make_unique<Scheduler>(
        cfg, std::make_shared<registry::EmbeddedRegistry>(core_), bus_, clock_,
        &spawner_);

    for (ShardId s = 0; s < num_masters; ++s)
      sched_->register_master(s, spawn_master(s, 1), 1);
    for (ShardId s = 0; s < num_slave_shards; ++s)
      for (std::uint32_t r = 0; r < replicas; ++r)
        sched_->register_slave(s, r, spawn_slave(s, r, 1), 1);
    sched_->initialize_routing(num_masters, num_slave_shards);
  }

  std::string spawn_master(ShardId shard, std::uint64_t generation) {
    master::MasterConfig cfg;
    cfg.model_id = "ctr";
    cfg.shard_id = shard;
    cfg.num_shards = num_masters_;
    cfg.gather.mode = master::GatherMode::kRealtime;
    auto m = std::make_shared<master::MasterShard>(
        cfg, model::ModelSchema::lr_ftrl({}), log_, clock_);
    const std::string name = "local:master-" + std::to_string(shard) + "-g" +
                             std::to_string(generation);
    bus_->register_endpoint(name, net::make_master_handler(m, generation));
    masters_[shard] = m;
    return name;
  }

  std::string spawn_slave(ShardId shard, std::uint32_t replica,
                          std::uint64_t generation) {
    slave::SlaveConfig cfg;
    cfg.model_id = "ctr";
    cfg.shard_id = shard;
    cfg.num_shards = num_slave_shards_;
    cfg.replica_id = replica;
    auto s = std::make_shared<slave::SlaveShard>(
        cfg, model::ModelSchema::lr_ftrl({}), log_, clock_);
    const std::string name = "local:slave-" + std::to_string(shard) + "-" +
                             std::to_string(replica) + "-g" +
                             std::to_string(generation);
    bus_->register_endpoint(name, net::make_slave_handler(s, generation));
    slaves_[{shard, replica}] = s;
    return name;
  }

  void push_everywhere(FeatureId base, double g, int count) {
    for (int i = 0; i < count; ++i) {
      const FeatureId id = base + static_cast<FeatureId>(i);
      masters_[owner_shard(id, num_masters_)]->push_gradients(
          {{id, lr_grad(g)}});
    }
  }

  void catch_up_slaves() {
    for (auto& [key, s] : slaves_) {
      (void)key;
      s->catch_up_to_tails();
    }
  }

  TempDir dir_;
  std::shared_ptr<registry::RegistryCore> core_ =
      std::make_shared<registry::RegistryCore>();
  std::shared_ptr<net::LocalBus> bus_ = std::make_shared<net::LocalBus>();
  std::shared_ptr<LogicalClock> clock_ = std::make_shared<LogicalClock>();
  std::shared_ptr<plog::MemoryLog> log_;
  TestSpawner spawner_;
  std::unique_ptr<Scheduler> sched_;
  std::uint32_t num_masters_ = 0;
  std::uint32_t num_slave_shards_ = 0;
  std::map<ShardId, std::shared_ptr<master::MasterShard>> masters_;
  std::map<std::pair<ShardId, std::uint32_t>,
           std::shared_ptr<slave::SlaveShard>>
      slaves_;
};

TEST_F(SchedulerFixture, ProbesStayHealthyWhileEndpointsAnswer) {
  build(2, 1, 1);
  sched_->step();
  const auto probes = sched_->probe_states();
  ASSERT_EQ(probes.size(), 3u);
  for (const auto& [key, st] : probes) {
    EXPECT_TRUE(st.healthy) << key;
    EXPECT_EQ(st.misses, 0) << key;
  }
}

TEST_F(SchedulerFixture, MasterFailoverAfterMissLimit) {
  build(2, 1, 1);
  push_everywhere(0, 1.0, 10);
  sched_->trigger_checkpoint_round("local");

  const std::string dead = sched_->current_map().masters.at(0);
  bus_->unregister_endpoint(dead);

  sched_->step();
  sched_->step();
  EXPECT_EQ(sched_->probe_states().at("master/0").misses, 2);
  EXPECT_TRUE(sched_->probe_states().at("master/0").healthy);
  sched_->step();  // third miss crosses the limit

  const auto map = sched_->current_map();
  EXPECT_NE(map.masters.at(0), dead);
  EXPECT_EQ(map.masters.at(1), sched_->current_map().masters.at(1));

  // The replacement restored the latest checkpoint slice and re-announced.
  const auto table = masters_[0]->dump_table();
  EXPECT_EQ(table.size(), 5u);  // ids 0,2,4,6,8 under 2 shards
  bool saw_failover = false;
  for (const auto& e : sched_->events())
    if (e.kind == "master_failover") saw_failover = true;
  EXPECT_TRUE(saw_failover);

  sched_->step();
  EXPECT_TRUE(sched_->probe_states().at("master/0").healthy);
  EXPECT_EQ(sched_->probe_states().at("master/0").generation, 2u);
}

TEST_F(SchedulerFixture, GenerationMismatchIsAMiss) {
  build(1, 1, 1);
  // Re-register shard 0's endpoint with a handler claiming generation 7; the
  // registry still expects generation 1.
  const std::string endpoint = sched_->current_map().masters.at(0);
  bus_->register_endpoint(endpoint, net::make_master_handler(masters_[0], 7));

  sched_->step();
  EXPECT_EQ(sched_->probe_states().at("master/0").misses, 1);
}

TEST_F(SchedulerFixture, CheckpointRoundIsAllOrNothing) {
  build(2, 1, 1);
  push_everywhere(0, 0.5, 8);

  bus_->unregister_endpoint(sched_->current_map().masters.at(1));
  EXPECT_THROW(sched_->trigger_checkpoint_round("local"), Error);
  EXPECT_FALSE(sched_->latest_version().has_value());
  EXPECT_TRUE(sched_->version_candidates().empty());

  // Bring the endpoint back and retry; the same version number publishes.
  bus_->register_endpoint(sched_->current_map().masters.at(1),
                          net::make_master_handler(masters_[1], 1));
  const Version v = sched_->trigger_checkpoint_round("local");
  EXPECT_EQ(v, 1u);
  EXPECT_EQ(sched_->latest_version(), std::optional<Version>(1));
  ASSERT_EQ(sched_->version_candidates().size(), 1u);
  EXPECT_EQ(sched_->version_candidates()[0].version, 1u);
}

TEST_F(SchedulerFixture, SwitchServingVersionMovesEveryReplica) {
  build(1, 1, 2);
  push_everywhere(0, 1.0, 6);
  const Version v1 = sched_->trigger_checkpoint_round("local");
  push_everywhere(0, -0.5, 6);
  const Version v2 = sched_->trigger_checkpoint_round("local");
  ASSERT_EQ(v2, v1 + 1);

  sched_->switch_serving_version(v1);
  EXPECT_EQ(sched_->active_version(), v1);
  for (auto& [key, s] : slaves_) {
    (void)key;
    EXPECT_EQ(s->serving_version(), v1);
  }

  const auto events_before = sched_->events().size();
  sched_->switch_serving_version(v1);
  const auto events = sched_->events();
  ASSERT_EQ(events.size(), events_before + 1);
  EXPECT_EQ(events.back().kind, "switch_noop");
}

TEST_F(SchedulerFixture, RollbackRestoresTrainingAndServingExactly) {
  build(2, 2, 1);
  push_everywhere(0, 1.0, 12);
  const Version v1 = sched_->trigger_checkpoint_round("local");
  const auto snapshot_m0 = masters_[0]->dump_table();
  const auto snapshot_m1 = masters_[1]->dump_table();

  // Diverge: more training plus brand-new ids past the snapshot.
  push_everywhere(0, 5.0, 12);
  push_everywhere(100, 2.0, 4);
  catch_up_slaves();

  const Version chosen = sched_->rollback(monitor::VersionStrategy::kLatest);
  EXPECT_EQ(chosen, v1);
  EXPECT_EQ(sched_->active_version(), v1);

  auto expect_tables_equal =
      [](const std::vector<std::pair<FeatureId, model::ParameterSlot>>& a,
         const std::vector<std::pair<FeatureId, model::ParameterSlot>>& b) {
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
          EXPECT_EQ(a[i].first, b[i].first);
          EXPECT_TRUE(model::bitwise_equal(a[i].second, b[i].second))
              << "id " << a[i].first;
        }
      };
  expect_tables_equal(masters_[0]->dump_table(), snapshot_m0);
  expect_tables_equal(masters_[1]->dump_table(), snapshot_m1);

  // Serving equals the master union projected to serving view.
  for (auto& [key, s] : slaves_) {
    for (const auto& [id, slot] : s->dump_table()) {
      const auto owner = owner_shard(id, 2);
      const auto master_slot = masters_[owner]->pull_parameters({id})[0].second;
      EXPECT_TRUE(model::bitwise_equal(
          slot, model::transform_for_serving(masters_[owner]->schema(),
                                             master_slot)))
          << "shard " << key.first << " replica " << key.second << " id " << id;
    }
  }

  // Total serving params across slave shards equal the restored union.
  std::size_t serving_total = 0;
  for (auto& [key, s] : slaves_) {
    (void)key;
    serving_total += s->dump_table().size();
  }
  EXPECT_EQ(serving_total, snapshot_m0.size() + snapshot_m1.size());
}

TEST_F(SchedulerFixture, SlaveFailoverRespawnsWhenBelowMinimum) {
  build(1, 1, 2);
  push_everywhere(0, 1.0, 4);
  catch_up_slaves();

  // Two replicas, minimum one: removal without respawn.
  const auto replicas = sched_->current_map().slaves.at(0);
  ASSERT_EQ(replicas.size(), 2u);
  bus_->unregister_endpoint(replicas[0]);
  for (int i = 0; i < 3; ++i) sched_->step();

  auto map = sched_->current_map();
  ASSERT_EQ(map.slaves.at(0).size(), 1u);
  EXPECT_EQ(map.slaves.at(0)[0], replicas[1]);

  // Killing the last replica dips below the minimum and forces a respawn.
  bus_->unregister_endpoint(replicas[1]);
  for (int i = 0; i < 3; ++i) sched_->step();

  map = sched_->current_map();
  ASSERT_EQ(map.slaves.at(0).size(), 1u);
  EXPECT_NE(map.slaves.at(0)[0], replicas[0]);
  EXPECT_NE(map.slaves.at(0)[0], replicas[1]);
  bool saw_respawn = false;
  for (const auto& e : sched_->events())
    if (e.kind == "slave_respawned") saw_respawn = true;
  EXPECT_TRUE(saw_respawn);
}

TEST_F(SchedulerFixture, VersionMetricsFeedBestMetricRollback) {
  build(1, 1, 1);
  push_everywhere(0, 1.0, 4);
  const Version v1 = sched_->trigger_checkpoint_round("local");
  push_everywhere(0, 1.0, 4);
  const Version v2 = sched_->trigger_checkpoint_round("local");
  push_everywhere(0, 1.0, 4);

  EXPECT_THROW(sched_->record_version_metric(999, 0.1), Error);
  sched_->record_version_metric(v1, 0.25);
  sched_->record_version_metric(v2, 0.75);

  const auto candidates = sched_->version_candidates();
  ASSERT_EQ(candidates.size(), 2u);
  EXPECT_DOUBLE_EQ(candidates[0].mean_logloss, 0.25);

  const Version chosen = sched_->rollback(monitor::VersionStrategy::kBestMetric);
  EXPECT_EQ(chosen, v1);
  EXPECT_EQ(sched_->active_version(), v1);
}

TEST_F(SchedulerFixture, PeriodicCheckpointFiresOnLogicalTimer) {
  build(1, 1, 1);
  SchedulerConfig cfg = sched_->config();
  cfg.ckpt_local_interval_ms = 1'000;
  cfg.ckpt_jitter_frac = 0.0;
  sched_ = std::make_unique<Scheduler>(
      cfg, std::make_shared<registry::EmbeddedRegistry>(core_), bus_, clock_,
      &spawner_);

  push_everywhere(0, 1.0, 4);
  sched_->step();  // arms the timer
  EXPECT_FALSE(sched_->latest_version().has_value());
  clock_->advance_ms(1'000);
  sched_->step();
  EXPECT_EQ(sched_->latest_version(), std::optional<Version>(1));
}

}  // namespace
}  // namespace weips::scheduler
