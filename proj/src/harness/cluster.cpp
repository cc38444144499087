#include "weips/harness/cluster.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "weips/error.hpp"
#include "weips/master/checkpoint.hpp"
#include "weips/model/ops.hpp"
#include "weips/net/service.hpp"

namespace weips::harness {

namespace fs = std::filesystem;

bool tables_bitwise_equal(
    const std::vector<std::pair<FeatureId, model::ParameterSlot>>& a,
    const std::vector<std::pair<FeatureId, model::ParameterSlot>>& b,
    std::string* detail) {
  if (a.size() != b.size()) {
    if (detail)
      *detail = "size mismatch: " + std::to_string(a.size()) + " vs " +
                std::to_string(b.size());
    return false;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first) {
      if (detail)
        *detail = "id mismatch at index " + std::to_string(i) + ": " +
                  std::to_string(a[i].first) + " vs " +
                  std::to_string(b[i].first);
      return false;
    }
    if (!model::bitwise_equal(a[i].second, b[i].second)) {
      if (detail)
        *detail = "slot payload differs for id " + std::to_string(a[i].first);
      return false;
    }
  }
  return true;
}

Cluster::Cluster(ClusterConfig cfg, std::shared_ptr<Clock> clock)
    : cfg_(std::move(cfg)), clock_(std::move(clock)), schema_(cfg_.schema()) {
  cfg_.validate();
  if (cfg_.mode != "local")
    throw Error(ErrorCode::kInvalidArgument,
                "Cluster runs mode=local topologies; use ProcCluster for multiproc");
}

Cluster::~Cluster() {
  try {
    stop();
  } catch (...) {
  }
  if (owns_work_dir_) {
    std::error_code ec;
    fs::remove_all(work_dir_, ec);
  }
}

std::string Cluster::master_endpoint(ShardId shard,
                                     std::uint64_t generation) const {
  return "master/" + std::to_string(shard) + "#" + std::to_string(generation);
}

std::string Cluster::slave_endpoint(ShardId shard, std::uint32_t replica,
                                    std::uint64_t generation) const {
  return "slave/" + std::to_string(shard) + "/" + std::to_string(replica) +
         "#" + std::to_string(generation);
}

std::string Cluster::version_dir(Version version) const {
  return work_dir_ + "/ckpt-local/" + cfg_.model_id + "/v" +
         std::to_string(version);
}

std::shared_ptr<master::MasterShard> Cluster::make_master(ShardId shard) {
  master::MasterConfig mc;
  mc.model_id = cfg_.model_id;
  mc.shard_id = shard;
  mc.num_shards = cfg_.num_masters;
  mc.gather = cfg_.gather();
  mc.collector_capacity = cfg_.collector_capacity;
  mc.sync_interval_ms = cfg_.sync_interval_ms;
  auto shard_ptr =
      std::make_shared<master::MasterShard>(mc, schema_, log_, clock_);
  shard_ptr->start_sync();
  return shard_ptr;
}

std::shared_ptr<slave::SlaveShard> Cluster::make_slave(ShardId shard,
                                                       std::uint32_t replica) {
  slave::SlaveConfig sc;
  sc.model_id = cfg_.model_id;
  sc.shard_id = shard;
  sc.num_shards = cfg_.num_slaves;
  sc.replica_id = replica;
  sc.scatter_interval_ms = cfg_.scatter_interval_ms;
  auto shard_ptr =
      std::make_shared<slave::SlaveShard>(sc, schema_, log_, clock_);
  shard_ptr->start_scatter();
  return shard_ptr;
}

void Cluster::start() {
  if (started_) return;

  if (cfg_.work_dir.empty()) {
    char tmpl[] = "/tmp/weips-run-XXXXXX";
    const char* made = mkdtemp(tmpl);
    if (made == nullptr) throw Error(ErrorCode::kIo, "mkdtemp failed");
    work_dir_ = made;
    owns_work_dir_ = true;
  } else {
    work_dir_ = cfg_.work_dir;
    fs::create_directories(work_dir_);
  }

  bus_ = std::make_shared<net::LocalBus>();

  std::shared_ptr<plog::PartitionedLog> base;
  if (cfg_.file_log) {
    plog::FileLogOptions opts;
    opts.compress_frames = cfg_.compress_log;
    base = std::make_shared<plog::FileLog>(work_dir_ + "/log", cfg_.model_id,
                                           cfg_.num_partitions, opts);
  } else {
    base = std::make_shared<plog::MemoryLog>(cfg_.num_partitions);
  }
  faulty_ = std::make_shared<plog::FaultyLog>(base);
  log_ = faulty_;

  registry_core_ = std::make_shared<registry::RegistryCore>();
  registry_ = std::make_shared<registry::EmbeddedRegistry>(registry_core_);
  bus_->register_endpoint("registry", net::make_registry_handler(registry_core_));

  workload_ = std::make_unique<Workload>(cfg_.workload);
  validator_ = std::make_unique<monitor::ProgressiveValidator>(cfg_.monitor);

  {
    std::lock_guard lock(comp_mu_);
    masters_.resize(cfg_.num_masters);
    master_gen_.assign(cfg_.num_masters, 1);
    slaves_.resize(cfg_.num_slaves);
    slave_gen_.resize(cfg_.num_slaves);
    for (ShardId m = 0; m < cfg_.num_masters; ++m) {
      masters_[m] = make_master(m);
      bus_->register_endpoint(master_endpoint(m, 1),
                              net::make_master_handler(masters_[m], 1));
    }
    for (ShardId s = 0; s < cfg_.num_slaves; ++s) {
      slaves_[s].resize(cfg_.slave_replicas);
      slave_gen_[s].assign(cfg_.slave_replicas, 1);
      for (std::uint32_t r = 0; r < cfg_.slave_replicas; ++r) {
        slaves_[s][r] = make_slave(s, r);
        bus_->register_endpoint(slave_endpoint(s, r, 1),
                                net::make_slave_handler(slaves_[s][r], 1));
      }
    }
  }

  scheduler::SchedulerConfig sc;
  sc.model_id = cfg_.model_id;
  sc.probe_interval_ms = cfg_.probe_interval_ms;
  sc.probe_miss_limit = cfg_.probe_miss_limit;
  sc.ckpt_local_interval_ms = cfg_.ckpt_local_interval_ms;
  sc.ckpt_remote_interval_ms = cfg_.ckpt_remote_interval_ms;
  sc.ckpt_jitter_frac = cfg_.ckpt_jitter_frac;
  sc.ckpt_root_local = work_dir_ + "/ckpt-local";
  sc.ckpt_root_remote = work_dir_ + "/ckpt-remote";
  sc.min_slave_replicas = cfg_.min_slave_replicas;
  sc.rollback_strategy =
      monitor::version_strategy_from_name(cfg_.rollback_strategy);
  sc.rng_seed = cfg_.seed;
  scheduler_ = std::make_shared<scheduler::Scheduler>(sc, registry_, bus_,
                                                      clock_, this);

  for (ShardId m = 0; m < cfg_.num_masters; ++m)
    scheduler_->register_master(m, master_endpoint(m, 1), 1);
  for (ShardId s = 0; s < cfg_.num_slaves; ++s)
    for (std::uint32_t r = 0; r < cfg_.slave_replicas; ++r)
      scheduler_->register_slave(s, r, slave_endpoint(s, r, 1), 1);
  scheduler_->initialize_routing(cfg_.num_masters, cfg_.num_slaves);
  scheduler_->start();

  client_ = std::make_unique<net::ModelClient>(*bus_, cfg_.model_id);
  client_->refresh_routing(*registry_);

  record_event("cluster_started",
               std::to_string(cfg_.num_masters) + " masters, " +
                   std::to_string(cfg_.num_slaves) + "x" +
                   std::to_string(cfg_.slave_replicas) + " slaves, " +
                   std::to_string(cfg_.num_partitions) + " partitions");
  started_ = true;
}

void Cluster::stop() {
  if (!started_) return;
  started_ = false;
  scheduler_->stop();
  std::lock_guard lock(comp_mu_);
  for (auto& m : masters_)
    if (m) m->stop_sync();
  for (auto& replicas : slaves_)
    for (auto& s : replicas)
      if (s) s->stop_scatter();
  record_event("cluster_stopped", "");
}

std::shared_ptr<master::MasterShard> Cluster::master(ShardId shard) {
  std::lock_guard lock(comp_mu_);
  if (shard >= masters_.size() || !masters_[shard])
    throw Error(ErrorCode::kUnavailable,
                "master shard " + std::to_string(shard) + " is down");
  return masters_[shard];
}

std::shared_ptr<slave::SlaveShard> Cluster::slave(ShardId shard,
                                                  std::uint32_t replica) {
  std::lock_guard lock(comp_mu_);
  if (shard >= slaves_.size() || replica >= slaves_[shard].size() ||
      !slaves_[shard][replica])
    throw Error(ErrorCode::kUnavailable,
                "slave " + std::to_string(shard) + "/" +
                    std::to_string(replica) + " is down");
  return slaves_[shard][replica];
}

FeatureId Cluster::next_sentinel_id() {
  return next_sentinel_.fetch_add(1, std::memory_order_relaxed);
}

void Cluster::record_event(const std::string& kind, const std::string& detail) {
  std::lock_guard lock(events_mu_);
  events_.push_back({clock_->now_ms(), kind, detail});
}

std::vector<Cluster::TimelineEvent> Cluster::timeline() const {
  std::vector<TimelineEvent> all;
  {
    std::lock_guard lock(events_mu_);
    all = events_;
  }
  if (scheduler_) {
    for (const auto& e : scheduler_->events())
      all.push_back({e.at_ms, e.kind, e.detail});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const TimelineEvent& a, const TimelineEvent& b) {
                     return a.at_ms < b.at_ms;
                   });
  return all;
}

Version Cluster::cut_version(const std::string& dest) {
  const Version v = scheduler_->trigger_checkpoint_round(dest);
  const auto series = validator_->logloss_series();
  if (!series.empty()) {
    const std::size_t k =
        std::min<std::size_t>(series.size(), cfg_.monitor.smooth_k);
    double sum = 0.0;
    for (std::size_t i = series.size() - k; i < series.size(); ++i)
      sum += series[i];
    scheduler_->record_version_metric(v, sum / static_cast<double>(k));
  }
  return v;
}

void Cluster::publish_window_metric(const monitor::WindowMetrics& wm) {
  const std::string key =
      cfg_.model_id + "/metrics/" + std::to_string(wm.window_id);
  registry_->compare_and_set(key, wm.to_json(), 0);
}

namespace {

struct TrainShared {
  std::atomic<std::uint64_t> next_batch{0};
  std::atomic<std::uint64_t> done_samples{0};
  std::atomic<std::uint64_t> applied{0};
  std::atomic<std::uint64_t> rejected{0};
  std::atomic<bool> stop{false};
  std::atomic<bool> failed{false};
  std::string error;
  std::mutex error_mu;
};

void merge_gradients(model::GradientMap& into, const model::GradientMap& from) {
  for (const auto& [name, values] : from) {
    bool found = false;
    for (auto& [ename, evalues] : into) {
      if (ename == name) {
        for (std::size_t i = 0; i < evalues.size() && i < values.size(); ++i)
          evalues[i] += values[i];
        found = true;
        break;
      }
    }
    if (!found) into.emplace_back(name, values);
  }
}

}  // namespace

TrainResult Cluster::train(const TrainOptions& opts) {
  if (!started_) throw Error(ErrorCode::kUnavailable, "cluster not started");
  TrainResult result;
  if (opts.end <= opts.begin) return result;

  const std::uint64_t total = opts.end - opts.begin;
  const std::uint64_t batch = cfg_.batch_size;
  const std::uint64_t num_batches = (total + batch - 1) / batch;
  const std::uint32_t workers =
      static_cast<std::uint32_t>(std::min<std::uint64_t>(cfg_.trainers, num_batches));

  TrainShared shared;
  const std::int64_t t0 = clock_->now_ms();

  auto worker_fn = [&](std::uint32_t worker_id) {
    (void)worker_id;
    net::ModelClient local_client(*bus_, cfg_.model_id);
    local_client.set_shard_map(client_->shard_map());
    std::vector<model::Sample> samples;
    std::vector<FeatureId> ids;

    try {
      while (!shared.stop.load(std::memory_order_relaxed)) {
        const std::uint64_t b =
            shared.next_batch.fetch_add(1, std::memory_order_relaxed);
        if (b >= num_batches) break;
        const std::uint64_t lo = opts.begin + b * batch;
        const std::uint64_t hi = std::min<std::uint64_t>(lo + batch, opts.end);

        samples.clear();
        ids.clear();
        for (std::uint64_t i = lo; i < hi; ++i) {
          samples.push_back(workload_->sample(i));
          for (const auto& [id, _] : samples.back().features) ids.push_back(id);
        }
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

        // A push or pull can fail transiently while a killed master is being
        // replaced; refresh routing and redo the batch against fresh params.
        std::vector<double> predictions;
        net::PushResult ack;
        bool batch_done = false;
        for (int attempt = 0;; ++attempt) {
          try {
            auto pulled = local_client.pull(ids);
            std::unordered_map<FeatureId, model::ParameterSlot> params;
            params.reserve(pulled.size());
            for (auto& [id, slot] : pulled) params.emplace(id, std::move(slot));

            predictions.clear();
            std::unordered_map<FeatureId, model::GradientMap> sums;
            for (const auto& s : samples) {
              const double p =
                  model::predict(schema_, params, s, model::View::kTraining);
              predictions.push_back(p);
              auto grads = model::gradient_of_sample(schema_, params, s, p);
              for (auto& [id, g] : grads) {
                auto it = sums.find(id);
                if (it == sums.end())
                  sums.emplace(id, std::move(g));
                else
                  merge_gradients(it->second, g);
              }
            }

            std::vector<std::pair<FeatureId, model::GradientMap>> updates;
            updates.reserve(sums.size());
            for (auto& [id, g] : sums) updates.emplace_back(id, std::move(g));
            ack = local_client.push(updates);
            batch_done = true;
            break;
          } catch (const std::exception&) {
            if (shared.stop.load(std::memory_order_relaxed)) break;
            if (attempt >= 200) throw;
            clock_->sleep_ms(50);
            try {
              local_client.refresh_routing(*registry_);
            } catch (const std::exception&) {
            }
          }
        }
        if (!batch_done) break;

        if (opts.validate) {
          for (std::size_t k = 0; k < samples.size(); ++k) {
            if (auto wm = validator_->observe(predictions[k], samples[k].label)) {
              publish_window_metric(*wm);
              published_windows_.fetch_add(1, std::memory_order_relaxed);
            }
          }
        }
        shared.applied.fetch_add(ack.applied, std::memory_order_relaxed);
        shared.rejected.fetch_add(ack.rejected, std::memory_order_relaxed);
        const std::uint64_t done =
            shared.done_samples.fetch_add(hi - lo, std::memory_order_relaxed) +
            (hi - lo);

        if (opts.throttle_samples_per_sec > 0) {
          const std::int64_t due_ms =
              t0 + static_cast<std::int64_t>(
                       done * 1000 / opts.throttle_samples_per_sec);
          std::int64_t now = clock_->now_ms();
          while (now < due_ms && !shared.stop.load(std::memory_order_relaxed)) {
            clock_->sleep_ms(std::min<std::int64_t>(due_ms - now, 20));
            now = clock_->now_ms();
          }
        }
      }
    } catch (const std::exception& e) {
      shared.failed.store(true, std::memory_order_relaxed);
      shared.stop.store(true, std::memory_order_relaxed);
      std::lock_guard lock(shared.error_mu);
      if (shared.error.empty()) shared.error = e.what();
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::uint32_t w = 0; w < workers; ++w) threads.emplace_back(worker_fn, w);

  std::vector<FaultStep> faults;
  if (opts.faults != nullptr) faults = opts.faults->steps;
  std::size_t fault_idx = 0;
  std::uint64_t next_ckpt =
      opts.checkpoint_every > 0 ? opts.begin + opts.checkpoint_every : 0;
  std::size_t checked_windows = 0;

  auto control_pass = [&](std::uint64_t done) {
    while (fault_idx < faults.size() && faults[fault_idx].at_samples <= done) {
      apply_fault(faults[fault_idx]);
      ++fault_idx;
    }
    if (opts.checkpoint_every > 0 && done >= next_ckpt) {
      try {
        result.versions_cut.push_back(cut_version(opts.checkpoint_dest));
      } catch (const std::exception& e) {
        record_event("checkpoint_error", e.what());
      }
      while (next_ckpt <= done) next_ckpt += opts.checkpoint_every;
    }
    if (opts.stop_on_downgrade && !result.downgrade_triggered) {
      const auto series = validator_->logloss_series();
      if (series.size() > checked_windows) {
        checked_windows = series.size();
        const auto decision = monitor::should_downgrade(series, cfg_.monitor);
        if (decision.trigger) {
          result.downgrade_triggered = true;
          result.decision = decision;
          result.trigger_sample = series.size() * cfg_.monitor.window_size;
          record_event("downgrade_triggered",
                       "window " + std::to_string(series.size()) +
                           " recent_mean " + std::to_string(decision.recent_mean) +
                           " threshold " + std::to_string(decision.threshold));
          shared.stop.store(true, std::memory_order_relaxed);
        }
      }
    }
  };

  while (true) {
    if (opts.external_stop != nullptr &&
        opts.external_stop->load(std::memory_order_relaxed))
      shared.stop.store(true, std::memory_order_relaxed);
    const std::uint64_t done = shared.done_samples.load(std::memory_order_relaxed);
    const bool all_done =
        done >= total || shared.stop.load(std::memory_order_relaxed);
    control_pass(done);
    if (all_done) break;
    clock_->sleep_ms(2);
  }
  shared.stop.store(true, std::memory_order_relaxed);
  for (auto& t : threads) t.join();
  control_pass(shared.done_samples.load(std::memory_order_relaxed));

  if (shared.failed.load(std::memory_order_relaxed)) {
    std::lock_guard lock(shared.error_mu);
    throw Error(ErrorCode::kUnavailable, "trainer failed: " + shared.error);
  }

  result.samples = shared.done_samples.load(std::memory_order_relaxed);
  result.applied = shared.applied.load(std::memory_order_relaxed);
  result.rejected = shared.rejected.load(std::memory_order_relaxed);
  return result;
}

void Cluster::quiesce() {
  std::vector<std::shared_ptr<master::MasterShard>> masters;
  std::vector<std::shared_ptr<slave::SlaveShard>> slaves;
  {
    std::lock_guard lock(comp_mu_);
    for (auto& m : masters_)
      if (m) masters.push_back(m);
    for (auto& replicas : slaves_)
      for (auto& s : replicas)
        if (s) slaves.push_back(s);
  }
  for (auto& m : masters) {
    m->force_sync();
    for (int attempt = 0; m->stats().sync_stalled && attempt < 200; ++attempt) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
      m->force_sync();
    }
  }
  for (auto& s : slaves) s->catch_up_to_tails();
}

std::vector<std::pair<FeatureId, model::ParameterSlot>> Cluster::master_union() {
  std::vector<std::pair<FeatureId, model::ParameterSlot>> all;
  const auto map = scheduler_->current_map();
  for (const auto& [shard, endpoint] : map.masters) {
    (void)shard;
    net::ServiceClient sc(*bus_, endpoint);
    auto dump = sc.dump_table(cfg_.model_id);
    all.insert(all.end(), std::make_move_iterator(dump.begin()),
               std::make_move_iterator(dump.end()));
  }
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return all;
}

bool Cluster::serving_consistent(std::string* detail) {
  const auto map = scheduler_->current_map();
  const auto union_table = master_union();

  std::vector<std::vector<std::pair<FeatureId, model::ParameterSlot>>> expected(
      cfg_.num_slaves);
  for (const auto& [id, slot] : union_table) {
    expected[id % cfg_.num_slaves].emplace_back(
        id, model::transform_for_serving(schema_, slot));
  }

  for (const auto& [shard, endpoints] : map.slaves) {
    for (const auto& endpoint : endpoints) {
      net::ServiceClient sc(*bus_, endpoint);
      auto got = sc.dump_table(cfg_.model_id);
      std::sort(got.begin(), got.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      std::string why;
      if (!tables_bitwise_equal(expected[shard], got, &why)) {
        if (detail)
          *detail = "slave " + endpoint + ": " + why;
        return false;
      }
    }
  }
  return true;
}

void Cluster::kill_master(ShardId shard) {
  std::lock_guard lock(comp_mu_);
  if (shard >= masters_.size() || !masters_[shard]) return;
  const std::uint64_t gen = master_gen_[shard];
  bus_->unregister_endpoint(master_endpoint(shard, gen));
  masters_[shard]->stop_sync();
  masters_[shard].reset();
  record_event("fault_kill_master", "shard " + std::to_string(shard));
}

void Cluster::kill_slave(ShardId shard, std::uint32_t replica) {
  std::lock_guard lock(comp_mu_);
  if (shard >= slaves_.size() || replica >= slaves_[shard].size() ||
      !slaves_[shard][replica])
    return;
  const std::uint64_t gen = slave_gen_[shard][replica];
  bus_->unregister_endpoint(slave_endpoint(shard, replica, gen));
  slaves_[shard][replica]->stop_scatter();
  slaves_[shard][replica].reset();
  record_event("fault_kill_slave", "shard " + std::to_string(shard) +
                                       " replica " + std::to_string(replica));
}

void Cluster::stall_log(PartitionId partition, std::int64_t duration_ms) {
  faulty_->stall_partition_for(partition, duration_ms);
  record_event("fault_stall_log", "partition " + std::to_string(partition) +
                                      " for " + std::to_string(duration_ms) +
                                      " ms");
}

std::string Cluster::corrupt_checkpoint(Version version, ShardId shard) {
  const std::string path = version_dir(version) + "/shard-" +
                           std::to_string(shard) + ".ckpt";
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open checkpoint body: " + path);
  f.seekg(0, std::ios::end);
  const std::streamoff size = f.tellg();
  if (size <= 0) throw Error(ErrorCode::kIo, "empty checkpoint body: " + path);
  const std::streamoff pos = size / 2;
  f.seekg(pos);
  char byte = 0;
  f.read(&byte, 1);
  byte = static_cast<char>(byte ^ 0x5a);
  f.seekp(pos);
  f.write(&byte, 1);
  f.flush();
  record_event("fault_corrupt_checkpoint",
               "v" + std::to_string(version) + " shard " +
                   std::to_string(shard) + " at byte " + std::to_string(pos));
  return path;
}

void Cluster::apply_fault(const FaultStep& step) {
  switch (step.action) {
    case FaultAction::kKillMaster:
      kill_master(step.shard);
      break;
    case FaultAction::kKillSlaveReplica:
      kill_slave(step.shard, step.replica);
      break;
    case FaultAction::kStallLog:
      stall_log(step.partition, step.duration_ms);
      break;
    case FaultAction::kCorruptCheckpoint:
      corrupt_checkpoint(step.version, step.shard);
      break;
  }
}

std::string Cluster::respawn_master(ShardId shard, std::uint64_t generation) {
  std::lock_guard lock(comp_mu_);
  if (shard >= masters_.size())
    throw Error(ErrorCode::kInvalidArgument,
                "respawn_master: no such shard " + std::to_string(shard));
  auto replacement = make_master(shard);
  bus_->register_endpoint(master_endpoint(shard, generation),
                          net::make_master_handler(replacement, generation));
  masters_[shard] = replacement;
  master_gen_[shard] = generation;
  record_event("respawn_master", "shard " + std::to_string(shard) + " gen " +
                                     std::to_string(generation));
  return master_endpoint(shard, generation);
}

std::string Cluster::respawn_slave(ShardId shard, std::uint32_t replica,
                                   std::uint64_t generation) {
  std::lock_guard lock(comp_mu_);
  if (shard >= slaves_.size() || replica >= slaves_[shard].size())
    throw Error(ErrorCode::kInvalidArgument, "respawn_slave: no such replica");
  auto replacement = make_slave(shard, replica);
  bus_->register_endpoint(slave_endpoint(shard, replica, generation),
                          net::make_slave_handler(replacement, generation));
  slaves_[shard][replica] = replacement;
  slave_gen_[shard][replica] = generation;
  record_event("respawn_slave", "shard " + std::to_string(shard) +
                                    " replica " + std::to_string(replica) +
                                    " gen " + std::to_string(generation));
  return slave_endpoint(shard, replica, generation);
}

}  // namespace weips::harness
