#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "CLI11.hpp"

#include "weips/error.hpp"
#include "weips/harness/cluster.hpp"
#include "weips/harness/config.hpp"
#include "weips/harness/fault_plan.hpp"
#include "weips/harness/freshness.hpp"
#include "weips/harness/procs.hpp"
#include "weips/harness/report.hpp"
#include "weips/master/shard.hpp"
#include "weips/net/service.hpp"
#include "weips/net/tcp.hpp"
#include "weips/net/wire.hpp"
#include "weips/plog/log.hpp"
#include "weips/scheduler/scheduler.hpp"
#include "weips/slave/shard.hpp"

namespace {

using namespace weips;

std::string self_exe() {
  char buf[4096];
  const ssize_t n = readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n <= 0) return "weips";
  buf[n] = '\0';
  return buf;
}

int run_worker(const std::string& role, const std::string& config_path,
               ShardId shard, std::uint32_t replica, std::uint64_t generation) {
  std::shared_ptr<master::MasterShard> master_shard;
  std::shared_ptr<slave::SlaveShard> slave_shard;
  net::Handler inner;

  if (role == "registry") {
    auto core = std::make_shared<registry::RegistryCore>();
    inner = net::make_registry_handler(core);
  } else {
    const harness::ClusterConfig cfg =
        harness::ClusterConfig::load_file(config_path);
    const model::ModelSchema schema = cfg.schema();
    plog::FileLogOptions opts;
    opts.compress_frames = cfg.compress_log;
    auto log = std::make_shared<plog::FileLog>(cfg.work_dir + "/log",
                                               cfg.model_id, cfg.num_partitions,
                                               opts);
    auto clock = std::make_shared<WallClock>();
    if (role == "master") {
      master::MasterConfig mc;
      mc.model_id = cfg.model_id;
      mc.shard_id = shard;
      mc.num_shards = cfg.num_masters;
      mc.gather = cfg.gather();
      mc.collector_capacity = cfg.collector_capacity;
      mc.sync_interval_ms = cfg.sync_interval_ms;
      master_shard = std::make_shared<master::MasterShard>(mc, schema, log, clock);
      master_shard->start_sync();
      inner = net::make_master_handler(master_shard, generation);
    } else if (role == "slave") {
      slave::SlaveConfig sc;
      sc.model_id = cfg.model_id;
      sc.shard_id = shard;
      sc.num_shards = cfg.num_slaves;
      sc.replica_id = replica;
      sc.scatter_interval_ms = cfg.scatter_interval_ms;
      slave_shard = std::make_shared<slave::SlaveShard>(sc, schema, log, clock);
      slave_shard->start_scatter();
      inner = net::make_slave_handler(slave_shard, generation);
    } else {
      std::cerr << "unknown worker role: " << role << "\n";
      return 2;
    }
  }

  std::mutex mu;
  std::condition_variable cv;
  bool quit = false;
  net::Handler wrapped = [&](std::span<const std::uint8_t> req) {
    if (net::peek_type(req) == net::MsgType::kShutdown) {
      {
        std::lock_guard lock(mu);
        quit = true;
      }
      cv.notify_all();
      return net::ok_response();
    }
    return inner(req);
  };

  net::TcpServer server(0, wrapped);
  std::printf("WEIPS_PORT=%u\n", server.port());
  std::fflush(stdout);

  {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return quit; });
  }
  server.stop();
  if (master_shard) master_shard->stop_sync();
  if (slave_shard) slave_shard->stop_scatter();
  return 0;
}

struct RunFlags {
  std::string config_path;
  std::string out_dir;
  std::string plan_path;
  std::string mode_override;
  std::uint16_t admin_port = 0;
  std::int64_t serve_ms = 0;
};

int run_local(harness::ClusterConfig cfg, const RunFlags& flags) {
  harness::FaultPlan plan;
  if (!flags.plan_path.empty()) {
    plan = harness::FaultPlan::load_file(flags.plan_path);
    plan.validate(cfg.num_masters, cfg.num_slaves, cfg.slave_replicas,
                  cfg.num_partitions);
  }

  harness::Cluster cluster(cfg);
  cluster.start();
  std::cout << "cluster up: " << cfg.num_masters << " masters, "
            << cfg.num_slaves << "x" << cfg.slave_replicas << " slaves, "
            << cfg.num_partitions << " partitions, gather " << cfg.gather_mode
            << "\n";

  harness::TrainOptions opts;
  opts.begin = 0;
  opts.end = cfg.workload.num_samples;
  opts.validate = true;
  opts.checkpoint_every = cfg.checkpoint_every_samples;
  opts.stop_on_downgrade = cfg.rollback_on_degrade;
  opts.throttle_samples_per_sec = cfg.workload.samples_per_second;
  if (!plan.steps.empty()) opts.faults = &plan;

  const auto train = cluster.train(opts);
  std::cout << "trained " << train.samples << " samples, " << train.applied
            << " updates applied, " << train.rejected << " rejected\n";

  harness::RunReport report;
  if (train.downgrade_triggered) {
    std::cout << "downgrade triggered at window boundary "
              << train.trigger_sample << " (recent mean "
              << train.decision.recent_mean << " > threshold "
              << train.decision.threshold << ")\n";
    const Version v = cluster.sched().rollback(
        monitor::version_strategy_from_name(cfg.rollback_strategy));
    report.rollback_version = v;
    std::cout << "rolled back to v" << v << " (" << cfg.rollback_strategy
              << ")\n";
  }

  const bool master_was_killed = std::any_of(
      plan.steps.begin(), plan.steps.end(), [](const harness::FaultStep& s) {
        return s.action == harness::FaultAction::kKillMaster;
      });
  if (master_was_killed && !train.downgrade_triggered) {
    // A master restored from checkpoint dropped the updates it had synced
    // after the cut, so slaves may hold entries the new incarnation never
    // heard of. Cutting a fresh version and switching to it reconciles the
    // serving tier with the surviving state. The cut can collide with a
    // still-stalled log partition, hence the retries.
    for (int attempt = 0;; ++attempt) {
      try {
        const Version v = cluster.sched().trigger_checkpoint_round("local");
        cluster.sched().switch_serving_version(v);
        std::cout << "reconciled serving onto fresh checkpoint v" << v << "\n";
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kCheckpointFailed || attempt >= 8) throw;
        std::this_thread::sleep_for(std::chrono::milliseconds(250));
      }
    }
  }

  cluster.quiesce();
  std::string detail;
  const bool consistent = cluster.serving_consistent(&detail);

  auto collected = harness::collect_report(cluster, train);
  collected.rollback_version = report.rollback_version;
  collected.consistent = consistent;
  collected.consistency_detail = detail;
  std::cout << collected.summary_text();

  if (!flags.out_dir.empty()) {
    harness::write_report(collected, flags.out_dir);
    std::cout << "report written to " << flags.out_dir << "\n";
  }

  if (flags.admin_port != 0 || flags.serve_ms > 0) {
    const std::int64_t serve_ms =
        flags.serve_ms > 0 ? flags.serve_ms : 60'000;
    net::TcpServer admin(flags.admin_port,
                         scheduler::make_scheduler_handler(cluster.sched_ptr()));
    std::cout << "admin endpoint " << admin.endpoint() << " for " << serve_ms
              << " ms\n";
    std::this_thread::sleep_for(std::chrono::milliseconds(serve_ms));
    admin.stop();
  }

  cluster.stop();
  return consistent ? 0 : 1;
}

int run_multiproc(harness::ClusterConfig cfg, const RunFlags& flags) {
  (void)flags;
  harness::ProcCluster cluster(std::move(cfg), self_exe());
  cluster.start();
  const auto& cc = cluster.config();
  std::cout << "processes up: " << cc.num_masters << " masters, "
            << cc.num_slaves << "x" << cc.slave_replicas
            << " slaves, registry, all over TCP\n";

  const auto [applied, rejected] =
      cluster.train_stream(0, cc.workload.num_samples);
  std::cout << "trained " << cc.workload.num_samples << " samples, " << applied
            << " updates applied, " << rejected << " rejected\n";

  const Version v = cluster.sched().trigger_checkpoint_round("local");
  std::cout << "checkpoint v" << v << " at " << cluster.version_dir(v) << "\n";

  cluster.quiesce();
  std::string detail;
  const bool consistent = cluster.serving_consistent(&detail);
  std::cout << "serving consistent: " << (consistent ? "yes" : "NO");
  if (!consistent) std::cout << " (" << detail << ")";
  std::cout << "\n";

  cluster.stop();
  return consistent ? 0 : 1;
}

int run_command(const RunFlags& flags) {
  harness::ClusterConfig cfg = harness::ClusterConfig::load_file(flags.config_path);
  if (!flags.mode_override.empty()) cfg.mode = flags.mode_override;
  cfg.validate();
  if (cfg.mode == "multiproc") return run_multiproc(std::move(cfg), flags);
  return run_local(std::move(cfg), flags);
}

int bench_freshness(const std::string& config_path, std::size_t probes,
                    std::int64_t stagger_ms, const std::string& out_dir) {
  harness::ClusterConfig cfg;
  if (!config_path.empty())
    cfg = harness::ClusterConfig::load_file(config_path);
  else {
    cfg.num_masters = 2;
    cfg.num_slaves = 2;
    cfg.slave_replicas = 1;
    cfg.num_partitions = 2;
    cfg.gather_threshold = 1000;
    cfg.gather_period_ms = 10'000;
    cfg.workload.num_samples = 100'000'000;
    cfg.workload.samples_per_second = 2000;
  }
  cfg.mode = "local";

  harness::FreshnessOptions opts;
  opts.probes = probes;
  opts.stagger_ms = stagger_ms;

  const auto entries = harness::run_freshness_bench(cfg, opts);
  std::cout << "gather      p50_ms      p99_ms     mean_ms   probes  timeouts\n";
  for (const auto& e : entries) {
    std::printf("%-9s %9.2f  %10.2f  %10.2f  %7zu  %8zu\n",
                e.gather_mode.c_str(), e.result.p50, e.result.p99,
                e.result.mean, e.result.latencies_ms.size(),
                e.result.timed_out);
  }
  if (!out_dir.empty()) {
    harness::RunReport report;
    report.config_json = cfg.to_json();
    report.freshness = entries;
    harness::write_report(report, out_dir);
    std::cout << "freshness data written to " << out_dir << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weips: a fused online-learning parameter server"};
  app.require_subcommand(1);

  RunFlags run_flags;
  auto* run = app.add_subcommand("run", "launch a topology and stream the workload");
  run->add_option("--config", run_flags.config_path, "cluster config json")
      ->required();
  run->add_option("--out", run_flags.out_dir, "write report artifacts here");
  run->add_option("--mode", run_flags.mode_override, "override mode: local|multiproc");
  run->add_option("--admin-port", run_flags.admin_port,
                  "serve scheduler admin on this port after training (0 = ephemeral)");
  run->add_option("--serve-ms", run_flags.serve_ms,
                  "keep the admin endpoint up this long");

  std::string bench_config;
  std::size_t bench_probes = 500;
  std::int64_t bench_stagger = 5;
  std::string bench_out;
  auto* bench = app.add_subcommand(
      "bench-freshness", "measure update-to-visible latency per gather mode");
  bench->add_option("--config", bench_config, "cluster config json");
  bench->add_option("--probes", bench_probes, "sentinel probes per mode");
  bench->add_option("--stagger-ms", bench_stagger, "delay between probe launches");
  bench->add_option("--out", bench_out, "write freshness.csv and summary here");

  RunFlags inject_flags;
  auto* inject = app.add_subcommand("inject", "run with a fault plan applied");
  inject->add_option("--plan", inject_flags.plan_path, "fault plan json")
      ->required();
  inject->add_option("--config", inject_flags.config_path, "cluster config json")
      ->required();
  inject->add_option("--out", inject_flags.out_dir, "write report artifacts here");

  auto* admin = app.add_subcommand("admin", "control a running cluster");
  admin->require_subcommand(1);
  std::string admin_endpoint;
  std::string admin_model;
  Version admin_version = 0;
  std::string admin_dest = "local";
  auto* sw = admin->add_subcommand("switch-version", "point serving at a version");
  sw->add_option("model", admin_model, "model id")->required();
  sw->add_option("version", admin_version, "published version number")->required();
  sw->add_option("--endpoint", admin_endpoint, "scheduler admin host:port")
      ->required();
  auto* ck = admin->add_subcommand("checkpoint", "cut a coordinated checkpoint");
  ck->add_option("model", admin_model, "model id")->required();
  ck->add_option("--dest", admin_dest, "local or remote");
  ck->add_option("--endpoint", admin_endpoint, "scheduler admin host:port")
      ->required();

  RunFlags report_flags;
  auto* report = app.add_subcommand("report", "run and emit the full report");
  report->add_option("--config", report_flags.config_path, "cluster config json")
      ->required();
  report->add_option("--out", report_flags.out_dir, "report directory")
      ->required();

  std::string init_path = "configs/example.json";
  auto* init = app.add_subcommand("init-config", "write a documented example config");
  init->add_option("path", init_path, "output path");

  std::string worker_role;
  std::string worker_config;
  ShardId worker_shard = 0;
  std::uint32_t worker_replica = 0;
  std::uint64_t worker_generation = 1;
  auto* worker = app.add_subcommand("worker", "internal: serve one component");
  worker->add_option("--role", worker_role, "registry|master|slave")->required();
  worker->add_option("--config", worker_config, "cluster config json");
  worker->add_option("--shard", worker_shard, "shard id");
  worker->add_option("--replica", worker_replica, "replica id");
  worker->add_option("--generation", worker_generation, "incarnation number");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_command(run_flags);
    if (bench->parsed())
      return bench_freshness(bench_config, bench_probes, bench_stagger, bench_out);
    if (inject->parsed()) return run_command(inject_flags);
    if (report->parsed()) return run_command(report_flags);
    if (init->parsed()) {
      const auto cfg = weips::harness::example_config();
      if (const auto slash = init_path.find_last_of('/');
          slash != std::string::npos)
        std::filesystem::create_directories(init_path.substr(0, slash));
      cfg.save_file(init_path);
      std::cout << "wrote " << init_path << "\n";
      return 0;
    }
    if (worker->parsed())
      return run_worker(worker_role, worker_config, worker_shard,
                        worker_replica, worker_generation);
    if (admin->parsed()) {
      weips::net::TcpBus bus;
      weips::net::ServiceClient client(bus, admin_endpoint, 60'000);
      if (sw->parsed()) {
        client.switch_version(admin_model, admin_version);
        std::cout << "serving switched to v" << admin_version << "\n";
      } else if (ck->parsed()) {
        const Version v = client.trigger_checkpoint(admin_model, admin_dest);
        std::cout << "checkpoint published as v" << v << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
