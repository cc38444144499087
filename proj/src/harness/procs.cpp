#include "weips/harness/procs.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <thread>
#include <unordered_map>

#include "weips/error.hpp"
#include "weips/harness/cluster.hpp"
#include "weips/model/ops.hpp"
#include "weips/net/service.hpp"

namespace weips::harness {

namespace fs = std::filesystem;

WorkerProc spawn_worker(const std::string& exe,
                        const std::vector<std::string>& args,
                        std::int64_t timeout_ms) {
  int pipe_fds[2];
  if (pipe(pipe_fds) != 0)
    throw Error(ErrorCode::kIo, std::string("pipe: ") + std::strerror(errno));

  const pid_t pid = fork();
  if (pid < 0) {
    close(pipe_fds[0]);
    close(pipe_fds[1]);
    throw Error(ErrorCode::kIo, std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    close(pipe_fds[0]);
    dup2(pipe_fds[1], STDOUT_FILENO);
    close(pipe_fds[1]);
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>(exe.c_str()));
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    execv(exe.c_str(), argv.data());
    std::fprintf(stderr, "execv %s: %s\n", exe.c_str(), std::strerror(errno));
    _exit(127);
  }

  close(pipe_fds[1]);
  WorkerProc proc;
  proc.pid = pid;

  std::string line;
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  bool got_port = false;
  while (!got_port) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                          deadline - std::chrono::steady_clock::now())
                          .count();
    if (left <= 0) break;
    struct pollfd pfd{pipe_fds[0], POLLIN, 0};
    const int rc = poll(&pfd, 1, static_cast<int>(std::min<std::int64_t>(left, 200)));
    if (rc < 0) break;
    if (rc == 0) continue;
    char buf[256];
    const ssize_t n = read(pipe_fds[0], buf, sizeof(buf));
    if (n <= 0) break;
    line.append(buf, static_cast<std::size_t>(n));
    const auto pos = line.find("WEIPS_PORT=");
    if (pos != std::string::npos) {
      const auto eol = line.find('\n', pos);
      if (eol != std::string::npos) {
        const std::string port = line.substr(pos + 11, eol - pos - 11);
        proc.endpoint = "127.0.0.1:" + port;
        got_port = true;
      }
    }
  }
  close(pipe_fds[0]);
  if (!got_port) {
    kill(pid, SIGKILL);
    int status = 0;
    waitpid(pid, &status, 0);
    throw Error(ErrorCode::kUnavailable,
                "worker did not announce a port within " +
                    std::to_string(timeout_ms) + " ms");
  }
  return proc;
}

ProcCluster::ProcCluster(ClusterConfig cfg, std::string exe)
    : cfg_(std::move(cfg)), exe_(std::move(exe)), schema_(cfg_.schema()) {
  if (cfg_.mode != "multiproc")
    throw Error(ErrorCode::kInvalidArgument,
                "ProcCluster requires mode=multiproc");
  cfg_.validate();
  if (cfg_.work_dir.empty()) {
    char tmpl[] = "/tmp/weips-procs-XXXXXX";
    const char* made = mkdtemp(tmpl);
    if (made == nullptr) throw Error(ErrorCode::kIo, "mkdtemp failed");
    cfg_.work_dir = made;
  }
  work_dir_ = cfg_.work_dir;
}

ProcCluster::~ProcCluster() {
  try {
    stop();
  } catch (...) {
  }
}

std::vector<std::string> ProcCluster::worker_args(const std::string& role,
                                                  ShardId shard,
                                                  std::uint32_t replica,
                                                  std::uint64_t generation) const {
  std::vector<std::string> args{"worker", "--role", role};
  if (role != "registry") {
    args.insert(args.end(), {"--config", config_path_, "--shard",
                             std::to_string(shard), "--generation",
                             std::to_string(generation)});
    if (role == "slave")
      args.insert(args.end(), {"--replica", std::to_string(replica)});
  }
  return args;
}

void ProcCluster::start() {
  if (started_) return;
  fs::create_directories(work_dir_);
  config_path_ = work_dir_ + "/cluster-config.json";
  cfg_.save_file(config_path_);

  bus_ = std::make_shared<net::TcpBus>();

  registry_proc_ = spawn_worker(exe_, worker_args("registry", 0, 0, 0));
  registry_ = std::make_shared<net::RemoteRegistry>(*bus_, registry_proc_.endpoint);

  masters_.resize(cfg_.num_masters);
  for (ShardId m = 0; m < cfg_.num_masters; ++m) {
    masters_[m] = spawn_worker(exe_, worker_args("master", m, 0, 1));
    masters_[m].generation = 1;
  }
  slaves_.resize(cfg_.num_slaves);
  for (ShardId s = 0; s < cfg_.num_slaves; ++s) {
    slaves_[s].resize(cfg_.slave_replicas);
    for (std::uint32_t r = 0; r < cfg_.slave_replicas; ++r) {
      slaves_[s][r] = spawn_worker(exe_, worker_args("slave", s, r, 1));
      slaves_[s][r].generation = 1;
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
                                                      std::make_shared<WallClock>(),
                                                      this);
  for (ShardId m = 0; m < cfg_.num_masters; ++m)
    scheduler_->register_master(m, masters_[m].endpoint, 1);
  for (ShardId s = 0; s < cfg_.num_slaves; ++s)
    for (std::uint32_t r = 0; r < cfg_.slave_replicas; ++r)
      scheduler_->register_slave(s, r, slaves_[s][r].endpoint, 1);
  scheduler_->initialize_routing(cfg_.num_masters, cfg_.num_slaves);
  scheduler_->start();

  client_ = std::make_unique<net::ModelClient>(*bus_, cfg_.model_id);
  client_->refresh_routing(*registry_);
  workload_ = std::make_unique<Workload>(cfg_.workload);
  started_ = true;
}

void ProcCluster::shutdown_proc(WorkerProc& proc, std::int64_t grace_ms) {
  if (proc.pid < 0) return;
  try {
    net::ServiceClient sc(*bus_, proc.endpoint, grace_ms);
    sc.shutdown();
  } catch (const std::exception&) {
  }
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(grace_ms);
  while (std::chrono::steady_clock::now() < deadline) {
    int status = 0;
    const pid_t done = waitpid(proc.pid, &status, WNOHANG);
    if (done == proc.pid) {
      proc.pid = -1;
      return;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  reap(proc);
}

void ProcCluster::reap(WorkerProc& proc) {
  if (proc.pid < 0) return;
  kill(proc.pid, SIGKILL);
  int status = 0;
  waitpid(proc.pid, &status, 0);
  proc.pid = -1;
}

void ProcCluster::stop() {
  if (!started_) return;
  started_ = false;
  scheduler_->stop();
  for (auto& replicas : slaves_)
    for (auto& p : replicas) shutdown_proc(p, 2000);
  for (auto& p : masters_) shutdown_proc(p, 2000);
  shutdown_proc(registry_proc_, 2000);
}

std::string ProcCluster::version_dir(Version version) const {
  return work_dir_ + "/ckpt-local/" + cfg_.model_id + "/v" +
         std::to_string(version);
}

const WorkerProc& ProcCluster::master_proc(ShardId shard) const {
  return masters_.at(shard);
}
const WorkerProc& ProcCluster::slave_proc(ShardId shard,
                                          std::uint32_t replica) const {
  return slaves_.at(shard).at(replica);
}

std::pair<std::uint64_t, std::uint64_t> ProcCluster::train_stream(
    std::uint64_t begin, std::uint64_t end) {
  std::uint64_t applied = 0;
  std::uint64_t rejected = 0;
  const std::uint64_t batch = cfg_.batch_size;
  std::vector<model::Sample> samples;
  std::vector<FeatureId> ids;
  for (std::uint64_t lo = begin; lo < end; lo += batch) {
    const std::uint64_t hi = std::min<std::uint64_t>(lo + batch, end);
    samples.clear();
    ids.clear();
    for (std::uint64_t i = lo; i < hi; ++i) {
      samples.push_back(workload_->sample(i));
      for (const auto& [id, _] : samples.back().features) ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

    auto pulled = client_->pull(ids);
    std::unordered_map<FeatureId, model::ParameterSlot> params;
    params.reserve(pulled.size());
    for (auto& [id, slot] : pulled) params.emplace(id, std::move(slot));

    std::unordered_map<FeatureId, model::GradientMap> sums;
    for (const auto& s : samples) {
      const double p = model::predict(schema_, params, s, model::View::kTraining);
      auto grads = model::gradient_of_sample(schema_, params, s, p);
      for (auto& [id, g] : grads) {
        auto it = sums.find(id);
        if (it == sums.end()) {
          sums.emplace(id, std::move(g));
        } else {
          for (const auto& [name, values] : g) {
            bool found = false;
            for (auto& [ename, evalues] : it->second) {
              if (ename == name) {
                for (std::size_t k = 0; k < evalues.size() && k < values.size(); ++k)
                  evalues[k] += values[k];
                found = true;
                break;
              }
            }
            if (!found) it->second.emplace_back(name, values);
          }
        }
      }
    }
    std::vector<std::pair<FeatureId, model::GradientMap>> updates;
    updates.reserve(sums.size());
    for (auto& [id, g] : sums) updates.emplace_back(id, std::move(g));
    const auto ack = client_->push(updates);
    applied += ack.applied;
    rejected += ack.rejected;
  }
  return {applied, rejected};
}

void ProcCluster::quiesce() {
  const auto map = scheduler_->current_map();
  for (const auto& [shard, endpoint] : map.masters) {
    (void)shard;
    net::ServiceClient sc(*bus_, endpoint);
    sc.force_sync(cfg_.model_id);
  }
  for (const auto& [shard, endpoints] : map.slaves) {
    (void)shard;
    for (const auto& endpoint : endpoints) {
      net::ServiceClient sc(*bus_, endpoint);
      sc.force_sync(cfg_.model_id);
    }
  }
}

bool ProcCluster::serving_consistent(std::string* detail) {
  const auto map = scheduler_->current_map();
  std::vector<std::pair<FeatureId, model::ParameterSlot>> union_table;
  for (const auto& [shard, endpoint] : map.masters) {
    (void)shard;
    net::ServiceClient sc(*bus_, endpoint);
    auto dump = sc.dump_table(cfg_.model_id);
    union_table.insert(union_table.end(), std::make_move_iterator(dump.begin()),
                       std::make_move_iterator(dump.end()));
  }
  std::sort(union_table.begin(), union_table.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<std::vector<std::pair<FeatureId, model::ParameterSlot>>> expected(
      cfg_.num_slaves);
  for (const auto& [id, slot] : union_table)
    expected[id % cfg_.num_slaves].emplace_back(
        id, model::transform_for_serving(schema_, slot));

  for (const auto& [shard, endpoints] : map.slaves) {
    for (const auto& endpoint : endpoints) {
      net::ServiceClient sc(*bus_, endpoint);
      auto got = sc.dump_table(cfg_.model_id);
      std::sort(got.begin(), got.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      std::string why;
      if (!tables_bitwise_equal(expected[shard], got, &why)) {
        if (detail) *detail = "slave " + endpoint + ": " + why;
        return false;
      }
    }
  }
  return true;
}

void ProcCluster::kill_master(ShardId shard) {
  reap(masters_.at(shard));
}

void ProcCluster::kill_slave(ShardId shard, std::uint32_t replica) {
  reap(slaves_.at(shard).at(replica));
}

std::string ProcCluster::respawn_master(ShardId shard,
                                        std::uint64_t generation) {
  reap(masters_.at(shard));
  masters_[shard] = spawn_worker(exe_, worker_args("master", shard, 0, generation));
  masters_[shard].generation = generation;
  return masters_[shard].endpoint;
}

std::string ProcCluster::respawn_slave(ShardId shard, std::uint32_t replica,
                                       std::uint64_t generation) {
  reap(slaves_.at(shard).at(replica));
  slaves_[shard][replica] =
      spawn_worker(exe_, worker_args("slave", shard, replica, generation));
  slaves_[shard][replica].generation = generation;
  return slaves_[shard][replica].endpoint;
}

}  // namespace weips::harness
