#pragma once

#include <sys/types.h>

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "weips/harness/config.hpp"
#include "weips/harness/workload.hpp"
#include "weips/net/client.hpp"
#include "weips/net/tcp.hpp"
#include "weips/scheduler/scheduler.hpp"

namespace weips::harness {

struct WorkerProc {
  pid_t pid = -1;
  std::string endpoint;  // 127.0.0.1:<port>
  std::uint64_t generation = 0;
};

// Spawns `exe worker ...` with the given arguments, reads the WEIPS_PORT
// line the worker prints once its server is bound, and returns the handle.
WorkerProc spawn_worker(const std::string& exe,
                        const std::vector<std::string>& args,
                        std::int64_t timeout_ms = 15'000);

// Multi-process topology: registry, masters and slave replicas each run in
// their own process serving the wire protocol over TCP; the scheduler, the
// trainer and the oracles run here and talk to everything through the same
// frames the single-process mode uses. The log is shared through the file
// system.
class ProcCluster final : public scheduler::Spawner {
 public:
  ProcCluster(ClusterConfig cfg, std::string exe);
  ~ProcCluster() override;

  ProcCluster(const ProcCluster&) = delete;
  ProcCluster& operator=(const ProcCluster&) = delete;

  void start();
  void stop();

  // Pushes the workload stream and returns applied/rejected counts.
  std::pair<std::uint64_t, std::uint64_t> train_stream(std::uint64_t begin,
                                                       std::uint64_t end);

  void quiesce();
  bool serving_consistent(std::string* detail = nullptr);

  void kill_master(ShardId shard);
  void kill_slave(ShardId shard, std::uint32_t replica);

  std::string respawn_master(ShardId shard, std::uint64_t generation) override;
  std::string respawn_slave(ShardId shard, std::uint32_t replica,
                            std::uint64_t generation) override;

  scheduler::Scheduler& sched() { return *scheduler_; }
  net::Bus& bus() { return *bus_; }
  net::ModelClient& client() { return *client_; }
  std::shared_ptr<registry::RegistryHandle> registry() { return registry_; }
  const ClusterConfig& config() const { return cfg_; }
  const std::string& work_dir() const { return work_dir_; }
  std::string version_dir(Version version) const;
  const WorkerProc& master_proc(ShardId shard) const;
  const WorkerProc& slave_proc(ShardId shard, std::uint32_t replica) const;

 private:
  std::vector<std::string> worker_args(const std::string& role, ShardId shard,
                                       std::uint32_t replica,
                                       std::uint64_t generation) const;
  void shutdown_proc(WorkerProc& proc, std::int64_t grace_ms);
  void reap(WorkerProc& proc);

  ClusterConfig cfg_;
  std::string exe_;
  model::ModelSchema schema_;
  std::string work_dir_;
  std::string config_path_;

  std::shared_ptr<net::TcpBus> bus_;
  WorkerProc registry_proc_;
  std::shared_ptr<registry::RegistryHandle> registry_;
  std::shared_ptr<scheduler::Scheduler> scheduler_;
  std::unique_ptr<net::ModelClient> client_;
  std::unique_ptr<Workload> workload_;

  std::vector<WorkerProc> masters_;
  std::vector<std::vector<WorkerProc>> slaves_;
  bool started_ = false;
};

}  // namespace weips::harness
