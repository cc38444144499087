#include "weips/harness/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

#include "weips/error.hpp"

namespace weips::harness {

using nlohmann::json;

void ClusterConfig::validate() const {
  if (model_id.empty())
    throw Error(ErrorCode::kInvalidArgument, "model_id must be non-empty");
  if (model_kind != "lr_ftrl" && model_kind != "fm_sgd")
    throw Error(ErrorCode::kInvalidArgument, "unknown model_kind: " + model_kind);
  if (num_masters == 0 || num_slaves == 0 || slave_replicas == 0 ||
      num_partitions == 0)
    throw Error(ErrorCode::kInvalidArgument,
                "shard, replica and partition counts must be > 0");
  if (trainers == 0 || batch_size == 0)
    throw Error(ErrorCode::kInvalidArgument, "trainers and batch_size must be > 0");
  if (mode != "local" && mode != "multiproc")
    throw Error(ErrorCode::kInvalidArgument, "unknown mode: " + mode);
  if (mode == "multiproc" && !file_log)
    throw Error(ErrorCode::kInvalidArgument,
                "multiproc mode requires file_log (processes share the log on disk)");
  hp.validate();
  master::gather_mode_from_name(gather_mode);
  monitor::version_strategy_from_name(rollback_strategy);
  workload.validate();
}

model::ModelSchema ClusterConfig::schema() const {
  if (model_kind == "fm_sgd") return model::ModelSchema::fm_sgd(hp);
  return model::ModelSchema::lr_ftrl(hp);
}

master::GatherConfig ClusterConfig::gather() const {
  master::GatherConfig g;
  g.mode = master::gather_mode_from_name(gather_mode);
  g.threshold_count = gather_threshold;
  g.period_ms = gather_period_ms;
  return g;
}

std::string ClusterConfig::to_json() const {
  json j{
      {"model_id", model_id},
      {"model_kind", model_kind},
      {"hyperparams",
       {{"alpha", hp.alpha},
        {"beta", hp.beta},
        {"lambda1", hp.lambda1},
        {"lambda2", hp.lambda2},
        {"sgd_eta", hp.sgd_eta},
        {"fm_k", hp.fm_k}}},
      {"num_masters", num_masters},
      {"num_slaves", num_slaves},
      {"slave_replicas", slave_replicas},
      {"num_partitions", num_partitions},
      {"gather_mode", gather_mode},
      {"gather_threshold", gather_threshold},
      {"gather_period_ms", gather_period_ms},
      {"sync_interval_ms", sync_interval_ms},
      {"scatter_interval_ms", scatter_interval_ms},
      {"collector_capacity", collector_capacity},
      {"work_dir", work_dir},
      {"file_log", file_log},
      {"compress_log", compress_log},
      {"probe_interval_ms", probe_interval_ms},
      {"probe_miss_limit", probe_miss_limit},
      {"ckpt_local_interval_ms", ckpt_local_interval_ms},
      {"ckpt_remote_interval_ms", ckpt_remote_interval_ms},
      {"ckpt_jitter_frac", ckpt_jitter_frac},
      {"min_slave_replicas", min_slave_replicas},
      {"rollback_strategy", rollback_strategy},
      {"monitor",
       {{"window_size", monitor.window_size},
        {"smooth_k", monitor.smooth_k},
        {"degrade_ratio", monitor.degrade_ratio},
        {"baseline_windows", monitor.baseline_windows}}},
      {"trainers", trainers},
      {"batch_size", batch_size},
      {"workload", json::parse(workload.to_json())},
      {"checkpoint_every_samples", checkpoint_every_samples},
      {"rollback_on_degrade", rollback_on_degrade},
      {"mode", mode},
      {"seed", seed},
  };
  return j.dump(2);
}

ClusterConfig ClusterConfig::from_json(const std::string& text) {
  ClusterConfig c;
  try {
    const json j = json::parse(text);
    c.model_id = j.value("model_id", c.model_id);
    c.model_kind = j.value("model_kind", c.model_kind);
    if (j.contains("hyperparams")) {
      const json& h = j["hyperparams"];
      c.hp.alpha = h.value("alpha", c.hp.alpha);
      c.hp.beta = h.value("beta", c.hp.beta);
      c.hp.lambda1 = h.value("lambda1", c.hp.lambda1);
      c.hp.lambda2 = h.value("lambda2", c.hp.lambda2);
      c.hp.sgd_eta = h.value("sgd_eta", c.hp.sgd_eta);
      c.hp.fm_k = h.value("fm_k", c.hp.fm_k);
    }
    c.num_masters = j.value("num_masters", c.num_masters);
    c.num_slaves = j.value("num_slaves", c.num_slaves);
    c.slave_replicas = j.value("slave_replicas", c.slave_replicas);
    c.num_partitions = j.value("num_partitions", c.num_partitions);
    c.gather_mode = j.value("gather_mode", c.gather_mode);
    c.gather_threshold = j.value("gather_threshold", c.gather_threshold);
    c.gather_period_ms = j.value("gather_period_ms", c.gather_period_ms);
    c.sync_interval_ms = j.value("sync_interval_ms", c.sync_interval_ms);
    c.scatter_interval_ms = j.value("scatter_interval_ms", c.scatter_interval_ms);
    c.collector_capacity = j.value("collector_capacity", c.collector_capacity);
    c.work_dir = j.value("work_dir", c.work_dir);
    c.file_log = j.value("file_log", c.file_log);
    c.compress_log = j.value("compress_log", c.compress_log);
    c.probe_interval_ms = j.value("probe_interval_ms", c.probe_interval_ms);
    c.probe_miss_limit = j.value("probe_miss_limit", c.probe_miss_limit);
    c.ckpt_local_interval_ms =
        j.value("ckpt_local_interval_ms", c.ckpt_local_interval_ms);
    c.ckpt_remote_interval_ms =
        j.value("ckpt_remote_interval_ms", c.ckpt_remote_interval_ms);
    c.ckpt_jitter_frac = j.value("ckpt_jitter_frac", c.ckpt_jitter_frac);
    c.min_slave_replicas = j.value("min_slave_replicas", c.min_slave_replicas);
    c.rollback_strategy = j.value("rollback_strategy", c.rollback_strategy);
    if (j.contains("monitor")) {
      const json& m = j["monitor"];
      c.monitor.window_size = m.value("window_size", c.monitor.window_size);
      c.monitor.smooth_k = m.value("smooth_k", c.monitor.smooth_k);
      c.monitor.degrade_ratio = m.value("degrade_ratio", c.monitor.degrade_ratio);
      c.monitor.baseline_windows =
          m.value("baseline_windows", c.monitor.baseline_windows);
    }
    c.trainers = j.value("trainers", c.trainers);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("workload"))
      c.workload = WorkloadSpec::from_json(j["workload"].dump());
    c.checkpoint_every_samples =
        j.value("checkpoint_every_samples", c.checkpoint_every_samples);
    c.rollback_on_degrade = j.value("rollback_on_degrade", c.rollback_on_degrade);
    c.mode = j.value("mode", c.mode);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string("bad cluster config json: ") + e.what());
  }
  c.validate();
  return c;
}

ClusterConfig ClusterConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

void ClusterConfig::save_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write config file: " + path);
  out << to_json() << "\n";
}

ClusterConfig example_config() {
  ClusterConfig c;
  c.model_id = "ctr";
  c.num_masters = 2;
  c.num_slaves = 4;
  c.slave_replicas = 2;
  c.num_partitions = 2;
  c.gather_mode = "threshold";
  c.gather_threshold = 1000;
  c.workload.num_samples = 50'000;
  c.workload.num_features = 20'000;
  c.workload.zipf_s = 1.1;
  c.checkpoint_every_samples = 10'000;
  c.rollback_on_degrade = true;
  c.workload.corruption = CorruptionSpec{40'000, "label-flip", 1.0};
  return c;
}

}  // namespace weips::harness
