#include "weips/harness/freshness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include "weips/error.hpp"
#include "weips/model/ops.hpp"

namespace weips::harness {

namespace {

double steady_ms() {
  using namespace std::chrono;
  return duration_cast<microseconds>(steady_clock::now().time_since_epoch())
             .count() /
         1000.0;
}

model::GradientMap probe_gradient(const model::ModelSchema& schema) {
  model::GradientMap g{{"w", {1.0}}};
  if (schema.kind() == model::ModelKind::kFmSgd)
    g.emplace_back("v", std::vector<double>(schema.hyperparams().fm_k, 0.0));
  return g;
}

}  // namespace

double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(rank));
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

FreshnessResult measure_freshness(Cluster& cluster,
                                  const FreshnessOptions& opts) {
  const model::ModelSchema schema = cluster.config().schema();
  const model::GradientMap grad = probe_gradient(schema);
  const model::ParameterSlot expected = model::transform_for_serving(
      schema,
      model::apply_update(schema, model::ParameterSlot::zero(schema), grad));

  struct Probe {
    FeatureId id = 0;
    double t0 = 0.0;
    bool done = false;
    double latency_ms = -1.0;
  };
  std::vector<Probe> probes;
  probes.reserve(opts.probes);
  std::mutex mu;
  std::atomic<bool> launching{true};

  std::thread poller([&] {
    net::ModelClient client(cluster.bus(), cluster.config().model_id);
    client.refresh_routing(*cluster.registry());
    for (;;) {
      std::vector<FeatureId> outstanding;
      {
        std::lock_guard lock(mu);
        for (const auto& p : probes)
          if (!p.done) outstanding.push_back(p.id);
        if (outstanding.empty() && !launching.load(std::memory_order_relaxed)) {
          const bool all_launched = probes.size() >= opts.probes;
          if (all_launched) return;
        }
      }
      if (!outstanding.empty()) {
        try {
          const auto pull = client.pull_serving(outstanding);
          const double now = steady_ms();
          std::lock_guard lock(mu);
          for (const auto& [id, slot] : pull.slots) {
            if (!model::bitwise_equal(slot, expected)) continue;
            for (auto& p : probes) {
              if (p.id == id && !p.done) {
                p.done = true;
                p.latency_ms = now - p.t0;
                break;
              }
            }
          }
        } catch (const std::exception&) {
          client.refresh_routing(*cluster.registry());
        }
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(opts.poll_ms));
    }
  });

  net::ModelClient pusher(cluster.bus(), cluster.config().model_id);
  pusher.refresh_routing(*cluster.registry());
  const double launch_start = steady_ms();
  for (std::size_t i = 0; i < opts.probes; ++i) {
    Probe p;
    p.id = cluster.next_sentinel_id();
    p.t0 = steady_ms();
    pusher.push({{p.id, grad}});
    {
      std::lock_guard lock(mu);
      probes.push_back(p);
    }
    if (opts.stagger_ms > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(opts.stagger_ms));
  }
  launching.store(false, std::memory_order_relaxed);

  // Wait for the poller with a hard deadline past the last launch.
  const double deadline = steady_ms() + static_cast<double>(opts.timeout_ms);
  while (steady_ms() < deadline) {
    {
      std::lock_guard lock(mu);
      const bool all_done =
          std::all_of(probes.begin(), probes.end(),
                      [](const Probe& p) { return p.done; });
      if (all_done) break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  {
    // Mark stragglers done so the poller exits.
    std::lock_guard lock(mu);
    for (auto& p : probes)
      if (!p.done) p.done = true;
  }
  launching.store(false, std::memory_order_relaxed);
  poller.join();

  FreshnessResult result;
  {
    std::lock_guard lock(mu);
    for (const auto& p : probes) {
      if (p.latency_ms >= 0.0)
        result.latencies_ms.push_back(p.latency_ms);
      else
        ++result.timed_out;
    }
  }
  (void)launch_start;
  if (!result.latencies_ms.empty()) {
    result.p50 = percentile(result.latencies_ms, 50.0);
    result.p99 = percentile(result.latencies_ms, 99.0);
    double sum = 0.0;
    for (double v : result.latencies_ms) sum += v;
    result.mean = sum / static_cast<double>(result.latencies_ms.size());
  }
  return result;
}

std::vector<FreshnessBenchEntry> run_freshness_bench(
    ClusterConfig base, const FreshnessOptions& opts) {
  std::vector<FreshnessBenchEntry> entries;
  for (const std::string mode : {"realtime", "threshold", "period"}) {
    ClusterConfig cfg = base;
    cfg.gather_mode = mode;
    cfg.work_dir.clear();
    Cluster cluster(cfg);
    cluster.start();

    std::atomic<bool> stop_load{false};
    TrainOptions load;
    load.begin = 0;
    load.end = cfg.workload.num_samples;
    load.validate = false;
    load.throttle_samples_per_sec =
        cfg.workload.samples_per_second > 0 ? cfg.workload.samples_per_second
                                            : 2000;
    load.external_stop = &stop_load;
    std::thread background([&] { cluster.train(load); });

    FreshnessResult result = measure_freshness(cluster, opts);
    stop_load.store(true, std::memory_order_relaxed);
    background.join();
    cluster.stop();
    entries.push_back({mode, std::move(result)});
  }
  return entries;
}

}  // namespace weips::harness
