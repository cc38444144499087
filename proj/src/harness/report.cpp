#include "weips/harness/report.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "weips/error.hpp"

namespace weips::harness {

using nlohmann::json;

RunReport collect_report(Cluster& cluster, const TrainResult& train) {
  RunReport r;
  r.config_json = cluster.config().to_json();
  r.samples = train.samples;
  r.applied = train.applied;
  r.rejected = train.rejected;
  r.versions = train.versions_cut;

  const auto entries =
      cluster.registry()->list_prefix(cluster.config().model_id + "/metrics/");
  for (const auto& [key, entry] : entries) {
    (void)key;
    r.windows.push_back(monitor::WindowMetrics::from_json(entry.value));
  }
  std::sort(r.windows.begin(), r.windows.end(),
            [](const monitor::WindowMetrics& a, const monitor::WindowMetrics& b) {
              return a.window_id < b.window_id;
            });

  std::uint64_t total_drained = 0;
  std::uint64_t total_emitted = 0;
  for (ShardId m = 0; m < cluster.config().num_masters; ++m) {
    try {
      const auto stats = cluster.master(m)->stats();
      MasterDedup d;
      d.shard = m;
      d.drained = stats.drained;
      d.emitted = stats.emitted_records;
      d.ratio = stats.emitted_records > 0
                    ? static_cast<double>(stats.drained) /
                          static_cast<double>(stats.emitted_records)
                    : 1.0;
      total_drained += stats.drained;
      total_emitted += stats.emitted_records;
      r.dedup.push_back(d);
    } catch (const Error&) {
      // Shard currently down; its counters died with it.
    }
  }
  r.dedup_ratio = total_emitted > 0 ? static_cast<double>(total_drained) /
                                          static_cast<double>(total_emitted)
                                    : 1.0;

  const auto log_stats = cluster.log().stats();
  r.log_records = log_stats.records_appended;
  r.log_bytes = log_stats.bytes_appended;
  r.log_frames = log_stats.frames_appended;
  r.events = cluster.timeline();
  return r;
}

std::string RunReport::summary_text() const {
  std::ostringstream out;
  out << "samples          " << samples << "\n"
      << "applied updates  " << applied << "\n"
      << "rejected updates " << rejected << "\n"
      << "metric windows   " << windows.size() << "\n";
  if (!windows.empty()) {
    out << "final logloss    " << windows.back().mean_logloss << "\n";
    if (windows.back().auc) out << "final auc        " << *windows.back().auc << "\n";
  }
  out << "dedup ratio      " << dedup_ratio
      << " (dirty entries drained per record emitted)\n"
      << "log records      " << log_records << "\n"
      << "log bytes        " << log_bytes << "\n"
      << "log frames       " << log_frames << "\n"
      << "versions cut     " << versions.size() << "\n";
  if (rollback_version) out << "rolled back to   v" << *rollback_version << "\n";
  for (const auto& f : freshness) {
    out << "freshness " << f.gather_mode << "  p50 " << f.result.p50
        << " ms, p99 " << f.result.p99 << " ms over "
        << f.result.latencies_ms.size() << " probes";
    if (f.result.timed_out > 0) out << " (" << f.result.timed_out << " timed out)";
    out << "\n";
  }
  out << "serving consistent: " << (consistent ? "yes" : "NO");
  if (!consistent && !consistency_detail.empty())
    out << " (" << consistency_detail << ")";
  out << "\n"
      << "events           " << events.size() << "\n";
  return out.str();
}

void write_report(const RunReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  {
    std::ofstream out(dir + "/metrics.csv");
    out << "window_id,samples,positives,mean_logloss,auc\n";
    for (const auto& w : report.windows) {
      out << w.window_id << "," << w.sample_count << "," << w.positives << ","
          << w.mean_logloss << ",";
      if (w.auc) out << *w.auc;
      out << "\n";
    }
  }
  {
    std::ofstream out(dir + "/events.csv");
    out << "at_ms,kind,detail\n";
    for (const auto& e : report.events) {
      std::string detail = e.detail;
      for (auto& c : detail)
        if (c == ',') c = ';';
      out << e.at_ms << "," << e.kind << "," << detail << "\n";
    }
  }
  {
    std::ofstream out(dir + "/dedup.csv");
    out << "shard,drained,emitted,ratio\n";
    for (const auto& d : report.dedup)
      out << d.shard << "," << d.drained << "," << d.emitted << "," << d.ratio
          << "\n";
  }
  if (!report.freshness.empty()) {
    std::ofstream out(dir + "/freshness.csv");
    out << "gather_mode,probe,latency_ms\n";
    for (const auto& f : report.freshness) {
      for (std::size_t i = 0; i < f.result.latencies_ms.size(); ++i)
        out << f.gather_mode << "," << i << "," << f.result.latencies_ms[i]
            << "\n";
    }
  }
  {
    json j{{"samples", report.samples},
           {"applied", report.applied},
           {"rejected", report.rejected},
           {"windows", report.windows.size()},
           {"dedup_ratio", report.dedup_ratio},
           {"log_records", report.log_records},
           {"log_bytes", report.log_bytes},
           {"log_frames", report.log_frames},
           {"serving_consistent", report.consistent},
           {"versions", report.versions},
           {"events", report.events.size()},
           {"config", json::parse(report.config_json)}};
    if (report.rollback_version) j["rollback_version"] = *report.rollback_version;
    if (!report.freshness.empty()) {
      json fr = json::object();
      for (const auto& f : report.freshness) {
        fr[f.gather_mode] = {{"p50_ms", f.result.p50},
                             {"p99_ms", f.result.p99},
                             {"mean_ms", f.result.mean},
                             {"probes", f.result.latencies_ms.size()},
                             {"timed_out", f.result.timed_out}};
      }
      j["freshness"] = fr;
    }
    std::ofstream out(dir + "/summary.json");
    out << j.dump(2) << "\n";
  }
  {
    std::ofstream out(dir + "/summary.txt");
    out << report.summary_text();
  }
}

}  // namespace weips::harness
