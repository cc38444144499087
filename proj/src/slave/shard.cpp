#include "weips/slave/shard.hpp"

#include <algorithm>

#include "weips/error.hpp"
#include "weips/master/checkpoint.hpp"
#include "weips/model/ops.hpp"

namespace weips::slave {

SlaveShard::SlaveShard(SlaveConfig cfg, model::ModelSchema schema,
                       std::shared_ptr<plog::PartitionedLog> log,
                       std::shared_ptr<Clock> clock)
    : cfg_(std::move(cfg)),
      schema_(std::move(schema)),
      log_(std::move(log)),
      clock_(std::move(clock)) {
  if (cfg_.num_shards == 0)
    throw Error(ErrorCode::kInvalidArgument, "num_shards must be positive");
  if (cfg_.shard_id >= cfg_.num_shards)
    throw Error(ErrorCode::kInvalidArgument, "shard_id out of range");
  consumed_.assign(log_->num_partitions(), 0);
}

SlaveShard::~SlaveShard() { stop_scatter(); }

void SlaveShard::validate_ownership(FeatureId id) const {
  if (owner_shard(id, cfg_.num_shards) != cfg_.shard_id)
    throw Error(ErrorCode::kRouting,
                "feature " + std::to_string(id) + " not owned by slave shard " +
                    std::to_string(cfg_.shard_id));
}

std::size_t SlaveShard::apply_batch(const std::vector<plog::LogEntry>& entries,
                                    PartitionId partition) {
  if (entries.empty()) return 0;
  std::size_t applied = 0;
  std::unique_lock lock(table_mu_);
  for (const auto& entry : entries) {
    const plog::UpdateRecord& rec = *entry.record;
    consumed_[partition] = entry.offset + 1;
    if (rec.model_id != cfg_.model_id) {
      skipped_other_model_.fetch_add(1, std::memory_order_relaxed);
      continue;
    }
    if (owner_shard(rec.feature_id, cfg_.num_shards) != cfg_.shard_id) {
      skipped_unowned_.fetch_add(1, std::memory_order_relaxed);
      continue;
    }
    if (rec.op == UpdateOp::kDelete) {
      table_.erase(rec.feature_id);
      applied_deletes_.fetch_add(1, std::memory_order_relaxed);
    } else {
      try {
        rec.payload.validate(schema_, model::View::kServing);
      } catch (const Error&) {
        quarantined_.fetch_add(1, std::memory_order_relaxed);
        continue;
      }
      table_[rec.feature_id] = rec.payload;
      applied_upserts_.fetch_add(1, std::memory_order_relaxed);
    }
    ++applied;
    if (apply_hook_) apply_hook_(rec);
  }
  return applied;
}

std::size_t SlaveShard::scatter_step() {
  std::lock_guard sweep(scatter_mu_);
  std::size_t applied = 0;
  for (PartitionId p = 0; p < log_->num_partitions(); ++p) {
    auto entries = log_->read_from(p, consumed_[p], cfg_.scatter_batch);
    applied += apply_batch(entries, p);
  }
  return applied;
}

void SlaveShard::catch_up_to_tails() {
  const PartitionId parts = log_->num_partitions();
  std::vector<Offset> goals(parts);
  for (PartitionId p = 0; p < parts; ++p) goals[p] = log_->tail(p);
  for (;;) {
    bool behind = false;
    {
      std::lock_guard sweep(scatter_mu_);
      for (PartitionId p = 0; p < parts; ++p) {
        while (consumed_[p] < goals[p]) {
          auto entries = log_->read_from(p, consumed_[p], cfg_.scatter_batch);
          if (entries.empty()) break;
          apply_batch(entries, p);
        }
        if (consumed_[p] < goals[p]) behind = true;
      }
    }
    if (!behind) return;
    clock_->sleep_ms(1);
  }
}

std::vector<std::pair<FeatureId, model::ParameterSlot>> SlaveShard::pull_serving(
    const std::vector<FeatureId>& ids) const {
  if (!healthy())
    throw Error(ErrorCode::kUnavailable,
                "slave shard " + std::to_string(cfg_.shard_id) + " replica " +
                    std::to_string(cfg_.replica_id) + " is unhealthy");
  for (FeatureId id : ids) validate_ownership(id);
  std::vector<std::pair<FeatureId, model::ParameterSlot>> out;
  out.reserve(ids.size());
  std::shared_lock lock(table_mu_);
  for (FeatureId id : ids) {
    auto it = table_.find(id);
    if (it == table_.end())
      out.emplace_back(id, model::ParameterSlot::zero(schema_, model::View::kServing));
    else
      out.emplace_back(id, it->second);
  }
  return out;
}

void SlaveShard::load_version(const std::string& version_dir, Version version,
                              OffsetPolicy policy) {
  ckpt::LoadedTable loaded =
      ckpt::load_slice(version_dir, cfg_.num_shards, cfg_.shard_id);
  std::map<PartitionId, Offset> offsets;
  if (policy == OffsetPolicy::kReplayFromVersion)
    offsets = ckpt::replay_offsets(version_dir);

  std::lock_guard sweep(scatter_mu_);
  std::unique_lock lock(table_mu_);
  table_.clear();
  table_.reserve(loaded.slots.size());
  for (auto& [id, slot] : loaded.slots)
    table_.emplace(id, model::transform_for_serving(schema_, slot));
  for (PartitionId p = 0; p < log_->num_partitions(); ++p) {
    if (policy == OffsetPolicy::kSkipToTail) {
      consumed_[p] = log_->tail(p);
    } else {
      auto it = offsets.find(p);
      consumed_[p] = it == offsets.end() ? 0 : it->second;
    }
  }
  version_.store(version, std::memory_order_relaxed);
}

void SlaveShard::set_apply_hook(std::function<void(const plog::UpdateRecord&)> hook) {
  std::lock_guard sweep(scatter_mu_);
  std::unique_lock lock(table_mu_);
  apply_hook_ = std::move(hook);
}

void SlaveShard::start_scatter() {
  if (puller_.joinable()) return;
  stop_puller_.store(false, std::memory_order_relaxed);
  puller_ = std::thread([this] {
    while (!stop_puller_.load(std::memory_order_relaxed)) {
      std::size_t applied = scatter_step();
      if (applied == 0) clock_->sleep_ms(cfg_.scatter_interval_ms);
    }
  });
}

void SlaveShard::stop_scatter() {
  if (!puller_.joinable()) return;
  stop_puller_.store(true, std::memory_order_relaxed);
  puller_.join();
}

SlaveShard::Stats SlaveShard::stats() const {
  Stats s;
  s.applied_upserts = applied_upserts_.load(std::memory_order_relaxed);
  s.applied_deletes = applied_deletes_.load(std::memory_order_relaxed);
  s.skipped_unowned = skipped_unowned_.load(std::memory_order_relaxed);
  s.skipped_other_model = skipped_other_model_.load(std::memory_order_relaxed);
  s.quarantined = quarantined_.load(std::memory_order_relaxed);
  s.version = version_.load(std::memory_order_relaxed);
  s.healthy = healthy();
  std::shared_lock lock(table_mu_);
  s.param_count = table_.size();
  for (PartitionId p = 0; p < static_cast<PartitionId>(consumed_.size()); ++p)
    s.consumed_offsets[p] = consumed_[p];
  return s;
}

std::vector<std::pair<FeatureId, model::ParameterSlot>> SlaveShard::dump_table()
    const {
  std::vector<std::pair<FeatureId, model::ParameterSlot>> out;
  {
    std::shared_lock lock(table_mu_);
    out.reserve(table_.size());
    for (const auto& [id, slot] : table_) out.emplace_back(id, slot);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

}  // namespace weips::slave
