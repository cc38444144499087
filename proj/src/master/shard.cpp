#include "weips/master/shard.hpp"

#include <algorithm>

#include "weips/error.hpp"

namespace weips::master {

const char* gather_mode_name(GatherMode m) {
  switch (m) {
    case GatherMode::kRealtime: return "realtime";
    case GatherMode::kThreshold: return "threshold";
    case GatherMode::kPeriod: return "period";
  }
  return "unknown";
}

GatherMode gather_mode_from_name(const std::string& name) {
  if (name == "realtime") return GatherMode::kRealtime;
  if (name == "threshold") return GatherMode::kThreshold;
  if (name == "period") return GatherMode::kPeriod;
  throw Error(ErrorCode::kInvalidArgument, "unknown gather mode: " + name);
}

MasterShard::MasterShard(MasterConfig cfg, model::ModelSchema schema,
                         std::shared_ptr<plog::PartitionedLog> log,
                         std::shared_ptr<Clock> clock)
    : cfg_(std::move(cfg)),
      schema_(std::move(schema)),
      log_(std::move(log)),
      clock_(std::move(clock)),
      collector_(cfg_.collector_capacity) {
  if (cfg_.num_shards == 0)
    throw Error(ErrorCode::kInvalidArgument, "num_shards must be positive");
  if (cfg_.shard_id >= cfg_.num_shards)
    throw Error(ErrorCode::kInvalidArgument, "shard_id out of range");
  schema_.hyperparams().validate();
  partition_ = partition_for_shard(cfg_.shard_id, log_->num_partitions());
  last_emit_ms_ = clock_->now_ms();
  drain_buf_.reserve(4096);
}

MasterShard::~MasterShard() { stop_sync(); }

void MasterShard::validate_ownership(FeatureId id) const {
  if (owner_shard(id, cfg_.num_shards) != cfg_.shard_id)
    throw Error(ErrorCode::kRouting,
                "feature " + std::to_string(id) + " not owned by shard " +
                    std::to_string(cfg_.shard_id));
}

PushAck MasterShard::push_gradients(
    const std::vector<std::pair<FeatureId, model::GradientMap>>& updates) {
  for (const auto& [id, grads] : updates) {
    (void)grads;
    validate_ownership(id);
  }
  PushAck ack;
  std::unique_lock lock(table_mu_);
  for (const auto& [id, grads] : updates) {
    auto it = table_.find(id);
    model::ParameterSlot updated;
    try {
      if (it == table_.end()) {
        updated = model::apply_update(
            schema_, model::ParameterSlot::zero(schema_, model::View::kTraining),
            grads);
      } else {
        updated = model::apply_update(schema_, it->second.slot, grads);
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kNumericOverflow) {
        ++ack.rejected;
        rejected_updates_.fetch_add(1, std::memory_order_relaxed);
        continue;
      }
      throw;
    }
    if (it == table_.end()) {
      table_.emplace(id, SlotEntry{std::move(updated), ++epoch_});
    } else {
      it->second.slot = std::move(updated);
      it->second.touched_epoch = ++epoch_;
    }
    ++ack.applied;
    collector_.collect(DirtyEntry{id, UpdateOp::kUpsert});
  }
  ack.epoch = epoch_;
  return ack;
}

std::vector<std::pair<FeatureId, model::ParameterSlot>>
MasterShard::pull_parameters(const std::vector<FeatureId>& ids) const {
  for (FeatureId id : ids) validate_ownership(id);
  std::vector<std::pair<FeatureId, model::ParameterSlot>> out;
  out.reserve(ids.size());
  std::shared_lock lock(table_mu_);
  for (FeatureId id : ids) {
    auto it = table_.find(id);
    if (it == table_.end())
      out.emplace_back(id, model::ParameterSlot::zero(schema_, model::View::kTraining));
    else
      out.emplace_back(id, it->second.slot);
  }
  return out;
}

std::size_t MasterShard::drain_into_pending() {
  std::size_t total = 0;
  for (;;) {
    drain_buf_.clear();
    std::size_t n = collector_.drain(drain_buf_, 4096);
    if (n == 0) break;
    total += n;
    for (const DirtyEntry& e : drain_buf_) {
      auto [it, inserted] = pending_op_.try_emplace(e.feature_id, e.op);
      if (inserted)
        pending_order_.push_back(e.feature_id);
      else
        it->second = e.op;  // last op wins
    }
  }
  return total;
}

bool MasterShard::mode_fires_locked(std::int64_t now_ms) const {
  switch (cfg_.gather.mode) {
    case GatherMode::kRealtime:
      return !pending_order_.empty();
    case GatherMode::kThreshold:
      return pending_order_.size() >= cfg_.gather.threshold_count;
    case GatherMode::kPeriod:
      return now_ms - last_emit_ms_ >= cfg_.gather.period_ms;
  }
  return false;
}

std::vector<plog::UpdateRecord> MasterShard::materialize_pending(
    bool table_locked) {
  std::vector<plog::UpdateRecord> records;
  records.reserve(pending_order_.size());
  std::shared_lock<std::shared_mutex> lock(table_mu_, std::defer_lock);
  if (!table_locked) lock.lock();
  for (FeatureId id : pending_order_) {
    plog::UpdateRecord rec;
    rec.model_id = cfg_.model_id;
    rec.feature_id = id;
    rec.source_shard = cfg_.shard_id;
    auto it = table_.find(id);
    if (pending_op_.at(id) == UpdateOp::kDelete || it == table_.end()) {
      rec.op = UpdateOp::kDelete;
      rec.epoch = epoch_;
    } else {
      rec.op = UpdateOp::kUpsert;
      rec.epoch = it->second.touched_epoch;
      rec.payload = model::transform_for_serving(schema_, it->second.slot);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::size_t MasterShard::emit_locked(std::vector<plog::UpdateRecord> records) {
  if (records.empty()) return 0;
  const std::size_t count = records.size();
  for (int attempt = 0;; ++attempt) {
    try {
      log_->append(partition_, records);
      break;
    } catch (const Error&) {
      if (attempt >= cfg_.append_retries) {
        sync_stalled_.store(true, std::memory_order_relaxed);
        return 0;
      }
      clock_->sleep_ms(cfg_.append_backoff_ms << attempt);
    }
  }
  pending_op_.clear();
  pending_order_.clear();
  sync_stalled_.store(false, std::memory_order_relaxed);
  emitted_records_.fetch_add(count, std::memory_order_relaxed);
  emitted_batches_.fetch_add(1, std::memory_order_relaxed);
  return count;
}

std::size_t MasterShard::sync_pass_internal(bool force, bool table_locked) {
  drain_into_pending();
  const std::int64_t now = clock_->now_ms();
  if (!force && !mode_fires_locked(now)) return 0;
  auto records = materialize_pending(table_locked);
  last_emit_ms_ = now;
  return emit_locked(std::move(records));
}

std::size_t MasterShard::sync_pass() {
  std::lock_guard lock(sync_mu_);
  return sync_pass_internal(false, false);
}

std::size_t MasterShard::force_sync() {
  std::lock_guard lock(sync_mu_);
  return sync_pass_internal(true, false);
}

void MasterShard::start_sync() {
  if (pusher_.joinable()) return;
  stop_pusher_.store(false, std::memory_order_relaxed);
  pusher_ = std::thread([this] {
    while (!stop_pusher_.load(std::memory_order_relaxed)) {
      std::size_t emitted = sync_pass();
      if (emitted == 0) clock_->sleep_ms(cfg_.sync_interval_ms);
    }
  });
}

void MasterShard::stop_sync() {
  if (!pusher_.joinable()) return;
  stop_pusher_.store(true, std::memory_order_relaxed);
  pusher_.join();
}

std::vector<FeatureId> MasterShard::filter_features(const FilterPolicy& policy) {
  std::vector<FeatureId> evicted;
  {
    std::unique_lock lock(table_mu_);
    std::vector<std::pair<Epoch, FeatureId>> by_age;
    by_age.reserve(table_.size());
    for (const auto& [id, entry] : table_)
      by_age.emplace_back(entry.touched_epoch, id);
    std::sort(by_age.begin(), by_age.end());

    std::size_t evict_count = 0;
    if (policy.max_epoch_age) {
      while (evict_count < by_age.size() &&
             epoch_ - by_age[evict_count].first >= *policy.max_epoch_age)
        ++evict_count;
    }
    if (policy.max_params && by_age.size() > *policy.max_params)
      evict_count = std::max(evict_count, by_age.size() - *policy.max_params);

    evicted.reserve(evict_count);
    for (std::size_t i = 0; i < evict_count; ++i) {
      table_.erase(by_age[i].second);
      evicted.push_back(by_age[i].second);
    }
  }
  std::sort(evicted.begin(), evicted.end());
  for (FeatureId id : evicted) collector_.collect(DirtyEntry{id, UpdateOp::kDelete});
  filtered_features_.fetch_add(evicted.size(), std::memory_order_relaxed);
  return evicted;
}

ckpt::CheckpointMeta MasterShard::save_checkpoint(Version version,
                                                  const std::string& root,
                                                  std::int64_t jitter_ms) {
  if (jitter_ms > 0) clock_->sleep_ms(jitter_ms);

  ckpt::ShardSnapshot snapshot;
  {
    std::lock_guard sync_lock(sync_mu_);
    std::unique_lock table_lock(table_mu_);
    sync_pass_internal(true, true);
    if (!pending_order_.empty())
      throw Error(ErrorCode::kCheckpointFailed,
                  "could not flush pending updates before snapshot");

    snapshot.meta.model_id = cfg_.model_id;
    snapshot.meta.shard_id = cfg_.shard_id;
    snapshot.meta.num_shards = cfg_.num_shards;
    snapshot.meta.version = version;
    snapshot.meta.created_at_ms = clock_->now_ms();
    for (PartitionId p = 0; p < log_->num_partitions(); ++p)
      snapshot.meta.log_offsets[p] = log_->tail(p);
    snapshot.schema = schema_;
    snapshot.epoch = epoch_;
    snapshot.slots.reserve(table_.size());
    for (const auto& [id, entry] : table_) snapshot.slots.emplace_back(id, entry.slot);
  }
  std::sort(snapshot.slots.begin(), snapshot.slots.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  try {
    return ckpt::write_shard_snapshot(
        ckpt::version_dir(root, cfg_.model_id, version), snapshot);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kIo)
      throw Error(ErrorCode::kCheckpointFailed, e.what());
    throw;
  }
}

void MasterShard::restore_from_checkpoint(const std::string& dir, bool reannounce) {
  ckpt::LoadedTable loaded = ckpt::load_slice(dir, cfg_.num_shards, cfg_.shard_id);

  std::lock_guard sync_lock(sync_mu_);
  std::unique_lock table_lock(table_mu_);
  table_.clear();
  table_.reserve(loaded.slots.size());
  epoch_ = std::max(epoch_, loaded.epoch);
  for (auto& [id, slot] : loaded.slots) {
    SlotEntry entry;
    entry.slot = std::move(slot);
    entry.touched_epoch = loaded.epoch;
    table_.emplace(id, std::move(entry));
  }
  if (reannounce) {
    // Straight into the gather stage: the table can exceed the collector
    // capacity, and nothing may be draining it yet.
    for (const auto& [id, entry] : table_) {
      (void)entry;
      auto [it, inserted] = pending_op_.try_emplace(id, UpdateOp::kUpsert);
      if (inserted)
        pending_order_.push_back(id);
      else
        it->second = UpdateOp::kUpsert;
    }
  }
}

MasterShard::Stats MasterShard::stats() const {
  Stats s;
  s.enqueued = collector_.enqueued();
  s.drained = collector_.drained();
  s.emitted_records = emitted_records_.load(std::memory_order_relaxed);
  s.emitted_batches = emitted_batches_.load(std::memory_order_relaxed);
  s.rejected_updates = rejected_updates_.load(std::memory_order_relaxed);
  s.filtered_features = filtered_features_.load(std::memory_order_relaxed);
  s.backpressure_waits = collector_.backpressure_waits();
  s.sync_stalled = sync_stalled_.load(std::memory_order_relaxed);
  std::shared_lock lock(table_mu_);
  s.epoch = epoch_;
  s.param_count = table_.size();
  return s;
}

std::vector<std::pair<FeatureId, model::ParameterSlot>> MasterShard::dump_table()
    const {
  std::vector<std::pair<FeatureId, model::ParameterSlot>> out;
  {
    std::shared_lock lock(table_mu_);
    out.reserve(table_.size());
    for (const auto& [id, entry] : table_) out.emplace_back(id, entry.slot);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

Epoch MasterShard::epoch() const {
  std::shared_lock lock(table_mu_);
  return epoch_;
}

std::uint64_t MasterShard::param_count() const {
  std::shared_lock lock(table_mu_);
  return table_.size();
}

}  // namespace weips::master
