#include "weips/master/checkpoint.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "weips/codec.hpp"
#include "weips/error.hpp"

namespace weips::ckpt {
namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kBodyMagic = 0x4b435057;  // "WPCK"
constexpr std::uint32_t kBodyFormat = 1;

std::string body_path(const std::string& dir, ShardId shard) {
  return dir + "/shard-" + std::to_string(shard) + ".ckpt";
}

std::string meta_path(const std::string& dir, ShardId shard) {
  return dir + "/shard-" + std::to_string(shard) + ".meta.json";
}

void write_file_durable(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error(ErrorCode::kIo, "open " + tmp + " failed");
  std::size_t off = 0;
  while (off < bytes.size()) {
    ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
    if (n < 0) {
      ::close(fd);
      ::unlink(tmp.c_str());
      throw Error(ErrorCode::kIo, "write " + tmp + " failed");
    }
    off += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    ::unlink(tmp.c_str());
    throw Error(ErrorCode::kIo, "fsync " + tmp + " failed");
  }
  ::close(fd);
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    ::unlink(tmp.c_str());
    throw Error(ErrorCode::kIo, "rename to " + path + " failed");
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kNotFound, "missing file: " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::string encode_body(const ShardSnapshot& s) {
  BinaryWriter w;
  w.u32(kBodyMagic);
  w.u32(kBodyFormat);
  w.str(s.meta.model_id);
  w.u32(s.meta.shard_id);
  w.u32(s.meta.num_shards);
  w.u64(s.meta.version);
  w.u64(s.epoch);
  const model::HyperParams& hp = s.schema.hyperparams();
  w.u8(static_cast<std::uint8_t>(s.schema.kind()));
  w.f64(hp.alpha);
  w.f64(hp.beta);
  w.f64(hp.lambda1);
  w.f64(hp.lambda2);
  w.f64(hp.sgd_eta);
  w.u32(hp.fm_k);
  w.u64(s.slots.size());
  for (const auto& [id, slot] : s.slots) {
    w.u64(id);
    w.u32(static_cast<std::uint32_t>(slot.matrices().size()));
    for (const auto& m : slot.matrices()) {
      w.str(m.name);
      w.f64_vec(m.values);
    }
  }
  return std::string(w.data().begin(), w.data().end());
}

ShardSnapshot decode_body(const std::string& bytes) {
  BinaryReader r(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
  if (r.u32() != kBodyMagic)
    throw Error(ErrorCode::kCorruptCheckpoint, "bad checkpoint magic");
  if (r.u32() != kBodyFormat)
    throw Error(ErrorCode::kCorruptCheckpoint, "unsupported checkpoint format");
  ShardSnapshot s;
  s.meta.model_id = r.str();
  s.meta.shard_id = r.u32();
  s.meta.num_shards = r.u32();
  s.meta.version = r.u64();
  s.epoch = r.u64();
  auto kind = r.u8();
  model::HyperParams hp;
  hp.alpha = r.f64();
  hp.beta = r.f64();
  hp.lambda1 = r.f64();
  hp.lambda2 = r.f64();
  hp.sgd_eta = r.f64();
  hp.fm_k = r.u32();
  s.schema = kind == static_cast<std::uint8_t>(model::ModelKind::kLrFtrl)
                 ? model::ModelSchema::lr_ftrl(hp)
                 : model::ModelSchema::fm_sgd(hp);
  const std::uint64_t count = r.u64();
  s.slots.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureId id = r.u64();
    model::ParameterSlot slot;
    const std::uint32_t nm = r.u32();
    slot.matrices().reserve(nm);
    for (std::uint32_t j = 0; j < nm; ++j) {
      model::ParameterSlot::Matrix m;
      m.name = r.str();
      m.values = r.f64_vec();
      slot.matrices().push_back(std::move(m));
    }
    s.slots.emplace_back(id, std::move(slot));
  }
  if (!r.done())
    throw Error(ErrorCode::kCorruptCheckpoint, "trailing bytes in checkpoint body");
  s.meta.param_count = count;
  return s;
}

}  // namespace

std::string CheckpointMeta::to_json() const {
  nlohmann::json j;
  j["model_id"] = model_id;
  j["shard_id"] = shard_id;
  j["num_shards"] = num_shards;
  j["version"] = version;
  j["created_at_ms"] = created_at_ms;
  j["param_count"] = param_count;
  char digest_hex[17];
  std::snprintf(digest_hex, sizeof(digest_hex), "%016llx",
                static_cast<unsigned long long>(content_digest));
  j["content_digest"] = digest_hex;
  nlohmann::json offs = nlohmann::json::object();
  for (const auto& [p, off] : log_offsets) offs[std::to_string(p)] = off;
  j["log_offsets"] = offs;
  return j.dump(2);
}

CheckpointMeta CheckpointMeta::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kCorruptCheckpoint,
                std::string("bad checkpoint manifest: ") + e.what());
  }
  CheckpointMeta m;
  m.model_id = j.at("model_id").get<std::string>();
  m.shard_id = j.at("shard_id").get<ShardId>();
  m.num_shards = j.at("num_shards").get<std::uint32_t>();
  m.version = j.at("version").get<Version>();
  m.created_at_ms = j.at("created_at_ms").get<std::int64_t>();
  m.param_count = j.at("param_count").get<std::uint64_t>();
  m.content_digest = std::stoull(j.at("content_digest").get<std::string>(), nullptr, 16);
  for (const auto& [key, val] : j.at("log_offsets").items())
    m.log_offsets[static_cast<PartitionId>(std::stoul(key))] = val.get<Offset>();
  return m;
}

std::string version_dir(const std::string& root, const std::string& model_id,
                        Version version) {
  return root + "/" + model_id + "/v" + std::to_string(version);
}

CheckpointMeta write_shard_snapshot(const std::string& dir,
                                    const ShardSnapshot& snapshot) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "mkdir " + dir + ": " + ec.message());

  const std::string body = encode_body(snapshot);
  CheckpointMeta meta = snapshot.meta;
  meta.param_count = snapshot.slots.size();
  meta.content_digest = fnv1a64(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));

  write_file_durable(body_path(dir, meta.shard_id), body);
  write_file_durable(meta_path(dir, meta.shard_id), meta.to_json());
  return meta;
}

ShardSnapshot read_shard_snapshot(const std::string& dir, ShardId shard_id) {
  CheckpointMeta meta = CheckpointMeta::from_json(read_file(meta_path(dir, shard_id)));
  const std::string body = read_file(body_path(dir, shard_id));
  const std::uint64_t digest = fnv1a64(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
  if (digest != meta.content_digest)
    throw Error(ErrorCode::kCorruptCheckpoint,
                "digest mismatch for shard " + std::to_string(shard_id) + " in " + dir);
  ShardSnapshot s = decode_body(body);
  if (s.meta.shard_id != shard_id || s.meta.version != meta.version)
    throw Error(ErrorCode::kCorruptCheckpoint,
                "manifest does not match body in " + dir);
  s.meta = std::move(meta);
  return s;
}

std::vector<ShardSnapshot> read_all_shards(const std::string& dir) {
  if (!fs::exists(dir))
    throw Error(ErrorCode::kNotFound, "no such checkpoint dir: " + dir);
  ShardId probe = 0;
  while (!fs::exists(meta_path(dir, probe))) {
    if (++probe > 4096)
      throw Error(ErrorCode::kIncompleteCheckpointSet, "no shard manifests in " + dir);
  }
  ShardSnapshot first = read_shard_snapshot(dir, probe);
  const std::uint32_t n = first.meta.num_shards;
  std::vector<ShardSnapshot> out;
  out.reserve(n);
  for (ShardId k = 0; k < n; ++k) {
    if (k == probe) {
      out.push_back(std::move(first));
      continue;
    }
    if (!fs::exists(meta_path(dir, k)) || !fs::exists(body_path(dir, k)))
      throw Error(ErrorCode::kIncompleteCheckpointSet,
                  "missing shard " + std::to_string(k) + " of " + std::to_string(n) +
                      " in " + dir);
    out.push_back(read_shard_snapshot(dir, k));
  }
  return out;
}

std::vector<LoadedTable> load_for_shard_count(const std::string& dir,
                                              std::uint32_t target_shard_count) {
  if (target_shard_count == 0)
    throw Error(ErrorCode::kInvalidArgument, "target_shard_count must be positive");
  auto snapshots = read_all_shards(dir);
  std::vector<LoadedTable> out(target_shard_count);
  for (std::uint32_t k = 0; k < target_shard_count; ++k) out[k].shard_id = k;
  for (auto& snap : snapshots) {
    for (auto& [id, slot] : snap.slots) {
      LoadedTable& t = out[owner_shard(id, target_shard_count)];
      t.slots.emplace_back(id, std::move(slot));
    }
    for (auto& t : out) t.epoch = std::max(t.epoch, snap.epoch);
  }
  for (auto& t : out)
    std::sort(t.slots.begin(), t.slots.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

LoadedTable load_slice(const std::string& dir, std::uint32_t target_shard_count,
                       ShardId target_shard) {
  if (target_shard >= target_shard_count)
    throw Error(ErrorCode::kInvalidArgument, "target_shard out of range");
  auto snapshots = read_all_shards(dir);
  LoadedTable t;
  t.shard_id = target_shard;
  for (auto& snap : snapshots) {
    t.epoch = std::max(t.epoch, snap.epoch);
    for (auto& [id, slot] : snap.slots)
      if (owner_shard(id, target_shard_count) == target_shard)
        t.slots.emplace_back(id, std::move(slot));
  }
  std::sort(t.slots.begin(), t.slots.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return t;
}

std::map<PartitionId, Offset> replay_offsets(const std::string& dir) {
  auto snapshots = read_all_shards(dir);
  std::map<PartitionId, Offset> out;
  for (const auto& snap : snapshots) {
    for (const auto& [p, off] : snap.meta.log_offsets) {
      auto it = out.find(p);
      if (it == out.end())
        out[p] = off;
      else
        it->second = std::min(it->second, off);
    }
  }
  return out;
}

std::vector<Version> list_complete_versions(const std::string& root,
                                            const std::string& model_id) {
  std::vector<Version> out;
  const fs::path base = fs::path(root) / model_id;
  if (!fs::exists(base)) return out;
  for (const auto& entry : fs::directory_iterator(base)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() < 2 || name[0] != 'v') continue;
    Version v = 0;
    try {
      v = std::stoull(name.substr(1));
    } catch (...) {
      continue;
    }
    try {
      read_all_shards(entry.path().string());
    } catch (...) {
      continue;
    }
    out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace weips::ckpt
