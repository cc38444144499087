#include "weips/plog/log.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>

#include "weips/error.hpp"

namespace weips::plog {

namespace {

constexpr std::uint8_t kFlagCompressed = 0x01;

std::int64_t steady_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(steady_clock::now().time_since_epoch())
      .count();
}

void check_partition(PartitionId p, std::uint32_t n) {
  if (p >= n) {
    throw Error(ErrorCode::kOutOfRange,
                "partition " + std::to_string(p) + " of " + std::to_string(n));
  }
}

}  // namespace

std::vector<std::uint8_t> encode_frame(std::span<const UpdateRecord> batch,
                                       bool compress) {
  BinaryWriter payload;
  for (const auto& r : batch) encode_record(r, payload);
  const auto& raw = payload.data();
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, raw.data(), static_cast<uInt>(raw.size())));

  std::vector<std::uint8_t> out_payload;
  std::uint8_t flags = 0;
  if (compress && !raw.empty()) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    out_payload.resize(bound);
    if (compress2(out_payload.data(), &bound, raw.data(),
                  static_cast<uLong>(raw.size()), Z_DEFAULT_COMPRESSION) != Z_OK) {
      throw Error(ErrorCode::kIo, "zlib compress failed");
    }
    out_payload.resize(bound);
    flags |= kFlagCompressed;
  } else {
    out_payload = raw;
  }

  BinaryWriter frame;
  const std::uint32_t body_len =
      static_cast<std::uint32_t>(1 + 4 + 4 + 4 + out_payload.size());
  frame.u32(body_len);
  frame.u8(flags);
  frame.u32(static_cast<std::uint32_t>(batch.size()));
  frame.u32(static_cast<std::uint32_t>(raw.size()));
  frame.u32(crc);
  frame.bytes(out_payload.data(), out_payload.size());
  return frame.take();
}

std::vector<UpdateRecord> decode_frame_body(std::span<const std::uint8_t> body) {
  BinaryReader r(body);
  const std::uint8_t flags = r.u8();
  const std::uint32_t count = r.u32();
  const std::uint32_t raw_len = r.u32();
  const std::uint32_t crc_expect = r.u32();
  auto payload = r.take(r.remaining());

  std::vector<std::uint8_t> raw;
  if (flags & kFlagCompressed) {
    raw.resize(raw_len);
    uLongf dest_len = raw_len;
    if (uncompress(raw.data(), &dest_len, payload.data(),
                   static_cast<uLong>(payload.size())) != Z_OK ||
        dest_len != raw_len) {
      throw Error(ErrorCode::kIo, "zlib uncompress failed");
    }
  } else {
    raw.assign(payload.begin(), payload.end());
    if (raw.size() != raw_len) {
      throw Error(ErrorCode::kIo, "frame raw length mismatch");
    }
  }
  const std::uint32_t crc_actual = static_cast<std::uint32_t>(
      crc32(0L, raw.data(), static_cast<uInt>(raw.size())));
  if (crc_actual != crc_expect) {
    throw Error(ErrorCode::kIo, "frame crc mismatch");
  }

  std::vector<UpdateRecord> records;
  records.reserve(count);
  BinaryReader rr(raw);
  for (std::uint32_t i = 0; i < count; ++i) records.push_back(decode_record(rr));
  if (!rr.done()) throw Error(ErrorCode::kIo, "trailing bytes in frame");
  return records;
}

// ---------------------------------------------------------------- MemoryLog

MemoryLog::MemoryLog(std::uint32_t num_partitions) {
  if (num_partitions < 1) {
    throw Error(ErrorCode::kInvalidArgument, "need at least one partition");
  }
  parts_.reserve(num_partitions);
  for (std::uint32_t i = 0; i < num_partitions; ++i) {
    parts_.push_back(std::make_unique<Partition>());
  }
}

Offset MemoryLog::append(PartitionId partition,
                         std::span<const UpdateRecord> batch) {
  check_partition(partition, num_partitions());
  if (batch.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty append batch");
  }
  // Frame once even in memory so byte accounting matches the file backend.
  const auto frame = encode_frame(batch, false);
  auto& part = *parts_[partition];
  std::lock_guard<std::mutex> lk(part.mu);
  for (const auto& r : batch) {
    part.records.push_back(std::make_shared<UpdateRecord>(r));
  }
  {
    std::lock_guard<std::mutex> slk(stats_mu_);
    stats_.records_appended += batch.size();
    stats_.bytes_appended += frame.size();
    stats_.frames_appended += 1;
  }
  return part.records.size() - 1;
}

std::vector<LogEntry> MemoryLog::read_from(PartitionId partition, Offset start,
                                           std::size_t max) {
  check_partition(partition, num_partitions());
  auto& part = *parts_[partition];
  std::lock_guard<std::mutex> lk(part.mu);
  const Offset len = part.records.size();
  if (start > len) {
    throw Error(ErrorCode::kOutOfRange,
                "read offset " + std::to_string(start) + " beyond tail " +
                    std::to_string(len));
  }
  std::vector<LogEntry> out;
  const Offset end = std::min<Offset>(len, start + max);
  out.reserve(end - start);
  for (Offset o = start; o < end; ++o) {
    out.push_back({o, part.records[o]});
  }
  return out;
}

Offset MemoryLog::tail(PartitionId partition) {
  check_partition(partition, num_partitions());
  auto& part = *parts_[partition];
  std::lock_guard<std::mutex> lk(part.mu);
  return part.records.size();
}

LogStats MemoryLog::stats() const {
  std::lock_guard<std::mutex> lk(stats_mu_);
  return stats_;
}

// ------------------------------------------------------------------ FileLog

std::string FileLog::partition_path(const std::string& dir,
                                    const std::string& model_id,
                                    PartitionId partition) {
  return dir + "/" + model_id + "/partition-" + std::to_string(partition) +
         ".log";
}

FileLog::FileLog(std::string dir, std::string model_id,
                 std::uint32_t num_partitions, FileLogOptions options)
    : dir_(std::move(dir)), model_id_(std::move(model_id)), options_(options) {
  if (num_partitions < 1) {
    throw Error(ErrorCode::kInvalidArgument, "need at least one partition");
  }
  std::filesystem::create_directories(dir_ + "/" + model_id_);
  parts_.reserve(num_partitions);
  for (std::uint32_t i = 0; i < num_partitions; ++i) {
    auto part = std::make_unique<Partition>();
    const std::string path = partition_path(dir_, model_id_, i);
    part->fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_APPEND, 0644);
    if (part->fd < 0) {
      throw Error(ErrorCode::kIo, "open " + path + ": " + std::strerror(errno));
    }
    parts_.push_back(std::move(part));
  }
  for (std::uint32_t i = 0; i < num_partitions; ++i) {
    auto& part = *parts_[i];
    std::lock_guard<std::mutex> lk(part.mu);
    rescan_locked(part);
  }
}

FileLog::~FileLog() {
  for (auto& part : parts_) {
    if (part->fd >= 0) ::close(part->fd);
  }
}

void FileLog::rescan_locked(Partition& part) const {
  struct stat st{};
  if (fstat(part.fd, &st) != 0) {
    throw Error(ErrorCode::kIo, std::strerror(errno));
  }
  const std::uint64_t size = static_cast<std::uint64_t>(st.st_size);
  while (part.scanned_bytes + 4 <= size) {
    std::uint32_t body_len = 0;
    if (pread(part.fd, &body_len, 4, part.scanned_bytes) != 4) break;
    if (part.scanned_bytes + 4 + body_len > size) break;  // partial frame
    // flags:u8 count:u32 sit right after the length prefix.
    std::uint8_t head[5];
    if (pread(part.fd, head, 5, part.scanned_bytes + 4) != 5) break;
    std::uint32_t count = 0;
    std::memcpy(&count, head + 1, 4);
    part.frames.push_back({part.next_offset, count, part.scanned_bytes, body_len});
    part.next_offset += count;
    part.scanned_bytes += 4 + body_len;
  }
}

Offset FileLog::append(PartitionId partition,
                       std::span<const UpdateRecord> batch) {
  check_partition(partition, num_partitions());
  if (batch.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "empty append batch");
  }
  const auto frame = encode_frame(batch, options_.compress_frames);

  auto& part = *parts_[partition];
  std::lock_guard<std::mutex> lk(part.mu);
  if (flock(part.fd, LOCK_EX) != 0) {
    throw Error(ErrorCode::kAppendFailed, std::strerror(errno));
  }
  Offset last;
  try {
    rescan_locked(part);  // other processes may have appended
    const std::uint64_t pos = part.scanned_bytes;
    ssize_t n = ::write(part.fd, frame.data(), frame.size());
    if (n != static_cast<ssize_t>(frame.size())) {
      throw Error(ErrorCode::kAppendFailed,
                  n < 0 ? std::strerror(errno) : "short write");
    }
    if (options_.fsync_on_append) fsync(part.fd);
    part.frames.push_back({part.next_offset,
                           static_cast<std::uint32_t>(batch.size()), pos,
                           static_cast<std::uint32_t>(frame.size() - 4)});
    last = part.next_offset + batch.size() - 1;
    part.next_offset += batch.size();
    part.scanned_bytes += frame.size();
  } catch (...) {
    flock(part.fd, LOCK_UN);
    throw;
  }
  flock(part.fd, LOCK_UN);

  {
    std::lock_guard<std::mutex> slk(stats_mu_);
    stats_.records_appended += batch.size();
    stats_.bytes_appended += frame.size();
    stats_.frames_appended += 1;
  }
  return last;
}

std::vector<LogEntry> FileLog::read_from(PartitionId partition, Offset start,
                                         std::size_t max) {
  check_partition(partition, num_partitions());
  auto& part = *parts_[partition];
  std::lock_guard<std::mutex> lk(part.mu);
  if (start + max > part.next_offset || part.frames.empty()) {
    rescan_locked(part);
  }
  if (start > part.next_offset) {
    throw Error(ErrorCode::kOutOfRange,
                "read offset " + std::to_string(start) + " beyond tail " +
                    std::to_string(part.next_offset));
  }
  std::vector<LogEntry> out;
  if (start == part.next_offset || max == 0) return out;

  // First frame whose range contains `start`.
  auto it = std::upper_bound(
      part.frames.begin(), part.frames.end(), start,
      [](Offset o, const FrameInfo& f) { return o < f.first_offset; });
  if (it != part.frames.begin()) --it;

  const Offset want_end = std::min<Offset>(part.next_offset, start + max);
  for (; it != part.frames.end() && it->first_offset < want_end; ++it) {
    std::vector<std::uint8_t> body(it->body_len);
    ssize_t n = pread(part.fd, body.data(), body.size(), it->pos + 4);
    if (n != static_cast<ssize_t>(body.size())) {
      throw Error(ErrorCode::kIo, "frame read failed");
    }
    auto records = decode_frame_body(body);
    if (records.size() != it->count) {
      throw Error(ErrorCode::kIo, "frame count mismatch");
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
      const Offset o = it->first_offset + i;
      if (o < start) continue;
      if (o >= want_end) break;
      out.push_back({o, std::make_shared<UpdateRecord>(std::move(records[i]))});
    }
  }
  return out;
}

Offset FileLog::tail(PartitionId partition) {
  check_partition(partition, num_partitions());
  auto& part = *parts_[partition];
  std::lock_guard<std::mutex> lk(part.mu);
  rescan_locked(part);
  return part.next_offset;
}

LogStats FileLog::stats() const {
  std::lock_guard<std::mutex> lk(stats_mu_);
  return stats_;
}

// ----------------------------------------------------------------- FaultyLog

void FaultyLog::fail_next_appends(int count, bool after_write) {
  std::lock_guard<std::mutex> lk(mu_);
  fail_count_ = count;
  fail_after_write_ = after_write;
}

void FaultyLog::stall_partition_for(PartitionId partition,
                                    std::int64_t duration_ms) {
  std::lock_guard<std::mutex> lk(mu_);
  if (stall_deadline_ms_.size() < inner_->num_partitions()) {
    stall_deadline_ms_.resize(inner_->num_partitions(), 0);
  }
  stall_deadline_ms_[partition] = steady_ms() + duration_ms;
}

Offset FaultyLog::append(PartitionId partition,
                         std::span<const UpdateRecord> batch) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    if (partition < stall_deadline_ms_.size() &&
        steady_ms() < stall_deadline_ms_[partition]) {
      throw Error(ErrorCode::kAppendFailed, "partition stalled by fault plan");
    }
    if (fail_count_ > 0 && !fail_after_write_) {
      --fail_count_;
      throw Error(ErrorCode::kAppendFailed, "injected failure before write");
    }
  }
  Offset off = inner_->append(partition, batch);
  {
    std::lock_guard<std::mutex> lk(mu_);
    if (fail_count_ > 0 && fail_after_write_) {
      --fail_count_;
      throw Error(ErrorCode::kAppendFailed, "injected failure after write");
    }
  }
  return off;
}

}  // namespace weips::plog
