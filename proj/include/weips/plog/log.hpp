#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "weips/plog/record.hpp"
#include "weips/types.hpp"

namespace weips::plog {

struct LogEntry {
  Offset offset = 0;
  std::shared_ptr<const UpdateRecord> record;
};

struct LogStats {
  std::uint64_t records_appended = 0;
  std::uint64_t bytes_appended = 0;  // framed bytes, after compression
  std::uint64_t frames_appended = 0;
};

// Partitioned, offset-addressable, append-only log. Offsets are per-partition
// and increase by exactly 1 per record; offset 0 is the first record. Appends
// within a partition are serialized; readers never block writers.
class PartitionedLog {
 public:
  virtual ~PartitionedLog() = default;

  virtual std::uint32_t num_partitions() const = 0;

  // Appends the batch as one framed block; returns the offset of the last
  // record. The batch must be non-empty.
  virtual Offset append(PartitionId partition,
                        std::span<const UpdateRecord> batch) = 0;

  // Records with offsets in [start, start+max), capped at the tail. start may
  // equal the current length (caught-up consumer, empty result); beyond that
  // is an out-of-range error.
  virtual std::vector<LogEntry> read_from(PartitionId partition, Offset start,
                                          std::size_t max) = 0;

  // Offset the next append will receive (== current record count).
  virtual Offset tail(PartitionId partition) = 0;

  virtual LogStats stats() const = 0;
};

class MemoryLog final : public PartitionedLog {
 public:
  explicit MemoryLog(std::uint32_t num_partitions);

  std::uint32_t num_partitions() const override { return static_cast<std::uint32_t>(parts_.size()); }
  Offset append(PartitionId partition, std::span<const UpdateRecord> batch) override;
  std::vector<LogEntry> read_from(PartitionId partition, Offset start,
                                  std::size_t max) override;
  Offset tail(PartitionId partition) override;
  LogStats stats() const override;

 private:
  struct Partition {
    std::mutex mu;
    std::vector<std::shared_ptr<const UpdateRecord>> records;
  };
  std::vector<std::unique_ptr<Partition>> parts_;
  mutable std::mutex stats_mu_;
  LogStats stats_;
};

struct FileLogOptions {
  bool compress_frames = true;
  bool fsync_on_append = false;
};

// One append-only file per partition at <dir>/<model_id>/partition-<k>.log.
// Frames are written with a single write(2) under an exclusive flock, so
// several processes may append to the same partition; readers rescan the
// file tail on demand and ignore a trailing partial frame until it completes.
class FileLog final : public PartitionedLog {
 public:
  FileLog(std::string dir, std::string model_id, std::uint32_t num_partitions,
          FileLogOptions options = {});
  ~FileLog() override;

  std::uint32_t num_partitions() const override { return static_cast<std::uint32_t>(parts_.size()); }
  Offset append(PartitionId partition, std::span<const UpdateRecord> batch) override;
  std::vector<LogEntry> read_from(PartitionId partition, Offset start,
                                  std::size_t max) override;
  Offset tail(PartitionId partition) override;
  LogStats stats() const override;

  static std::string partition_path(const std::string& dir,
                                    const std::string& model_id,
                                    PartitionId partition);

 private:
  struct FrameInfo {
    Offset first_offset;
    std::uint32_t count;
    std::uint64_t pos;       // file position of the frame length prefix
    std::uint32_t body_len;  // bytes after the length prefix
  };
  struct Partition {
    std::mutex mu;
    int fd = -1;
    std::vector<FrameInfo> frames;
    Offset next_offset = 0;
    std::uint64_t scanned_bytes = 0;
  };

  void rescan_locked(Partition& part) const;

  std::string dir_;
  std::string model_id_;
  FileLogOptions options_;
  std::vector<std::unique_ptr<Partition>> parts_;
  mutable std::mutex stats_mu_;
  LogStats stats_;
};

// Wraps a log with injectable append failures for fault drills. Failures
// raised "after write" model an ack lost on the way back: the bytes are
// durable, the caller retries, and the duplicate batch must be harmless.
class FaultyLog final : public PartitionedLog {
 public:
  explicit FaultyLog(std::shared_ptr<PartitionedLog> inner)
      : inner_(std::move(inner)) {}

  void fail_next_appends(int count, bool after_write);
  // Appends to `partition` fail for the next duration_ms of wall time.
  void stall_partition_for(PartitionId partition, std::int64_t duration_ms);

  std::uint32_t num_partitions() const override { return inner_->num_partitions(); }
  Offset append(PartitionId partition, std::span<const UpdateRecord> batch) override;
  std::vector<LogEntry> read_from(PartitionId partition, Offset start,
                                  std::size_t max) override {
    return inner_->read_from(partition, start, max);
  }
  Offset tail(PartitionId partition) override { return inner_->tail(partition); }
  LogStats stats() const override { return inner_->stats(); }

  PartitionedLog& inner() { return *inner_; }

 private:
  std::shared_ptr<PartitionedLog> inner_;
  std::mutex mu_;
  int fail_count_ = 0;
  bool fail_after_write_ = false;
  std::vector<std::int64_t> stall_deadline_ms_;  // steady wall ms, per partition
};

// frame := body_len:u32 body
// body  := flags:u8 record_count:u32 raw_len:u32 crc32:u32 payload
// flags bit0: payload zlib-compressed; crc32 is over the raw record bytes.
std::vector<std::uint8_t> encode_frame(std::span<const UpdateRecord> batch,
                                       bool compress);
std::vector<UpdateRecord> decode_frame_body(std::span<const std::uint8_t> body);

}  // namespace weips::plog
