#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oxfer/layout.hpp"

namespace oxfer {

// Grouping policy: how many log files the dataset produces.
enum class LogMechanism { kFile, kTransaction, kUniversal };
// On-disk encoding of completed block indices.
enum class LogMethod { kChar, kEnc, kInt, kBinary, kBit8, kBit64 };

const char* mechanism_name(LogMechanism m);
const char* method_name(LogMethod m);
std::optional<LogMechanism> parse_mechanism(const std::string& s);
std::optional<LogMethod> parse_method(const std::string& s);

struct FtLogConfig {
  bool enabled = true;
  LogMechanism mechanism = LogMechanism::kFile;
  LogMethod method = LogMethod::kBit64;
  uint32_t transaction_size = 4;  // files per transaction log
  std::filesystem::path ft_dir;
  bool fsync_records = true;
};

// Set of completed block indices for one file, backed by a bitmap.
class CompletedSet {
 public:
  CompletedSet() = default;
  explicit CompletedSet(uint64_t total_blocks)
      : total_(total_blocks), words_((total_blocks + 63) / 64, 0) {}

  uint64_t total_blocks() const { return total_; }
  uint64_t count() const { return count_; }
  bool complete() const { return count_ == total_; }

  bool contains(uint64_t k) const {
    return k < total_ && (words_[k / 64] >> (k % 64)) & 1;
  }

  // Returns true if k was newly inserted; duplicate inserts are no-ops.
  bool insert(uint64_t k);

  std::vector<uint64_t> to_vector() const;  // ascending

  // Little-endian byte image of the bitmap (the bit8/bit64 wire layout).
  std::span<const uint8_t> byte_view() const {
    static_assert(std::endian::native == std::endian::little);
    return {reinterpret_cast<const uint8_t*>(words_.data()), words_.size() * 8};
  }

  bool operator==(const CompletedSet&) const = default;

 private:
  uint64_t total_ = 0;
  uint64_t count_ = 0;
  std::vector<uint64_t> words_;
};

struct BitPosition {
  uint64_t array_index;
  uint32_t bit;
  bool operator==(const BitPosition&) const = default;
};

// i = K / N, j = K mod N; bit j is the value 1<<j within its word.
BitPosition bit_position(uint64_t block_index, uint32_t n_bits);

bool is_bitmap_method(LogMethod m);
uint32_t bitmap_width(LogMethod m);  // 8 or 64

// Record encodings for the stream methods (Char/Enc/Int/Binary).
// Bitmap methods update a region in place and have no record stream.
std::vector<uint8_t> encode_record(LogMethod method, uint64_t block_index);

// Worst-case bytes of one record for a file with this many blocks.
size_t max_record_size(LogMethod method, uint64_t total_blocks);

// Bytes a file's log region occupies: worst case for stream methods,
// ceil(total/N) words for bitmaps. Independent of how many blocks completed.
uint64_t region_size(LogMethod method, uint64_t total_blocks);

// Unsigned LEB128-style varint: 7 bits per byte, low group first, high bit
// marks continuation.
size_t varint_encode(uint64_t value, uint8_t out[10]);
// Bytes consumed, or 0 if the buffer ends mid-varint.
size_t varint_decode(std::span<const uint8_t> in, uint64_t* value);

struct DecodeResult {
  CompletedSet set;
  bool torn = false;       // a trailing torn record was dropped
  uint64_t consumed = 0;   // bytes of intact records (stream methods)
};

// Parses a record stream or bitmap region back into a CompletedSet.
// `padded` marks shared-log regions, which are 0xFF-filled (stream) or
// zero-filled (bitmap) past the last record. Throws LogCorruptError on any
// corruption that is not a torn tail.
DecodeResult decode_records(LogMethod method, std::span<const uint8_t> data,
                            uint64_t total_blocks, bool padded);

// In-memory image of one index line of a shared log.
struct IndexEntry {
  std::string log_file_name;  // transaction logger only; empty for universal
  std::string file_name;
  uint64_t total_blocks = 0;
  uint64_t offset = 0;
  uint64_t data_length = 0;
};

// Source-side completion logger. One instance per session owns every log
// and index handle; all entry points are serialized internally, so the comm
// loop can call it directly (synchronous logging).
class FtLogger {
 public:
  FtLogger(const FtLogConfig& config, uint64_t object_size);
  ~FtLogger();

  FtLogger(const FtLogger&) = delete;
  FtLogger& operator=(const FtLogger&) = delete;

  // Reads the on-disk completion state for a file (empty set if no log
  // entry exists) and primes internal state so later records append after
  // the recovered ones.
  CompletedSet load_completed(const FileSpec& file);

  // Durably records block K of the file as synced. Creates the log file,
  // region, and index entry lazily on the first record for the file.
  void record_completion(const FileSpec& file, uint64_t block_index);

  // Removes the file's log entry; deletes log files whose index emptied.
  void finalize_file(const FileSpec& file);

  const FtLogConfig& config() const { return config_; }
  uint64_t current_space() const;
  uint64_t peak_space() const;

 private:
  struct SharedLog;
  struct ActiveFile;

  ActiveFile& active_file_locked(const FileSpec& file);
  ActiveFile& loaded_file_locked(const FileSpec& file);
  SharedLog& shared_log_locked(const std::string& log_name);
  std::string log_name_for(const FileSpec& file) const;
  void create_entry_locked(ActiveFile& af, const FileSpec& file);
  void write_record_locked(ActiveFile& af, uint64_t block_index);
  void rewrite_index_locked(SharedLog& log);
  void sync_fd(int fd) const;
  void bump_space_locked(int64_t delta);

  FtLogConfig config_;
  uint64_t object_size_;
  mutable std::mutex mu_;
  std::map<uint32_t, std::unique_ptr<ActiveFile>> files_;
  std::map<std::string, std::unique_ptr<SharedLog>> shared_;
  uint64_t space_ = 0;
  uint64_t peak_space_ = 0;
};

// Sum of the sizes of all `.ftl` and `.idx` files under ft_dir.
uint64_t measure_log_space(const std::filesystem::path& ft_dir);

}  // namespace oxfer
