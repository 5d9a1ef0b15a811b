#include "oxfer/ftlog.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include "oxfer/errors.hpp"
#include "oxfer/log.hpp"

namespace fs = std::filesystem;

namespace oxfer {

const char* mechanism_name(LogMechanism m) {
  switch (m) {
    case LogMechanism::kFile: return "file";
    case LogMechanism::kTransaction: return "txn";
    case LogMechanism::kUniversal: return "universal";
  }
  return "?";
}

const char* method_name(LogMethod m) {
  switch (m) {
    case LogMethod::kChar: return "char";
    case LogMethod::kEnc: return "enc";
    case LogMethod::kInt: return "int";
    case LogMethod::kBinary: return "binary";
    case LogMethod::kBit8: return "bit8";
    case LogMethod::kBit64: return "bit64";
  }
  return "?";
}

std::optional<LogMechanism> parse_mechanism(const std::string& s) {
  if (s == "file") return LogMechanism::kFile;
  if (s == "txn" || s == "transaction") return LogMechanism::kTransaction;
  if (s == "universal") return LogMechanism::kUniversal;
  return std::nullopt;
}

std::optional<LogMethod> parse_method(const std::string& s) {
  if (s == "char") return LogMethod::kChar;
  if (s == "enc") return LogMethod::kEnc;
  if (s == "int") return LogMethod::kInt;
  if (s == "binary") return LogMethod::kBinary;
  if (s == "bit8") return LogMethod::kBit8;
  if (s == "bit64") return LogMethod::kBit64;
  return std::nullopt;
}

bool CompletedSet::insert(uint64_t k) {
  if (k >= total_) throw std::out_of_range("block index past total_blocks");
  uint64_t mask = 1ull << (k % 64);
  if (words_[k / 64] & mask) return false;
  words_[k / 64] |= mask;
  ++count_;
  return true;
}

std::vector<uint64_t> CompletedSet::to_vector() const {
  std::vector<uint64_t> out;
  out.reserve(count_);
  for (uint64_t w = 0; w < words_.size(); ++w) {
    uint64_t word = words_[w];
    while (word) {
      uint64_t bit = static_cast<uint64_t>(std::countr_zero(word));
      out.push_back(w * 64 + bit);
      word &= word - 1;
    }
  }
  return out;
}

BitPosition bit_position(uint64_t block_index, uint32_t n_bits) {
  return {block_index / n_bits, static_cast<uint32_t>(block_index % n_bits)};
}

bool is_bitmap_method(LogMethod m) { return m == LogMethod::kBit8 || m == LogMethod::kBit64; }

uint32_t bitmap_width(LogMethod m) {
  return m == LogMethod::kBit8 ? 8 : (m == LogMethod::kBit64 ? 64 : 0);
}

size_t varint_encode(uint64_t value, uint8_t out[10]) {
  size_t n = 0;
  do {
    uint8_t b = value & 0x7f;
    value >>= 7;
    if (value) b |= 0x80;
    out[n++] = b;
  } while (value);
  return n;
}

size_t varint_decode(std::span<const uint8_t> in, uint64_t* value) {
  uint64_t v = 0;
  for (size_t i = 0; i < in.size() && i < 10; ++i) {
    v |= static_cast<uint64_t>(in[i] & 0x7f) << (7 * i);
    if (!(in[i] & 0x80)) {
      *value = v;
      return i + 1;
    }
  }
  if (in.size() >= 10) throw LogCorruptError("varint record too long");
  return 0;  // buffer ended mid-varint
}

namespace {

size_t decimal_digits(uint64_t v) {
  size_t n = 1;
  while (v >= 10) {
    v /= 10;
    ++n;
  }
  return n;
}

}  // namespace

std::vector<uint8_t> encode_record(LogMethod method, uint64_t k) {
  switch (method) {
    case LogMethod::kChar: {
      std::string s = std::to_string(k);
      std::vector<uint8_t> out(s.begin(), s.end());
      out.push_back('\n');
      return out;
    }
    case LogMethod::kEnc: {
      uint8_t buf[10];
      size_t n = varint_encode(k, buf);
      return {buf, buf + n};
    }
    case LogMethod::kInt: {
      if (k > UINT32_MAX) throw std::range_error("block index exceeds 32-bit record range");
      std::vector<uint8_t> out(4);
      for (int i = 0; i < 4; ++i) out[i] = static_cast<uint8_t>(k >> (8 * i));
      return out;
    }
    case LogMethod::kBinary: {
      if (k > UINT32_MAX) throw std::range_error("block index exceeds 32-bit record range");
      std::vector<uint8_t> out(33);
      for (int i = 0; i < 32; ++i) out[i] = (k >> (31 - i)) & 1 ? '1' : '0';
      out[32] = '\n';
      return out;
    }
    case LogMethod::kBit8:
    case LogMethod::kBit64:
      throw std::logic_error("bitmap methods have no record stream");
  }
  throw std::logic_error("unreachable");
}

size_t max_record_size(LogMethod method, uint64_t total_blocks) {
  uint64_t max_index = total_blocks == 0 ? 0 : total_blocks - 1;
  switch (method) {
    case LogMethod::kChar: return decimal_digits(max_index) + 1;
    case LogMethod::kEnc: {
      uint8_t buf[10];
      return varint_encode(max_index, buf);
    }
    case LogMethod::kInt: return 4;
    case LogMethod::kBinary: return 33;
    case LogMethod::kBit8:
    case LogMethod::kBit64:
      throw std::logic_error("bitmap methods have no record stream");
  }
  throw std::logic_error("unreachable");
}

uint64_t region_size(LogMethod method, uint64_t total_blocks) {
  switch (method) {
    case LogMethod::kBit8: return (total_blocks + 7) / 8;
    case LogMethod::kBit64: return (total_blocks + 63) / 64 * 8;
    default: return total_blocks * max_record_size(method, total_blocks);
  }
}

namespace {

bool all_padding(std::span<const uint8_t> data, size_t from) {
  for (size_t i = from; i < data.size(); ++i)
    if (data[i] != 0xff) return false;
  return true;
}

void insert_checked(CompletedSet& set, uint64_t k, uint64_t total) {
  if (k >= total) throw LogCorruptError("log corrupted: block index " + std::to_string(k) +
                                        " out of range (total " + std::to_string(total) + ")");
  set.insert(k);  // duplicates tolerated
}

DecodeResult decode_lines(std::span<const uint8_t> data, uint64_t total, bool padded,
                          bool binary) {
  DecodeResult r;
  r.set = CompletedSet(total);
  size_t pos = 0;
  while (pos < data.size()) {
    if (padded && data[pos] == 0xff) {
      if (!all_padding(data, pos)) throw LogCorruptError("log corrupted: garbage after padding");
      break;
    }
    size_t start = pos;
    while (pos < data.size() && (binary ? (data[pos] == '0' || data[pos] == '1')
                                        : (data[pos] >= '0' && data[pos] <= '9')))
      ++pos;
    if (pos == data.size()) {
      // Unterminated tail: a torn final record.
      r.torn = true;
      r.consumed = start;
      return r;
    }
    if (data[pos] != '\n') {
      // Digits ran into padding: the record was torn mid-write.
      if (padded && data[pos] == 0xff && all_padding(data, pos)) {
        r.torn = true;
        r.consumed = start;
        return r;
      }
      throw LogCorruptError("log corrupted: unexpected byte in record");
    }
    size_t len = pos - start;
    if (len == 0) throw LogCorruptError("log corrupted: empty record");
    if (binary) {
      if (len != 32) throw LogCorruptError("log corrupted: binary record wrong length");
      uint64_t k = 0;
      for (size_t i = 0; i < 32; ++i) k = (k << 1) | (data[start + i] == '1' ? 1 : 0);
      insert_checked(r.set, k, total);
    } else {
      if (len > 20) throw LogCorruptError("log corrupted: oversized decimal record");
      uint64_t k = 0;
      for (size_t i = 0; i < len; ++i) k = k * 10 + (data[start + i] - '0');
      insert_checked(r.set, k, total);
    }
    ++pos;
    r.consumed = pos;
  }
  return r;
}

DecodeResult decode_ints(std::span<const uint8_t> data, uint64_t total, bool padded) {
  DecodeResult r;
  r.set = CompletedSet(total);
  size_t pos = 0;
  while (pos + 4 <= data.size()) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data[pos + i]) << (8 * i);
    if (padded && v == 0xffffffff) {
      if (!all_padding(data, pos)) throw LogCorruptError("log corrupted: garbage after padding");
      return r;
    }
    insert_checked(r.set, v, total);
    pos += 4;
    r.consumed = pos;
  }
  if (pos < data.size()) {
    if (!all_padding(data, pos)) r.torn = true;  // truncated final record
  }
  return r;
}

DecodeResult decode_varints(std::span<const uint8_t> data, uint64_t total, bool padded) {
  DecodeResult r;
  r.set = CompletedSet(total);
  size_t pos = 0;
  while (pos < data.size()) {
    if (padded && data[pos] == 0xff && all_padding(data, pos)) break;
    uint64_t v = 0;
    size_t n = varint_decode(data.subspan(pos), &v);
    if (n == 0) {
      r.torn = true;
      return r;
    }
    insert_checked(r.set, v, total);
    pos += n;
    r.consumed = pos;
  }
  return r;
}

DecodeResult decode_bitmap(std::span<const uint8_t> data, uint64_t total, uint32_t n_bits,
                           uint64_t expected_bytes) {
  DecodeResult r;
  r.set = CompletedSet(total);
  if (data.size() > expected_bytes)
    throw LogCorruptError("log corrupted: bitmap region oversized");
  if (data.size() < expected_bytes) r.torn = true;  // truncated tail reads as incomplete
  for (size_t byte = 0; byte < data.size(); ++byte) {
    uint8_t b = data[byte];
    while (b) {
      uint32_t bit = static_cast<uint32_t>(std::countr_zero(b));
      uint64_t k = byte * 8 + bit;
      if (k >= total) throw LogCorruptError("log corrupted: bit set past total_blocks");
      r.set.insert(k);
      b = static_cast<uint8_t>(b & (b - 1));
    }
  }
  (void)n_bits;
  r.consumed = data.size();
  return r;
}

}  // namespace

DecodeResult decode_records(LogMethod method, std::span<const uint8_t> data, uint64_t total_blocks,
                            bool padded) {
  switch (method) {
    case LogMethod::kChar: return decode_lines(data, total_blocks, padded, false);
    case LogMethod::kBinary: return decode_lines(data, total_blocks, padded, true);
    case LogMethod::kInt: return decode_ints(data, total_blocks, padded);
    case LogMethod::kEnc: return decode_varints(data, total_blocks, padded);
    case LogMethod::kBit8:
      return decode_bitmap(data, total_blocks, 8, region_size(method, total_blocks));
    case LogMethod::kBit64:
      return decode_bitmap(data, total_blocks, 64, region_size(method, total_blocks));
  }
  throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// FtLogger

struct FtLogger::SharedLog {
  std::string name;  // log file name, e.g. "txn_1.ftl"
  fs::path ftl_path;
  fs::path idx_path;
  int fd = -1;
  bool on_disk = false;
  uint64_t alloc_end = 0;  // == current .ftl size; regions never move
  uint64_t idx_size = 0;
  std::vector<IndexEntry> entries;
};

struct FtLogger::ActiveFile {
  uint32_t file_id = 0;
  std::string path;
  uint64_t total_blocks = 0;
  CompletedSet completed;
  bool loaded = false;
  bool created = false;
  // FileLogger only
  int fd = -1;
  uint64_t header_len = 0;
  uint64_t file_size = 0;
  // Both mechanisms
  uint64_t region_offset = 0;    // absolute byte offset of the record area
  uint64_t region_capacity = 0;  // stream: region bytes; bitmap: bitmap bytes
  uint64_t append_pos = 0;       // next record offset relative to region_offset
  std::string log_name;          // shared mechanisms
};

namespace {

std::string read_all(int fd) {
  std::string out;
  char buf[1 << 16];
  uint64_t off = 0;
  for (;;) {
    ssize_t n = ::pread(fd, buf, sizeof(buf), static_cast<off_t>(off));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("log read failed: ") + std::strerror(errno));
    }
    if (n == 0) break;
    out.append(buf, static_cast<size_t>(n));
    off += static_cast<uint64_t>(n);
  }
  return out;
}

void pwrite_all(int fd, const void* data, size_t len, uint64_t offset) {
  const auto* p = static_cast<const uint8_t*>(data);
  size_t done = 0;
  while (done < len) {
    ssize_t n = ::pwrite(fd, p + done, len - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("log write failed: ") + std::strerror(errno));
    }
    done += static_cast<size_t>(n);
  }
}

uint64_t fd_size(int fd) {
  struct stat st{};
  if (::fstat(fd, &st) != 0) throw IoError(std::string("fstat failed: ") + std::strerror(errno));
  return static_cast<uint64_t>(st.st_size);
}

std::string header_line(const FileSpec& file, uint64_t total_blocks) {
  return file.path + "," + std::to_string(total_blocks) + "\n";
}

}  // namespace

FtLogger::FtLogger(const FtLogConfig& config, uint64_t object_size)
    : config_(config), object_size_(object_size) {
  if (!config_.enabled) return;
  if (config_.transaction_size == 0) throw ConfigError("transaction_size must be >= 1");
  if (config_.ft_dir.empty()) throw ConfigError("ft_dir not set");
  std::error_code ec;
  fs::create_directories(config_.ft_dir, ec);
  if (ec) throw IoError("cannot create ft_dir " + config_.ft_dir.string() + ": " + ec.message());
}

FtLogger::~FtLogger() {
  for (auto& [id, af] : files_)
    if (af->fd >= 0) ::close(af->fd);
  for (auto& [name, log] : shared_)
    if (log->fd >= 0) ::close(log->fd);
}

void FtLogger::sync_fd(int fd) const {
  if (config_.fsync_records) ::fdatasync(fd);
}

void FtLogger::bump_space_locked(int64_t delta) {
  space_ = static_cast<uint64_t>(static_cast<int64_t>(space_) + delta);
  peak_space_ = std::max(peak_space_, space_);
}

uint64_t FtLogger::current_space() const {
  std::lock_guard lk(mu_);
  return space_;
}

uint64_t FtLogger::peak_space() const {
  std::lock_guard lk(mu_);
  return peak_space_;
}

std::string FtLogger::log_name_for(const FileSpec& file) const {
  switch (config_.mechanism) {
    case LogMechanism::kFile: return std::to_string(file.file_id) + ".ftl";
    case LogMechanism::kTransaction:
      return "txn_" + std::to_string(file.file_id / config_.transaction_size) + ".ftl";
    case LogMechanism::kUniversal: return "universal.ftl";
  }
  return {};
}

FtLogger::SharedLog& FtLogger::shared_log_locked(const std::string& log_name) {
  auto it = shared_.find(log_name);
  if (it != shared_.end()) return *it->second;

  auto log = std::make_unique<SharedLog>();
  log->name = log_name;
  log->ftl_path = config_.ft_dir / log_name;
  log->idx_path = log->ftl_path;
  log->idx_path.replace_extension(".idx");

  bool ftl_exists = fs::exists(log->ftl_path);
  bool idx_exists = fs::exists(log->idx_path);
  if (!ftl_exists && idx_exists)
    throw LogCorruptError("index without log file: " + log->idx_path.string());
  if (ftl_exists) {
    log->fd = ::open(log->ftl_path.c_str(), O_RDWR | O_CLOEXEC);
    if (log->fd < 0) throw IoError("cannot open log " + log->ftl_path.string());
    log->on_disk = true;
    log->alloc_end = fd_size(log->fd);
    if (idx_exists) {
      std::ifstream in(log->idx_path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        IndexEntry e;
        std::vector<std::string> fields;
        size_t start = 0;
        for (size_t i = 0; i <= line.size(); ++i) {
          if (i == line.size() || line[i] == ',') {
            fields.push_back(line.substr(start, i - start));
            start = i + 1;
          }
        }
        size_t want = config_.mechanism == LogMechanism::kTransaction ? 5 : 4;
        if (fields.size() != want)
          throw LogCorruptError("malformed index line in " + log->idx_path.string());
        size_t f = 0;
        if (want == 5) e.log_file_name = fields[f++];
        e.file_name = fields[f++];
        try {
          e.total_blocks = std::stoull(fields[f++]);
          e.offset = std::stoull(fields[f++]);
          e.data_length = std::stoull(fields[f]);
        } catch (const std::exception&) {
          throw LogCorruptError("malformed index line in " + log->idx_path.string());
        }
        log->entries.push_back(std::move(e));
      }
      log->idx_size = fs::file_size(log->idx_path);
    }
  }
  auto [pos, _] = shared_.emplace(log_name, std::move(log));
  return *pos->second;
}

FtLogger::ActiveFile& FtLogger::active_file_locked(const FileSpec& file) {
  auto it = files_.find(file.file_id);
  if (it != files_.end()) return *it->second;
  auto af = std::make_unique<ActiveFile>();
  af->file_id = file.file_id;
  af->path = file.path;
  af->total_blocks = file.object_count(object_size_);
  af->completed = CompletedSet(af->total_blocks);
  auto [pos, _] = files_.emplace(file.file_id, std::move(af));
  return *pos->second;
}

CompletedSet FtLogger::load_completed(const FileSpec& file) {
  if (!config_.enabled) return CompletedSet(file.object_count(object_size_));
  std::lock_guard lk(mu_);
  return loaded_file_locked(file).completed;
}

FtLogger::ActiveFile& FtLogger::loaded_file_locked(const FileSpec& file) {
  ActiveFile& af = active_file_locked(file);
  if (af.loaded) return af;
  af.loaded = true;

  if (config_.mechanism == LogMechanism::kFile) {
    fs::path p = config_.ft_dir / log_name_for(file);
    if (!fs::exists(p)) return af;  // never started (or already finalized)
    af.fd = ::open(p.c_str(), O_RDWR | O_CLOEXEC);
    if (af.fd < 0) throw IoError("cannot open log " + p.string());
    std::string bytes = read_all(af.fd);
    size_t nl = bytes.find('\n');
    if (nl == std::string::npos) {
      // Creation itself was torn; nothing was durably logged.
      OXFER_WARN("log %s has a torn header; treating file as never logged", p.string().c_str());
      ::close(af.fd);
      af.fd = -1;
      ::unlink(p.c_str());
      return af;
    }
    std::string header = bytes.substr(0, nl);
    std::string expect = file.path + "," + std::to_string(af.total_blocks);
    if (header != expect)
      throw LogCorruptError("log identity mismatch in " + p.string() + ": got '" + header + "'");
    af.created = true;
    af.header_len = nl + 1;
    af.file_size = bytes.size();
    af.region_offset = af.header_len;
    std::span<const uint8_t> rest(reinterpret_cast<const uint8_t*>(bytes.data()) + af.header_len,
                                  bytes.size() - af.header_len);
    if (is_bitmap_method(config_.method)) {
      af.region_capacity = region_size(config_.method, af.total_blocks);
      auto res = decode_records(config_.method, rest, af.total_blocks, false);
      if (res.torn) OXFER_WARN("log %s: truncated bitmap region", p.string().c_str());
      af.completed = std::move(res.set);
      if (af.file_size < af.header_len + af.region_capacity) {
        // Re-extend a truncated region so later in-place updates land correctly.
        if (::ftruncate(af.fd, static_cast<off_t>(af.header_len + af.region_capacity)) != 0)
          throw IoError("cannot extend log region");
        af.file_size = af.header_len + af.region_capacity;
      }
    } else {
      af.region_capacity = region_size(config_.method, af.total_blocks);
      auto res = decode_records(config_.method, rest, af.total_blocks, false);
      if (res.torn)
        OXFER_WARN("log %s: dropped a torn trailing record", p.string().c_str());
      af.completed = std::move(res.set);
      af.append_pos = res.consumed;  // a torn tail gets overwritten by the next record
    }
    bump_space_locked(static_cast<int64_t>(af.file_size));
    return af;
  }

  // Shared mechanisms: look the file up in the index.
  af.log_name = log_name_for(file);
  SharedLog& log = shared_log_locked(af.log_name);
  if (!log.on_disk) return af;
  auto entry = std::find_if(log.entries.begin(), log.entries.end(),
                            [&](const IndexEntry& e) { return e.file_name == file.path; });
  if (entry == log.entries.end()) return af;
  if (entry->total_blocks != af.total_blocks)
    throw LogCorruptError("log identity mismatch for " + file.path + ": index total_blocks " +
                          std::to_string(entry->total_blocks));
  uint64_t expected = region_size(config_.method, af.total_blocks);
  if (entry->data_length != expected)
    throw LogCorruptError("index region length mismatch for " + file.path);
  af.created = true;
  af.region_offset = entry->offset;
  af.region_capacity = entry->data_length;

  uint64_t avail = log.alloc_end > entry->offset
                       ? std::min<uint64_t>(entry->data_length, log.alloc_end - entry->offset)
                       : 0;
  std::vector<uint8_t> region(avail);
  if (avail) {
    ssize_t n = ::pread(log.fd, region.data(), avail, static_cast<off_t>(entry->offset));
    if (n < 0 || static_cast<uint64_t>(n) != avail)
      throw IoError("cannot read log region for " + file.path);
  }
  if (avail < entry->data_length)
    OXFER_WARN("log %s: region for %s truncated", log.ftl_path.string().c_str(),
               file.path.c_str());
  auto res = decode_records(config_.method, region, af.total_blocks,
                            !is_bitmap_method(config_.method));
  if (res.torn) OXFER_WARN("log %s: dropped a torn trailing record for %s",
                           log.ftl_path.string().c_str(), file.path.c_str());
  af.completed = std::move(res.set);
  af.append_pos = res.consumed;
  return af;
}

void FtLogger::create_entry_locked(ActiveFile& af, const FileSpec& file) {
  std::string header = header_line(file, af.total_blocks);
  if (config_.mechanism == LogMechanism::kFile) {
    fs::path p = config_.ft_dir / log_name_for(file);
    af.fd = ::open(p.c_str(), O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (af.fd < 0) throw IoError("cannot create log " + p.string());
    pwrite_all(af.fd, header.data(), header.size(), 0);
    af.header_len = header.size();
    af.region_offset = af.header_len;
    af.region_capacity = region_size(config_.method, af.total_blocks);
    af.append_pos = 0;
    if (is_bitmap_method(config_.method)) {
      if (::ftruncate(af.fd, static_cast<off_t>(af.header_len + af.region_capacity)) != 0)
        throw IoError("cannot size log region");
      af.file_size = af.header_len + af.region_capacity;
    } else {
      af.file_size = af.header_len;
    }
    sync_fd(af.fd);
    bump_space_locked(static_cast<int64_t>(af.file_size));
    af.created = true;
    return;
  }

  SharedLog& log = shared_log_locked(af.log_name);
  if (!log.on_disk) {
    log.fd = ::open(log.ftl_path.c_str(), O_RDWR | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (log.fd < 0) throw IoError("cannot create log " + log.ftl_path.string());
    log.on_disk = true;
    log.alloc_end = 0;
  }
  IndexEntry e;
  if (config_.mechanism == LogMechanism::kTransaction) e.log_file_name = log.name;
  e.file_name = file.path;
  e.total_blocks = af.total_blocks;
  e.offset = log.alloc_end;
  e.data_length = region_size(config_.method, af.total_blocks);

  // Preallocate the region so index offsets never move. Stream regions are
  // 0xFF-filled (no record may start with 0xFF); bitmap regions are zeroes.
  if (is_bitmap_method(config_.method)) {
    if (::ftruncate(log.fd, static_cast<off_t>(e.offset + e.data_length)) != 0)
      throw IoError("cannot size log region");
  } else {
    std::vector<uint8_t> fill(e.data_length, 0xff);
    pwrite_all(log.fd, fill.data(), fill.size(), e.offset);
  }
  log.alloc_end = e.offset + e.data_length;
  sync_fd(log.fd);
  bump_space_locked(static_cast<int64_t>(e.data_length));

  std::string line;
  if (config_.mechanism == LogMechanism::kTransaction) line += e.log_file_name + ",";
  line += e.file_name + "," + std::to_string(e.total_blocks) + "," + std::to_string(e.offset) +
          "," + std::to_string(e.data_length) + "\n";
  int idx_fd = ::open(log.idx_path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (idx_fd < 0) throw IoError("cannot open index " + log.idx_path.string());
  ssize_t n = ::write(idx_fd, line.data(), line.size());
  if (n < 0 || static_cast<size_t>(n) != line.size()) {
    ::close(idx_fd);
    throw IoError("cannot append index " + log.idx_path.string());
  }
  sync_fd(idx_fd);
  ::close(idx_fd);
  log.idx_size += line.size();
  bump_space_locked(static_cast<int64_t>(line.size()));

  af.region_offset = e.offset;
  af.region_capacity = e.data_length;
  af.append_pos = 0;
  log.entries.push_back(std::move(e));
  af.created = true;
}

void FtLogger::write_record_locked(ActiveFile& af, uint64_t block_index) {
  int fd;
  uint64_t base;
  if (config_.mechanism == LogMechanism::kFile) {
    fd = af.fd;
    base = af.region_offset;
  } else {
    SharedLog& log = *shared_.at(af.log_name);
    fd = log.fd;
    base = af.region_offset;
  }

  if (is_bitmap_method(config_.method)) {
    uint32_t n_bits = bitmap_width(config_.method);
    uint32_t word_bytes = n_bits / 8;
    BitPosition pos = bit_position(block_index, n_bits);
    uint64_t word_off = pos.array_index * word_bytes;
    auto bytes = af.completed.byte_view();
    uint64_t len = std::min<uint64_t>(word_bytes, af.region_capacity - word_off);
    pwrite_all(fd, bytes.data() + word_off, len, base + word_off);
  } else {
    auto rec = encode_record(config_.method, block_index);
    if (af.append_pos + rec.size() > af.region_capacity &&
        config_.mechanism != LogMechanism::kFile)
      throw LogCorruptError("log region overflow for " + af.path);
    pwrite_all(fd, rec.data(), rec.size(), base + af.append_pos);
    af.append_pos += rec.size();
    if (config_.mechanism == LogMechanism::kFile) {
      uint64_t new_size = af.region_offset + af.append_pos;
      if (new_size > af.file_size) {
        bump_space_locked(static_cast<int64_t>(new_size - af.file_size));
        af.file_size = new_size;
      }
    }
  }
  sync_fd(fd);
}

void FtLogger::record_completion(const FileSpec& file, uint64_t block_index) {
  if (!config_.enabled) return;
  std::lock_guard lk(mu_);
  ActiveFile& af = loaded_file_locked(file);
  if (block_index >= af.total_blocks) throw std::out_of_range("block index past total_blocks");
  if (af.completed.contains(block_index)) return;  // idempotent
  if (!af.created) create_entry_locked(af, file);
  af.completed.insert(block_index);
  write_record_locked(af, block_index);
}

void FtLogger::rewrite_index_locked(SharedLog& log) {
  fs::path tmp = log.idx_path;
  tmp += ".tmp";
  std::string text;
  for (const auto& e : log.entries) {
    if (config_.mechanism == LogMechanism::kTransaction) text += e.log_file_name + ",";
    text += e.file_name + "," + std::to_string(e.total_blocks) + "," + std::to_string(e.offset) +
            "," + std::to_string(e.data_length) + "\n";
  }
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot write index " + tmp.string());
  if (!text.empty()) pwrite_all(fd, text.data(), text.size(), 0);
  sync_fd(fd);
  ::close(fd);
  if (::rename(tmp.c_str(), log.idx_path.c_str()) != 0)
    throw IoError("cannot replace index " + log.idx_path.string());
  bump_space_locked(static_cast<int64_t>(text.size()) - static_cast<int64_t>(log.idx_size));
  log.idx_size = text.size();
}

void FtLogger::finalize_file(const FileSpec& file) {
  if (!config_.enabled) return;
  std::lock_guard lk(mu_);
  auto it = files_.find(file.file_id);
  if (it == files_.end() || !it->second->created) {
    OXFER_DEBUG("finalize: no log entry for %s (file skipped or never logged)",
                file.path.c_str());
    if (it != files_.end()) files_.erase(it);
    return;
  }
  ActiveFile& af = *it->second;

  if (config_.mechanism == LogMechanism::kFile) {
    ::close(af.fd);
    fs::path p = config_.ft_dir / log_name_for(file);
    ::unlink(p.c_str());
    bump_space_locked(-static_cast<int64_t>(af.file_size));
    files_.erase(it);
    return;
  }

  SharedLog& log = *shared_.at(af.log_name);
  auto entry = std::find_if(log.entries.begin(), log.entries.end(),
                            [&](const IndexEntry& e) { return e.file_name == af.path; });
  if (entry != log.entries.end()) log.entries.erase(entry);
  if (log.entries.empty()) {
    ::close(log.fd);
    ::unlink(log.ftl_path.c_str());
    ::unlink(log.idx_path.c_str());
    bump_space_locked(-static_cast<int64_t>(log.alloc_end + log.idx_size));
    shared_.erase(af.log_name);
  } else {
    rewrite_index_locked(log);
  }
  files_.erase(it);
}

uint64_t measure_log_space(const fs::path& ft_dir) {
  uint64_t total = 0;
  std::error_code ec;
  for (auto it = fs::directory_iterator(ft_dir, ec); !ec && it != fs::directory_iterator();
       it.increment(ec)) {
    if (!it->is_regular_file()) continue;
    auto ext = it->path().extension();
    if (ext == ".ftl" || ext == ".idx") total += it->file_size();
  }
  return total;
}

}  // namespace oxfer
