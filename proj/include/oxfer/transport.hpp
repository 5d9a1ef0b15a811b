#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "oxfer/ftlog.hpp"
#include "oxfer/layout.hpp"
#include "oxfer/scheduler.hpp"
#include "oxfer/wire.hpp"

namespace oxfer {

inline constexpr uint32_t kDefaultSlotCount = 256;  // x 1 MiB = 256 MiB staging
inline constexpr uint64_t kDefaultPoolCap = 256ull << 20;
inline constexpr uint32_t kDefaultIoWorkers = 4;
inline constexpr uint32_t kDefaultMaxRetries = 3;
inline constexpr uint32_t kDefaultFileWindow = 16;

// Raised internally when a session is torn down by fault injection or a
// lost connection while workers are blocked on the pool or the plan.
struct TransferAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bounded staging-buffer pool standing in for registered RMA buffers.
// reserve() blocks until a slot frees; every byte held in user space on
// behalf of an unwritten block lives in one of these slots, which bounds
// in-flight payload to slot_count x slot_size.
class BufferPool {
 public:
  BufferPool(uint64_t slot_size, uint32_t slot_count, uint64_t cap_bytes = kDefaultPoolCap);

  uint32_t reserve();                    // throws TransferAborted after shutdown()
  std::optional<uint32_t> try_reserve();
  void release(uint32_t slot);
  uint8_t* slot_data(uint32_t slot);

  uint64_t slot_size() const { return slot_size_; }
  uint32_t slot_count() const { return slot_count_; }
  uint32_t in_use() const;
  uint32_t peak_in_use() const;

  void shutdown();

 private:
  uint64_t slot_size_;
  uint32_t slot_count_;
  std::vector<uint8_t> memory_;
  mutable std::mutex mu_;
  std::condition_variable slot_cv_;
  std::vector<uint32_t> free_;
  uint32_t in_use_ = 0;
  uint32_t peak_ = 0;
  bool shutdown_ = false;
};

struct TransferStats {
  uint64_t files_total = 0;
  uint64_t files_skipped = 0;    // sink metadata match, zero blocks sent
  uint64_t files_completed = 0;  // closed this session (includes skip-free resumes)
  uint64_t blocks_sent = 0;
  uint64_t blocks_synced = 0;       // BLOCK_SYNC status=0 processed
  uint64_t blocks_sync_failed = 0;  // BLOCK_SYNC status=1 received
  uint64_t blocks_retx = 0;         // re-enqueued after a failed sync
  uint64_t blocks_written = 0;      // sink side
  uint64_t bytes_sent = 0;
  uint64_t bytes_synced = 0;
  uint64_t bytes_written = 0;
  uint64_t msgs_sent[7] = {};
  uint64_t msgs_received[7] = {};
  double seconds = 0;  // CONNECT accept -> BYE (or fault), monotonic clock
  uint64_t log_space_peak = 0;
  bool faulted = false;       // injected fault fired
  bool clean = false;         // session reached BYE
  std::string error;
};

struct TraceEvent {
  MsgType type;
  bool sent = false;  // false = received
  uint32_t file_id = 0;
  uint64_t block_index = 0;
  uint8_t status = 0;  // BLOCK_SYNC / FILE_ID skip flag
};
using TraceFn = std::function<void(const TraceEvent&)>;

enum class FaultAction {
  kStopLoops,    // tear the session down in-process (harness restarts it)
  kExitProcess,  // _Exit(kExitFault): a real crash of the source process
};

struct SourceOptions {
  uint32_t io_workers = kDefaultIoWorkers;
  uint32_t max_retries = kDefaultMaxRetries;
  uint32_t file_window = kDefaultFileWindow;  // max files open at the sink
  bool resume = false;
  uint64_t session_id = 0;  // 0 = draw a random id
  std::map<OstId, uint32_t> congestion_ms;
  std::optional<double> fault_at;  // fraction of dataset bytes synced
  FaultAction fault_action = FaultAction::kStopLoops;
  TraceFn trace;
};

// Drives one source session over an established stream: CONNECT handshake,
// NEW_FILE window, worker reads through the pool, completion logging on
// BLOCK_SYNC, FILE_CLOSE + log finalize per file, BYE at the end.
TransferStats run_source(const DatasetManifest& manifest, TransferPlan& plan, BufferPool& pool,
                         FtLogger& logger, ByteStream& stream, const SourceOptions& options);

struct SinkOptions {
  uint32_t io_workers = kDefaultIoWorkers;
  TraceFn trace;
  // Test hooks on the positional-write path.
  std::function<bool(uint32_t file_id, uint64_t block_index)> inject_write_failure;
  std::function<void(uint32_t file_id, uint64_t block_index)> before_write;
};

// Serves one session on an accepted stream: opens/preallocates files with
// partial markers, writes blocks through the pool, acknowledges each write
// with BLOCK_SYNC, finalizes metadata on FILE_CLOSE.
TransferStats run_sink(ByteStream& stream, const std::filesystem::path& dest_root,
                       BufferPool& pool, const SinkOptions& options);

inline constexpr const char* kPartialMarkerSuffix = ".ftpart";

}  // namespace oxfer
