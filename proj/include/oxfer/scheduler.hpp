#pragma once

#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "oxfer/ftlog.hpp"
#include "oxfer/layout.hpp"

namespace oxfer {

// One work queue per OST. A queue is held by at most one worker at a time,
// so concurrent workers never contend on the same storage target.
struct OstQueue {
  OstId ost_id = 0;
  std::deque<ObjectDescriptor> pending;
  bool busy = false;
  uint32_t holder_count = 0;  // must stay <= 1; checked on every claim
  uint32_t congestion_delay_ms = 0;
};

// Source-side schedule of remaining objects, partitioned into per-OST FIFO
// queues. Claim/release are short critical sections under one mutex; workers
// park on the condition until work appears or shutdown is signalled.
class TransferPlan {
 public:
  explicit TransferPlan(uint64_t object_size) : object_size_(object_size) {}

  void set_congestion(const std::map<OstId, uint32_t>& delay_ms);

  // Appends every block of `file` not in `skip` to its OST queue in
  // ascending block order. Returns the number enqueued; re-enqueueing an
  // already-enqueued file is a no-op returning 0.
  size_t enqueue_file(const FileSpec& file, const CompletedSet* skip = nullptr);

  // Pops the head of the first non-empty, non-busy queue, scanning
  // round-robin from just past the worker's last-held OST, and marks the
  // queue busy. nullopt when nothing is claimable right now.
  std::optional<ObjectDescriptor> claim_next(uint32_t worker_id);

  // Blocks until claim_next succeeds or the plan shuts down (nullopt).
  std::optional<ObjectDescriptor> wait_and_claim(uint32_t worker_id);

  void release_ost(OstId ost_id);

  // Puts a failed object back at the front of its queue for retry.
  void requeue(const ObjectDescriptor& object);

  void shutdown();
  bool is_shutdown() const;

  uint32_t congestion_delay_ms(OstId ost_id) const;
  size_t pending_count() const;
  size_t enqueued_total() const;

 private:
  size_t queue_index_locked(OstId ost_id);

  uint64_t object_size_;
  mutable std::mutex mu_;
  std::condition_variable work_cv_;
  std::vector<OstQueue> queues_;  // ordered by ost_id
  std::unordered_map<OstId, size_t> queue_by_ost_;
  std::unordered_map<uint32_t, size_t> last_held_;
  std::unordered_set<uint32_t> enqueued_files_;
  std::map<OstId, uint32_t> congestion_;
  size_t pending_ = 0;
  size_t enqueued_total_ = 0;
  bool shutdown_ = false;
};

}  // namespace oxfer
