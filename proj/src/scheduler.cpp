#include "oxfer/scheduler.hpp"

#include <algorithm>
#include <stdexcept>

#include "oxfer/errors.hpp"

namespace oxfer {

void TransferPlan::set_congestion(const std::map<OstId, uint32_t>& delay_ms) {
  std::lock_guard lk(mu_);
  congestion_ = delay_ms;
  for (auto& q : queues_) {
    auto it = congestion_.find(q.ost_id);
    q.congestion_delay_ms = it == congestion_.end() ? 0 : it->second;
  }
}

size_t TransferPlan::queue_index_locked(OstId ost_id) {
  auto it = queue_by_ost_.find(ost_id);
  if (it != queue_by_ost_.end()) return it->second;
  // Insert keeping queues_ ordered by ost_id so the round-robin scan order
  // is deterministic.
  auto pos = std::lower_bound(queues_.begin(), queues_.end(), ost_id,
                              [](const OstQueue& q, OstId id) { return q.ost_id < id; });
  size_t idx = static_cast<size_t>(pos - queues_.begin());
  OstQueue q;
  q.ost_id = ost_id;
  auto cit = congestion_.find(ost_id);
  q.congestion_delay_ms = cit == congestion_.end() ? 0 : cit->second;
  queues_.insert(pos, std::move(q));
  queue_by_ost_.clear();
  for (size_t i = 0; i < queues_.size(); ++i) queue_by_ost_[queues_[i].ost_id] = i;
  for (auto& [worker, held] : last_held_)
    if (held >= idx) ++held;
  return idx;
}

size_t TransferPlan::enqueue_file(const FileSpec& file, const CompletedSet* skip) {
  std::lock_guard lk(mu_);
  if (!enqueued_files_.insert(file.file_id).second) return 0;
  uint64_t blocks = file.object_count(object_size_);
  size_t added = 0;
  for (uint64_t k = 0; k < blocks; ++k) {
    if (skip && skip->contains(k)) continue;
    ObjectDescriptor d = object_at(file, object_size_, k);
    queues_[queue_index_locked(d.ost_id)].pending.push_back(d);
    ++added;
  }
  pending_ += added;
  enqueued_total_ += added;
  if (added) work_cv_.notify_all();
  return added;
}

std::optional<ObjectDescriptor> TransferPlan::claim_next(uint32_t worker_id) {
  std::lock_guard lk(mu_);
  if (queues_.empty()) return std::nullopt;
  size_t n = queues_.size();
  size_t start = 0;
  auto held = last_held_.find(worker_id);
  if (held != last_held_.end()) start = (held->second + 1) % n;
  for (size_t i = 0; i < n; ++i) {
    OstQueue& q = queues_[(start + i) % n];
    if (q.busy || q.pending.empty()) continue;
    q.busy = true;
    ++q.holder_count;
    if (q.holder_count != 1) throw std::logic_error("OST held by more than one worker");
    ObjectDescriptor d = q.pending.front();
    q.pending.pop_front();
    --pending_;
    last_held_[worker_id] = (start + i) % n;
    return d;
  }
  return std::nullopt;
}

std::optional<ObjectDescriptor> TransferPlan::wait_and_claim(uint32_t worker_id) {
  std::unique_lock lk(mu_);
  for (;;) {
    if (shutdown_) return std::nullopt;
    lk.unlock();
    auto claimed = claim_next(worker_id);
    lk.lock();
    if (claimed) return claimed;
    if (shutdown_) return std::nullopt;
    work_cv_.wait(lk, [&] {
      if (shutdown_) return true;
      for (const auto& q : queues_)
        if (!q.busy && !q.pending.empty()) return true;
      return false;
    });
  }
}

void TransferPlan::release_ost(OstId ost_id) {
  std::lock_guard lk(mu_);
  auto it = queue_by_ost_.find(ost_id);
  if (it == queue_by_ost_.end()) throw std::logic_error("release of unknown OST");
  OstQueue& q = queues_[it->second];
  if (!q.busy) throw std::logic_error("release of a non-busy OST");
  q.busy = false;
  --q.holder_count;
  work_cv_.notify_all();
}

void TransferPlan::requeue(const ObjectDescriptor& object) {
  std::lock_guard lk(mu_);
  queues_[queue_index_locked(object.ost_id)].pending.push_front(object);
  ++pending_;
  work_cv_.notify_all();
}

void TransferPlan::shutdown() {
  std::lock_guard lk(mu_);
  shutdown_ = true;
  work_cv_.notify_all();
}

bool TransferPlan::is_shutdown() const {
  std::lock_guard lk(mu_);
  return shutdown_;
}

uint32_t TransferPlan::congestion_delay_ms(OstId ost_id) const {
  std::lock_guard lk(mu_);
  auto it = congestion_.find(ost_id);
  return it == congestion_.end() ? 0 : it->second;
}

size_t TransferPlan::pending_count() const {
  std::lock_guard lk(mu_);
  return pending_;
}

size_t TransferPlan::enqueued_total() const {
  std::lock_guard lk(mu_);
  return enqueued_total_;
}

}  // namespace oxfer
