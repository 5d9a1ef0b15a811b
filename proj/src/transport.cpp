#include "oxfer/transport.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <random>
#include <thread>
#include <unordered_map>

#include "oxfer/bytes.hpp"
#include "oxfer/errors.hpp"
#include "oxfer/log.hpp"
#include "oxfer/recovery.hpp"
#include "oxfer/sync.hpp"

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace oxfer {

// ---------------------------------------------------------------------------
// BufferPool

BufferPool::BufferPool(uint64_t slot_size, uint32_t slot_count, uint64_t cap_bytes)
    : slot_size_(slot_size), slot_count_(slot_count) {
  if (slot_size == 0 || slot_count == 0) throw ConfigError("pool needs positive slot size/count");
  if (slot_size * slot_count > cap_bytes)
    throw ConfigError("staging pool exceeds cap: " + std::to_string(slot_size * slot_count) +
                      " > " + std::to_string(cap_bytes));
  memory_.resize(slot_size * slot_count);
  free_.reserve(slot_count);
  for (uint32_t i = 0; i < slot_count; ++i) free_.push_back(slot_count - 1 - i);
}

uint32_t BufferPool::reserve() {
  std::unique_lock lk(mu_);
  slot_cv_.wait(lk, [&] { return shutdown_ || !free_.empty(); });
  if (shutdown_) throw TransferAborted("pool shut down");
  uint32_t slot = free_.back();
  free_.pop_back();
  ++in_use_;
  peak_ = std::max(peak_, in_use_);
  return slot;
}

std::optional<uint32_t> BufferPool::try_reserve() {
  std::lock_guard lk(mu_);
  if (shutdown_ || free_.empty()) return std::nullopt;
  uint32_t slot = free_.back();
  free_.pop_back();
  ++in_use_;
  peak_ = std::max(peak_, in_use_);
  return slot;
}

void BufferPool::release(uint32_t slot) {
  std::lock_guard lk(mu_);
  free_.push_back(slot);
  --in_use_;
  slot_cv_.notify_one();
}

uint8_t* BufferPool::slot_data(uint32_t slot) { return memory_.data() + slot * slot_size_; }

uint32_t BufferPool::in_use() const {
  std::lock_guard lk(mu_);
  return in_use_;
}

uint32_t BufferPool::peak_in_use() const {
  std::lock_guard lk(mu_);
  return peak_;
}

void BufferPool::shutdown() {
  std::lock_guard lk(mu_);
  shutdown_ = true;
  slot_cv_.notify_all();
}

// ---------------------------------------------------------------------------
// Shared plumbing

namespace {

struct SendItem {
  std::vector<uint8_t> frame;
  uint32_t slot = UINT32_MAX;  // when set, append `length` bytes from the pool slot
  uint32_t length = 0;
  TraceEvent ev;
};

uint64_t block_key(uint32_t file_id, uint64_t block_index) {
  return (static_cast<uint64_t>(file_id) << 40) ^ block_index;
}

uint64_t random_session_id() {
  std::random_device rd;
  return (static_cast<uint64_t>(rd()) << 32) | rd();
}

void pwrite_all_fd(int fd, const void* data, size_t len, uint64_t offset) {
  const auto* p = static_cast<const uint8_t*>(data);
  size_t done = 0;
  while (done < len) {
    ssize_t n = ::pwrite(fd, p + done, len - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("pwrite failed: ") + std::strerror(errno));
    }
    done += static_cast<size_t>(n);
  }
}

void pread_all_fd(int fd, void* data, size_t len, uint64_t offset) {
  auto* p = static_cast<uint8_t*>(data);
  size_t done = 0;
  while (done < len) {
    ssize_t n = ::pread(fd, p + done, len - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("pread failed: ") + std::strerror(errno));
    }
    if (n == 0) throw IoError("pread hit EOF before expected length");
    done += static_cast<size_t>(n);
  }
}

// {type u8, payload_len u32} + the fixed NEW_BLOCK fields; slot data follows.
std::vector<uint8_t> new_block_prefix(uint32_t file_id, uint64_t block_index, uint32_t length) {
  ByteWriter w;
  w.u8(static_cast<uint8_t>(MsgType::kNewBlock));
  w.u32(16 + length);
  w.u32(file_id);
  w.u64(block_index);
  w.u32(length);
  return w.take();
}

}  // namespace

// ---------------------------------------------------------------------------
// Source endpoint

namespace {

struct FileProgress {
  uint64_t total = 0;
  uint64_t done = 0;
  bool closed = false;
};

struct SourceState {
  const DatasetManifest& manifest;
  TransferPlan& plan;
  BufferPool& pool;
  FtLogger& logger;
  ByteStream& stream;
  const SourceOptions& opts;

  explicit SourceState(const DatasetManifest& m, TransferPlan& pl, BufferPool& po, FtLogger& lg,
                       ByteStream& st, const SourceOptions& op, size_t queue_cap)
      : manifest(m), plan(pl), pool(po), logger(lg), stream(st), opts(op), send_queue(queue_cap) {}

  BoundedQueue<SendItem> send_queue;
  std::mutex mu;
  TransferStats stats;
  std::unordered_map<uint32_t, FileProgress> progress;
  std::unordered_map<uint64_t, uint32_t> inflight_slot;
  std::unordered_map<uint64_t, uint32_t> retries;
  std::unordered_map<uint32_t, int> source_fds;
  size_t next_file = 0;
  size_t open_files = 0;
  uint64_t bytes_synced = 0;
  uint64_t fault_threshold = 0;  // bytes; 0 = no fault
  std::atomic<bool> stop{false};
  bool bye_queued = false;

  void trace(const TraceEvent& ev) {
    if (opts.trace) opts.trace(ev);
  }

  void queue_control(const Message& m, uint32_t file_id = 0, uint64_t block = 0,
                     uint8_t status = 0) {
    SendItem item;
    item.ev = TraceEvent{msg_type(m), true, file_id, block, status};
    item.frame = encode_message(m);
    send_queue.push(std::move(item));
  }

  int source_fd(uint32_t file_id) {
    std::lock_guard lk(mu);
    auto it = source_fds.find(file_id);
    if (it != source_fds.end()) return it->second;
    fs::path p = fs::path(manifest.root) / manifest.files[file_id].path;
    int fd = ::open(p.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) throw IoError("cannot open source file " + p.string());
    source_fds[file_id] = fd;
    return fd;
  }

  void close_source_fd(uint32_t file_id) {
    std::lock_guard lk(mu);
    auto it = source_fds.find(file_id);
    if (it != source_fds.end()) {
      ::close(it->second);
      source_fds.erase(it);
    }
  }

  void abort_session() {
    stop.store(true);
    plan.shutdown();
    pool.shutdown();
    send_queue.abort();
    stream.shutdown();
  }
};

void source_sender(SourceState& st) {
  try {
    while (auto item = st.send_queue.pop()) {
      st.stream.write_all(item->frame.data(), item->frame.size());
      if (item->slot != UINT32_MAX)
        st.stream.write_all(st.pool.slot_data(item->slot), item->length);
      {
        std::lock_guard lk(st.mu);
        st.stats.msgs_sent[static_cast<size_t>(item->ev.type)]++;
        if (item->ev.type == MsgType::kNewBlock) {
          st.stats.blocks_sent++;
          st.stats.bytes_sent += item->length;
        }
      }
      st.trace(item->ev);
    }
  } catch (const IoError& e) {
    if (!st.stop.load()) {
      std::lock_guard lk(st.mu);
      if (st.stats.error.empty()) st.stats.error = e.what();
    }
    st.stop.store(true);
  }
}

void source_worker(SourceState& st, uint32_t worker_id) {
  while (auto obj = st.plan.wait_and_claim(worker_id)) {
    bool released = false;
    try {
      uint32_t slot = st.pool.reserve();
      uint32_t delay = st.plan.congestion_delay_ms(obj->ost_id);
      if (delay) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
      int fd = st.source_fd(obj->file_id);
      pread_all_fd(fd, st.pool.slot_data(slot), obj->length, obj->offset);
      st.plan.release_ost(obj->ost_id);
      released = true;
      {
        std::lock_guard lk(st.mu);
        st.inflight_slot[block_key(obj->file_id, obj->block_index)] = slot;
      }
      SendItem item;
      item.frame = new_block_prefix(obj->file_id, obj->block_index,
                                    static_cast<uint32_t>(obj->length));
      item.slot = slot;
      item.length = static_cast<uint32_t>(obj->length);
      item.ev = TraceEvent{MsgType::kNewBlock, true, obj->file_id, obj->block_index, 0};
      st.send_queue.push(std::move(item));
    } catch (const TransferAborted&) {
      if (!released) st.plan.release_ost(obj->ost_id);
      break;
    } catch (const std::exception& e) {
      if (!released) st.plan.release_ost(obj->ost_id);
      {
        std::lock_guard lk(st.mu);
        if (st.stats.error.empty()) st.stats.error = e.what();
      }
      st.abort_session();
      break;
    }
  }
}

}  // namespace

TransferStats run_source(const DatasetManifest& manifest, TransferPlan& plan, BufferPool& pool,
                         FtLogger& logger, ByteStream& stream, const SourceOptions& options) {
  size_t queue_cap = pool.slot_count() + 4ull * options.file_window + 64;
  SourceState st(manifest, plan, pool, logger, stream, options, queue_cap);
  st.stats.files_total = manifest.files.size();
  plan.set_congestion(options.congestion_ms);
  if (options.fault_at) {
    double f = *options.fault_at;
    if (f <= 0.0 || f >= 1.0) throw ConfigError("fault point must be in (0,1)");
    st.fault_threshold = static_cast<uint64_t>(f * static_cast<double>(manifest.total_bytes()));
    if (st.fault_threshold == 0) st.fault_threshold = 1;
  }

  // Handshake happens before any worker exists.
  uint64_t session_id = options.session_id ? options.session_id : random_session_id();
  ConnectMsg hello{manifest.object_size, pool.slot_count(), session_id,
                   static_cast<uint8_t>(options.resume ? 1 : 0)};
  send_message(stream, hello);
  st.trace(TraceEvent{MsgType::kConnect, true, 0, 0, 0});
  {
    std::lock_guard lk(st.mu);
    st.stats.msgs_sent[static_cast<size_t>(MsgType::kConnect)]++;
  }
  auto reply = recv_message(stream);
  if (!reply || msg_type(*reply) != MsgType::kConnect)
    throw ProtocolError("sink did not accept the connect handshake");
  if (std::get<ConnectMsg>(*reply).session_id != session_id)
    throw ProtocolError("sink echoed a different session id");
  st.trace(TraceEvent{MsgType::kConnect, false, 0, 0, 0});
  {
    std::lock_guard lk(st.mu);
    st.stats.msgs_received[static_cast<size_t>(MsgType::kConnect)]++;
  }

  auto t0 = Clock::now();

  std::vector<std::jthread> threads;
  threads.emplace_back(source_sender, std::ref(st));
  for (uint32_t w = 0; w < options.io_workers; ++w)
    threads.emplace_back(source_worker, std::ref(st), w);

  // Master-side bookkeeping runs on the comm receive path below.
  auto announce_files = [&] {
    while (st.next_file < manifest.files.size() && st.open_files < options.file_window) {
      const FileSpec& f = manifest.files[st.next_file];
      st.queue_control(NewFileMsg{f.file_id, f.size, f.mtime, f.path}, f.file_id);
      ++st.open_files;
      ++st.next_file;
    }
  };

  auto all_done = [&] {
    return st.next_file == manifest.files.size() && st.open_files == 0;
  };

  auto finish_file = [&](const FileSpec& f) {
    // FILE_CLOSE goes out before the log entry disappears, so a fault in
    // between leaves at most this file's blocks to resend.
    st.queue_control(FileCloseMsg{f.file_id}, f.file_id);
    logger.finalize_file(f);
    st.close_source_fd(f.file_id);
    --st.open_files;
    {
      std::lock_guard lk(st.mu);
      st.stats.files_completed++;
    }
    announce_files();
  };

  bool failed = false;
  try {
    announce_files();
    while (!st.stop.load()) {
      if (all_done() && !st.bye_queued) {
        st.queue_control(ByeMsg{});
        st.bye_queued = true;
        st.send_queue.close();
        break;
      }
      std::optional<Message> msg;
      try {
        msg = recv_message(stream);
      } catch (const ProtocolError& e) {
        std::lock_guard lk(st.mu);
        if (st.stats.error.empty()) st.stats.error = e.what();
        failed = true;
        break;
      } catch (const IoError& e) {
        std::lock_guard lk(st.mu);
        if (st.stats.error.empty()) st.stats.error = e.what();
        failed = true;
        break;
      }
      if (!msg) {
        if (!st.stop.load()) {
          std::lock_guard lk(st.mu);
          if (st.stats.error.empty()) st.stats.error = "connection lost";
        }
        failed = true;
        break;
      }
      {
        std::lock_guard lk(st.mu);
        st.stats.msgs_received[static_cast<size_t>(msg_type(*msg))]++;
      }

      if (auto* fid = std::get_if<FileIdMsg>(&*msg)) {
        st.trace(TraceEvent{MsgType::kFileId, false, fid->file_id, 0, fid->skip_flag});
        const FileSpec* f = manifest.find(fid->file_id);
        if (!f) throw ProtocolError("FILE_ID for unknown file");
        Classification cls = classify_file(logger, *f, fid->skip_flag != 0);
        if (cls.status == FileStatus::kComplete) {
          std::lock_guard lk(st.mu);
          st.stats.files_skipped++;
          --st.open_files;
          announce_files();
          continue;
        }
        uint64_t total = f->object_count(manifest.object_size);
        st.progress[fid->file_id] = FileProgress{total, cls.completed.count(), false};
        plan.enqueue_file(*f, &cls.completed);
        if (cls.completed.count() == total) {
          st.progress[fid->file_id].closed = true;
          finish_file(*f);
        }
      } else if (auto* sync = std::get_if<BlockSyncMsg>(&*msg)) {
        st.trace(
            TraceEvent{MsgType::kBlockSync, false, sync->file_id, sync->block_index, sync->status});
        const FileSpec* f = manifest.find(sync->file_id);
        if (!f) throw ProtocolError("BLOCK_SYNC for unknown file");
        uint64_t key = block_key(sync->file_id, sync->block_index);
        if (sync->status == 0) {
          // Sync-before-log: the record lands only now, never at send time.
          logger.record_completion(*f, sync->block_index);
          uint64_t len = object_at(*f, manifest.object_size, sync->block_index).length;
          {
            std::lock_guard lk(st.mu);
            st.stats.blocks_synced++;
            st.stats.bytes_synced += len;
            st.bytes_synced += len;
          }
          // The fault lands after the record is durable but before the slot
          // frees, so no worker can push another block past the trigger.
          if (st.fault_threshold && st.bytes_synced >= st.fault_threshold) {
            if (options.fault_action == FaultAction::kExitProcess) {
              OXFER_INFO("fault injected at %llu bytes synced; terminating",
                         static_cast<unsigned long long>(st.bytes_synced));
              std::_Exit(kExitFault);
            }
            st.stats.faulted = true;
            break;
          }
          {
            std::lock_guard lk(st.mu);
            auto slot = st.inflight_slot.find(key);
            if (slot != st.inflight_slot.end()) {
              pool.release(slot->second);
              st.inflight_slot.erase(slot);
            }
          }
          auto prog = st.progress.find(sync->file_id);
          if (prog != st.progress.end()) {
            prog->second.done++;
            if (prog->second.done == prog->second.total && !prog->second.closed) {
              prog->second.closed = true;
              finish_file(*f);
            }
          }
        } else {
          std::lock_guard lk(st.mu);
          st.stats.blocks_sync_failed++;
          auto slot = st.inflight_slot.find(key);
          if (slot != st.inflight_slot.end()) {
            pool.release(slot->second);
            st.inflight_slot.erase(slot);
          }
          uint32_t attempts = ++st.retries[key];
          if (attempts > options.max_retries) {
            st.stats.error = "sink write for file " + std::to_string(sync->file_id) + " block " +
                             std::to_string(sync->block_index) + " failed after " +
                             std::to_string(attempts) + " attempts";
            failed = true;
            break;
          }
          plan.requeue(object_at(*f, manifest.object_size, sync->block_index));
          st.stats.blocks_retx++;
        }
      } else {
        throw ProtocolError(std::string("unexpected message at source: ") +
                            msg_type_name(msg_type(*msg)));
      }
    }
  } catch (...) {
    st.abort_session();
    for (auto& t : threads) t.join();
    threads.clear();
    for (auto& [id, fd] : st.source_fds) ::close(fd);
    throw;
  }

  if (st.stats.faulted || failed) {
    st.abort_session();
  } else {
    // Clean end: let the sender drain (BYE flush), then stop the rest.
    plan.shutdown();
  }
  for (auto& t : threads) t.join();
  threads.clear();
  st.stats.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  for (auto& [id, fd] : st.source_fds) ::close(fd);
  st.stats.clean = st.bye_queued && st.stats.error.empty() && !st.stats.faulted;
  st.stats.log_space_peak = logger.peak_space();
  if (!st.stats.clean && !st.stats.faulted && st.stats.error.empty())
    st.stats.error = "session aborted";
  return st.stats;
}

// ---------------------------------------------------------------------------
// Sink endpoint

namespace {

struct WriteJob {
  uint32_t file_id = 0;
  uint64_t block_index = 0;
  uint32_t length = 0;
  uint32_t slot = 0;
};

struct OpenSinkFile {
  int fd = -1;
  uint64_t size = 0;
  uint64_t mtime = 0;
  fs::path abs;
  fs::path marker;
};

struct SinkState {
  ByteStream& stream;
  fs::path dest_root;
  BufferPool& pool;
  const SinkOptions& opts;

  SinkState(ByteStream& s, fs::path root, BufferPool& p, const SinkOptions& o, size_t cap)
      : stream(s), dest_root(std::move(root)), pool(p), opts(o), send_queue(cap),
        write_queue(cap) {}

  BoundedQueue<SendItem> send_queue;
  BoundedQueue<WriteJob> write_queue;
  std::mutex mu;
  TransferStats stats;
  std::unordered_map<uint32_t, OpenSinkFile> open;
  uint64_t object_size = 0;
  std::atomic<bool> sender_dead{false};

  void trace(const TraceEvent& ev) {
    if (opts.trace) opts.trace(ev);
  }

  void queue_control(const Message& m, uint32_t file_id = 0, uint64_t block = 0,
                     uint8_t status = 0) {
    SendItem item;
    item.ev = TraceEvent{msg_type(m), true, file_id, block, status};
    item.frame = encode_message(m);
    send_queue.push(std::move(item));
  }
};

void sink_sender(SinkState& st) {
  while (auto item = st.send_queue.pop()) {
    try {
      st.stream.write_all(item->frame.data(), item->frame.size());
    } catch (const IoError&) {
      // Source is gone (fault); keep draining so workers never block.
      st.sender_dead.store(true);
      continue;
    }
    {
      std::lock_guard lk(st.mu);
      st.stats.msgs_sent[static_cast<size_t>(item->ev.type)]++;
    }
    st.trace(item->ev);
  }
}

void sink_writer(SinkState& st) {
  while (auto job = st.write_queue.pop()) {
    int fd = -1;
    uint64_t size = 0;
    {
      std::lock_guard lk(st.mu);
      auto it = st.open.find(job->file_id);
      if (it != st.open.end()) {
        fd = it->second.fd;
        size = it->second.size;
      }
    }
    if (st.opts.before_write) st.opts.before_write(job->file_id, job->block_index);
    uint8_t status = 0;
    uint64_t offset = job->block_index * st.object_size;
    if (fd < 0) {
      OXFER_WARN("NEW_BLOCK for a file that is not open (id %u)", job->file_id);
      status = 1;
    } else if (offset + job->length > size) {
      OXFER_WARN("NEW_BLOCK past announced size (id %u block %llu)", job->file_id,
                 static_cast<unsigned long long>(job->block_index));
      status = 1;
    } else if (st.opts.inject_write_failure &&
               st.opts.inject_write_failure(job->file_id, job->block_index)) {
      status = 1;
    } else {
      try {
        pwrite_all_fd(fd, st.pool.slot_data(job->slot), job->length, offset);
      } catch (const IoError& e) {
        OXFER_WARN("positional write failed: %s", e.what());
        status = 1;
      }
    }
    st.pool.release(job->slot);
    {
      std::lock_guard lk(st.mu);
      if (status == 0) {
        st.stats.blocks_written++;
        st.stats.bytes_written += job->length;
      }
    }
    st.queue_control(BlockSyncMsg{job->file_id, job->block_index, status}, job->file_id,
                     job->block_index, status);
  }
}

fs::path sanitize_relative(const std::string& rel) {
  if (rel.empty()) throw ProtocolError("empty file path");
  fs::path p(rel);
  if (p.is_absolute()) throw ProtocolError("absolute file path rejected: " + rel);
  for (const auto& part : p)
    if (part == "..") throw ProtocolError("path traversal rejected: " + rel);
  return p;
}

uint64_t path_mtime_seconds(const fs::path& p) {
  struct stat stbuf{};
  if (::stat(p.c_str(), &stbuf) != 0) throw IoError("stat failed: " + p.string());
  return static_cast<uint64_t>(stbuf.st_mtime);
}

}  // namespace

TransferStats run_sink(ByteStream& stream, const fs::path& dest_root, BufferPool& pool,
                       const SinkOptions& options) {
  SinkState st(stream, dest_root, pool, options, pool.slot_count() + 128);
  std::error_code ec;
  fs::create_directories(dest_root, ec);
  if (ec) throw IoError("cannot create dest root: " + dest_root.string());

  auto hello = recv_message(stream);
  if (!hello || msg_type(*hello) != MsgType::kConnect)
    throw ProtocolError("expected CONNECT");
  const auto& connect = std::get<ConnectMsg>(*hello);
  if (connect.object_size == 0 || connect.object_size > pool.slot_size())
    throw ProtocolError("CONNECT object_size does not fit the staging pool");
  st.object_size = connect.object_size;
  st.trace(TraceEvent{MsgType::kConnect, false, 0, 0, 0});
  st.stats.msgs_received[static_cast<size_t>(MsgType::kConnect)]++;
  ConnectMsg accept = connect;
  accept.slot_count = pool.slot_count();
  send_message(stream, accept);
  st.trace(TraceEvent{MsgType::kConnect, true, 0, 0, 0});
  st.stats.msgs_sent[static_cast<size_t>(MsgType::kConnect)]++;

  auto t0 = Clock::now();

  std::vector<std::jthread> threads;
  threads.emplace_back(sink_sender, std::ref(st));
  for (uint32_t w = 0; w < options.io_workers; ++w) threads.emplace_back(sink_writer, std::ref(st));

  bool clean = false;
  try {
    for (;;) {
      uint8_t header[kFrameHeaderSize];
      bool got = false;
      try {
        got = stream.read_exact(header, sizeof(header));
      } catch (const ProtocolError&) {
        got = false;  // source died mid-frame
      }
      if (!got) break;  // source died (fault); keep what was written
      uint32_t payload_len = 0;
      for (int i = 0; i < 4; ++i)
        payload_len |= static_cast<uint32_t>(header[1 + i]) << (8 * i);
      if (payload_len > kMaxPayloadLen) throw ProtocolError("oversized frame");

      if (static_cast<MsgType>(header[0]) == MsgType::kNewBlock) {
        if (payload_len < 16) throw ProtocolError("short NEW_BLOCK");
        uint8_t fixed[16];
        if (!stream.read_exact(fixed, sizeof(fixed)))
          throw ProtocolError("connection closed mid-frame");
        ByteReader r(fixed);
        WriteJob job;
        job.file_id = r.u32();
        job.block_index = r.u64();
        job.length = r.u32();
        if (job.length != payload_len - 16) throw ProtocolError("NEW_BLOCK length mismatch");
        if (job.length > pool.slot_size()) throw ProtocolError("NEW_BLOCK larger than a slot");
        // Flow control: the payload is only pulled off the wire once a slot
        // is reserved for it.
        job.slot = pool.reserve();
        if (job.length && !stream.read_exact(pool.slot_data(job.slot), job.length)) {
          pool.release(job.slot);
          throw ProtocolError("connection closed mid-frame");
        }
        {
          std::lock_guard lk(st.mu);
          st.stats.msgs_received[static_cast<size_t>(MsgType::kNewBlock)]++;
        }
        st.trace(TraceEvent{MsgType::kNewBlock, false, job.file_id, job.block_index, 0});
        st.write_queue.push(job);
        continue;
      }

      std::vector<uint8_t> frame(kFrameHeaderSize + payload_len);
      std::memcpy(frame.data(), header, kFrameHeaderSize);
      if (payload_len && !stream.read_exact(frame.data() + kFrameHeaderSize, payload_len))
        throw ProtocolError("connection closed mid-frame");
      Message msg = decode_message(frame);
      {
        std::lock_guard lk(st.mu);
        st.stats.msgs_received[static_cast<size_t>(msg_type(msg))]++;
      }

      if (auto* nf = std::get_if<NewFileMsg>(&msg)) {
        st.trace(TraceEvent{MsgType::kNewFile, false, nf->file_id, 0, 0});
        fs::path rel = sanitize_relative(nf->path);
        fs::path abs = dest_root / rel;
        fs::path marker = abs;
        marker += kPartialMarkerSuffix;
        bool match = fs::exists(abs) && !fs::exists(marker) && fs::is_regular_file(abs) &&
                     fs::file_size(abs) == nf->size && path_mtime_seconds(abs) == nf->mtime;
        if (match) {
          std::lock_guard lk(st.mu);
          st.stats.files_skipped++;
          st.queue_control(FileIdMsg{nf->file_id, 0, 1}, nf->file_id, 0, 1);
          continue;
        }
        fs::create_directories(abs.parent_path(), ec);
        int fd = ::open(abs.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd < 0) throw IoError("cannot open sink file " + abs.string());
        if (::ftruncate(fd, static_cast<off_t>(nf->size)) != 0) {
          ::close(fd);
          throw IoError("cannot preallocate sink file " + abs.string());
        }
        int mfd = ::open(marker.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
        if (mfd < 0) {
          ::close(fd);
          throw IoError("cannot create partial marker " + marker.string());
        }
        ::close(mfd);
        {
          std::lock_guard lk(st.mu);
          st.open[nf->file_id] = OpenSinkFile{fd, nf->size, nf->mtime, abs, marker};
          st.stats.files_total++;
        }
        st.queue_control(FileIdMsg{nf->file_id, static_cast<uint64_t>(fd), 0}, nf->file_id, 0, 0);
      } else if (auto* fc = std::get_if<FileCloseMsg>(&msg)) {
        st.trace(TraceEvent{MsgType::kFileClose, false, fc->file_id, 0, 0});
        OpenSinkFile entry;
        bool found = false;
        {
          std::lock_guard lk(st.mu);
          auto it = st.open.find(fc->file_id);
          if (it != st.open.end()) {
            entry = it->second;
            st.open.erase(it);
            found = true;
          }
        }
        if (!found) continue;  // closing a skipped file is a no-op
        ::close(entry.fd);
        ::unlink(entry.marker.c_str());
        struct timespec times[2];
        times[0].tv_sec = static_cast<time_t>(entry.mtime);
        times[0].tv_nsec = 0;
        times[1] = times[0];
        if (::utimensat(AT_FDCWD, entry.abs.c_str(), times, 0) != 0)
          OXFER_WARN("cannot set mtime on %s", entry.abs.string().c_str());
        std::lock_guard lk(st.mu);
        st.stats.files_completed++;
      } else if (std::get_if<ByeMsg>(&msg)) {
        st.trace(TraceEvent{MsgType::kBye, false, 0, 0, 0});
        clean = true;
        break;
      } else {
        throw ProtocolError(std::string("unexpected message at sink: ") +
                            msg_type_name(msg_type(msg)));
      }
    }
  } catch (const ProtocolError& e) {
    st.stats.error = e.what();
  } catch (const IoError& e) {
    st.stats.error = e.what();
  } catch (...) {
    st.write_queue.close();
    st.send_queue.close();
    for (auto& t : threads) t.join();
    threads.clear();
    std::lock_guard lk(st.mu);
    for (auto& [id, f] : st.open) ::close(f.fd);
    st.open.clear();
    throw;
  }

  // Drain pending writes, then the outgoing syncs, then stop.
  st.write_queue.close();
  for (size_t i = 1; i < threads.size(); ++i) threads[i].join();
  st.send_queue.close();
  threads[0].join();
  threads.clear();

  st.stats.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  st.stats.clean = clean;
  // On an unclean end the markers stay put: the files are still partial.
  std::lock_guard lk(st.mu);
  for (auto& [id, f] : st.open) ::close(f.fd);
  st.open.clear();
  return st.stats;
}

}  // namespace oxfer
