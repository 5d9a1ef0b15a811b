#include "oxfer/recovery.hpp"

#include <gtest/gtest.h>

#include <set>
#include <thread>

#include "oxfer/errors.hpp"
#include "oxfer/harness.hpp"
#include "oxfer/transport.hpp"
#include "testutil.hpp"

using namespace oxfer;
using namespace oxfer::test;

namespace {

constexpr uint64_t kObj = 1 << 16;

FtLogConfig log_cfg(const fs::path& dir) {
  FtLogConfig c;
  c.mechanism = LogMechanism::kFile;
  c.method = LogMethod::kBit64;
  c.ft_dir = dir;
  c.fsync_records = false;
  return c;
}

EndpointConfig endpoint_cfg(const fs::path& ft_dir, uint32_t slots = 32, uint32_t workers = 4) {
  EndpointConfig cfg;
  cfg.object_size = kObj;
  cfg.slot_count = slots;
  cfg.io_workers = workers;
  cfg.log = log_cfg(ft_dir);
  return cfg;
}

TEST(Classify, FreshFileIsUntouched) {
  TempDir dir("rec");
  FtLogger logger(log_cfg(dir.path()), kObj);
  FileSpec f = spec_of(0, 4 * kObj, kObj, 1, {0});
  auto c = classify_file(logger, f, false);
  EXPECT_EQ(c.status, FileStatus::kUntouched);
  EXPECT_EQ(c.completed.count(), 0u);
}

TEST(Classify, SinkSkipWithoutLogIsComplete) {
  TempDir dir("rec");
  FtLogger logger(log_cfg(dir.path()), kObj);
  FileSpec f = spec_of(0, 4 * kObj, kObj, 1, {0});
  EXPECT_EQ(classify_file(logger, f, true).status, FileStatus::kComplete);
}

TEST(Classify, LogEntryMeansPartial) {
  TempDir dir("rec");
  FtLogger logger(log_cfg(dir.path()), kObj);
  FileSpec f = spec_of(0, 4 * kObj, kObj, 1, {0});
  logger.record_completion(f, 1);
  logger.record_completion(f, 3);
  auto c = classify_file(logger, f, false);
  EXPECT_EQ(c.status, FileStatus::kPartial);
  EXPECT_EQ(c.completed.to_vector(), (std::vector<uint64_t>{1, 3}));
}

TEST(Classify, ConflictTrustsTheLog) {
  TempDir dir("rec");
  FtLogger logger(log_cfg(dir.path()), kObj);
  FileSpec f = spec_of(0, 4 * kObj, kObj, 1, {0});
  logger.record_completion(f, 0);
  EXPECT_EQ(classify_file(logger, f, true).status, FileStatus::kPartial);
}

TEST(SessionPin, RoundTripAndClear) {
  TempDir dir("rec-pin");
  SessionPin pin;
  pin.session_id = 12345;
  pin.manifest_checksum = "abc";
  pin.object_size = kObj;
  pin.mechanism = "file";
  pin.method = "bit64";
  pin.transaction_size = 4;
  write_session_pin(dir.path(), pin);
  auto back = read_session_pin(dir.path());
  ASSERT_TRUE(back);
  EXPECT_EQ(back->session_id, 12345u);
  EXPECT_EQ(back->manifest_checksum, "abc");
  clear_session_pin(dir.path());
  EXPECT_FALSE(read_session_pin(dir.path()).has_value());
}

TEST(SessionPin, MismatchesAreFatal) {
  TempDir dir("rec-pin2");
  auto manifest = make_dataset(dir / "src", {2 * kObj}, kObj);
  FtLogConfig cfg = log_cfg(dir / "ft");
  SessionPin pin;
  pin.session_id = 1;
  pin.manifest_checksum = manifest_checksum(manifest);
  pin.object_size = manifest.object_size;
  pin.ft_enabled = true;
  pin.mechanism = "file";
  pin.method = "bit64";
  pin.transaction_size = 4;
  check_session_pin(pin, manifest, cfg);  // matching pin passes

  SessionPin bad = pin;
  bad.manifest_checksum = "deadbeef";
  EXPECT_THROW(check_session_pin(bad, manifest, cfg), ResumePinError);
  bad = pin;
  bad.method = "char";
  EXPECT_THROW(check_session_pin(bad, manifest, cfg), ResumePinError);
  bad = pin;
  bad.object_size = kObj * 2;
  EXPECT_THROW(check_session_pin(bad, manifest, cfg), ResumePinError);
}

TEST(SessionPin, ResumeWithoutPriorStateFails) {
  TempDir dir("rec-pin3");
  auto manifest = make_dataset(dir / "src", {kObj}, kObj);
  auto cfg = endpoint_cfg(dir / "ft");
  EXPECT_THROW(run_session_pair(manifest, cfg, dir / "dst", true, std::nullopt),
               ResumePinError);
}

TEST(SessionPin, StaleStateWithoutResumeFails) {
  TempDir dir("rec-pin4");
  auto manifest = make_dataset(dir / "src", {16 * kObj}, kObj);
  auto cfg = endpoint_cfg(dir / "ft", 4);
  auto faulted = run_session_pair(manifest, cfg, dir / "dst", false, 0.5);
  ASSERT_TRUE(faulted.source.faulted);
  EXPECT_THROW(run_session_pair(manifest, cfg, dir / "dst", false, std::nullopt),
               ResumePinError);
}

TEST(SessionPin, DatasetChangeBlocksResume) {
  TempDir dir("rec-pin5");
  auto manifest = make_dataset(dir / "src", {16 * kObj}, kObj);
  auto cfg = endpoint_cfg(dir / "ft", 4);
  auto faulted = run_session_pair(manifest, cfg, dir / "dst", false, 0.5);
  ASSERT_TRUE(faulted.source.faulted);
  write_file(dir / "src/f000.bin", pseudo_bytes(9, 17 * kObj));  // dataset changed
  auto changed = build_manifest(dir / "src", kObj, LayoutPolicy{});
  EXPECT_THROW(run_session_pair(changed, cfg, dir / "dst", true, std::nullopt), ResumePinError);
}

TEST(Verify, FlippedByteAndMissingFileAreReported) {
  TempDir dir("rec-verify");
  auto manifest = make_dataset(dir / "src", {kObj, 2 * kObj, 100}, kObj);
  fs::create_directories(dir / "dst");
  for (const auto& f : manifest.files)
    fs::copy_file(fs::path(manifest.root) / f.path, dir / "dst" / f.path);

  auto ok = verify_dataset(manifest.root, (dir / "dst").string(), manifest);
  EXPECT_TRUE(ok.ok());
  EXPECT_EQ(ok.files.size(), 3u);

  // Flip one byte in one sink file.
  auto bytes = read_file(dir / "dst/f001.bin");
  bytes[100] ^= 1;
  write_file(dir / "dst/f001.bin", bytes);
  auto flipped = verify_dataset(manifest.root, (dir / "dst").string(), manifest);
  ASSERT_EQ(flipped.mismatches.size(), 1u);
  EXPECT_EQ(flipped.mismatches[0].path, "f001.bin");
  EXPECT_EQ(flipped.mismatches[0].status, DigestStatus::kMismatch);

  fs::remove(dir / "dst/f002.bin");
  auto missing = verify_dataset(manifest.root, (dir / "dst").string(), manifest);
  ASSERT_EQ(missing.mismatches.size(), 2u);
  EXPECT_EQ(missing.mismatches[1].status, DigestStatus::kMissingSink);
}

// The spec's mid-file fault drill with a deterministic in-flight window:
// one worker and one slot serialize the pipeline, so a fault after half the
// syncs leaves exactly blocks {0..n/2-1} logged, the sink shadow journal
// equal to that set, and the resume retransmitting exactly the rest.
TEST(Resume, MidFileFaultRetransmitsExactlyTheMissingBlocks) {
  TempDir dir("rec-midfile");
  const uint64_t blocks = 1024;
  auto manifest = make_dataset(dir / "src", {blocks * kObj}, kObj);
  auto cfg = endpoint_cfg(dir / "ft", /*slots=*/1, /*workers=*/1);

  // Shadow journal: every positional write the sink performs.
  std::set<uint64_t> journal;
  std::mutex mu;
  auto [source_end, sink_end] = make_stream_pair();
  TransferStats sink_stats;
  std::thread sink([&, stream = std::move(sink_end)]() mutable {
    BufferPool pool(cfg.object_size, cfg.slot_count);
    SinkOptions opts;
    opts.io_workers = 1;
    opts.before_write = [&](uint32_t, uint64_t k) {
      std::lock_guard lk(mu);
      journal.insert(k);
    };
    sink_stats = run_sink(*stream, dir / "dst", pool, opts);
  });
  TransferPlan plan(cfg.object_size);
  BufferPool pool(cfg.object_size, cfg.slot_count);
  FtLogger logger(cfg.log, cfg.object_size);
  SourceOptions opts;
  opts.io_workers = 1;
  opts.fault_at = 0.5;
  SessionPin pin;
  pin.session_id = 777;
  pin.manifest_checksum = manifest_checksum(manifest);
  pin.object_size = manifest.object_size;
  pin.mechanism = "file";
  pin.method = "bit64";
  pin.transaction_size = 4;
  write_session_pin(cfg.log.ft_dir, pin);
  opts.session_id = pin.session_id;
  auto stats = run_source(manifest, plan, pool, logger, *source_end, opts);
  source_end->shutdown();
  sink.join();
  ASSERT_TRUE(stats.faulted);

  std::set<uint64_t> expected;
  for (uint64_t k = 0; k < blocks / 2; ++k) expected.insert(k);
  EXPECT_EQ(journal, expected);

  FtLogger probe(cfg.log, cfg.object_size);
  auto logged = probe.load_completed(manifest.files[0]);
  EXPECT_EQ(logged.count(), blocks / 2);

  auto resumed = run_session_pair(manifest, cfg, dir / "dst", true, std::nullopt);
  ASSERT_TRUE(resumed.source.clean);
  EXPECT_EQ(resumed.source.blocks_sent, blocks / 2);
  EXPECT_TRUE(verify_dataset(manifest.root, (dir / "dst").string(), manifest).ok());
  EXPECT_FALSE(fs::exists(cfg.log.ft_dir / kSessionPinName));
  EXPECT_EQ(measure_log_space(cfg.log.ft_dir), 0u);
}

TEST(Resume, FaultRightAfterFinalizeKeepsSinkCopyIntact) {
  // Two files transfer serially; the fault fires on the first sync of file
  // B, immediately after file A's log entry was finalized away. A's sink
  // copy must already digest equal to the source.
  TempDir dir("rec-finalize");
  LayoutPolicy policy;
  policy.ost_pool = {0};  // one OST serializes the two files end to end
  auto manifest = make_dataset(dir / "src", {8 * kObj, 8 * kObj}, kObj, policy);
  auto cfg = endpoint_cfg(dir / "ft", 1, 1);
  double fault_at = 9.0 / 16.0;
  auto faulted = run_session_pair(manifest, cfg, dir / "dst", false, fault_at);
  ASSERT_TRUE(faulted.source.faulted);

  FtLogger probe(cfg.log, cfg.object_size);
  EXPECT_EQ(probe.load_completed(manifest.files[0]).count(), 0u);  // finalized
  EXPECT_EQ(sha256_file(dir / "src/f000.bin"), sha256_file(dir / "dst/f000.bin"));

  auto resumed = run_session_pair(manifest, cfg, dir / "dst", true, std::nullopt);
  ASSERT_TRUE(resumed.source.clean);
  EXPECT_TRUE(verify_dataset(manifest.root, (dir / "dst").string(), manifest).ok());
}

TEST(Resume, NoFaultRerunSkipsEverything) {
  TempDir dir("rec-rerun");
  auto manifest = make_dataset(dir / "src", {4 * kObj, 4 * kObj}, kObj);
  auto cfg = endpoint_cfg(dir / "ft");
  auto first = run_session_pair(manifest, cfg, dir / "dst", false, std::nullopt);
  ASSERT_TRUE(first.source.clean);
  auto second = run_session_pair(manifest, cfg, dir / "dst", false, std::nullopt);
  ASSERT_TRUE(second.source.clean);
  EXPECT_EQ(second.source.files_skipped, 2u);
  EXPECT_EQ(second.source.blocks_sent, 0u);
}

TEST(Resume, TwoConsecutiveFaultsStillConverge) {
  TempDir dir("rec-twofaults");
  auto manifest = make_dataset(dir / "src", {32 * kObj, 32 * kObj}, kObj);
  auto cfg = endpoint_cfg(dir / "ft", 8);
  auto f1 = run_session_pair(manifest, cfg, dir / "dst", false, 0.25);
  ASSERT_TRUE(f1.source.faulted);
  auto f2 = run_session_pair(manifest, cfg, dir / "dst", true, 0.25);
  ASSERT_TRUE(f2.source.faulted);
  auto done = run_session_pair(manifest, cfg, dir / "dst", true, std::nullopt);
  ASSERT_TRUE(done.source.clean);
  EXPECT_TRUE(verify_dataset(manifest.root, (dir / "dst").string(), manifest).ok());

  uint64_t sent = f1.source.blocks_sent + f2.source.blocks_sent + done.source.blocks_sent;
  EXPECT_LE(sent, manifest.total_objects() + 2ull * cfg.slot_count);
}

}  // namespace
