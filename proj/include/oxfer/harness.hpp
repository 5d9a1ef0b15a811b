#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oxfer/ftlog.hpp"
#include "oxfer/layout.hpp"
#include "oxfer/transport.hpp"

namespace oxfer {

enum class WorkloadKind { kSmall, kBig };

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::kSmall;
  uint64_t file_count = 0;
  uint64_t file_size = 0;
  uint64_t seed = 42;
};

// Desk-scale stand-ins for the reference workloads: small = 500 x 1 MiB
// (file size == object size), big = 8 x 64 MiB.
WorkloadSpec desk_workload(WorkloadKind kind, uint64_t seed = 42);

// Scales the full-size workloads (10000 x 1 MiB / 100 x 1 GiB) by `scale`
// on file count; big file size can be overridden (0 keeps 1 GiB).
WorkloadSpec scaled_workload(WorkloadKind kind, double scale, uint64_t file_size_override = 0,
                             uint64_t seed = 42);

// Populates out_dir with spec.file_count files of pseudorandom content;
// the same seed always produces the same bytes (and digests).
void gen_workload(const WorkloadSpec& spec, const std::filesystem::path& out_dir);

// Everything one endpoint pair needs for a run.
struct EndpointConfig {
  uint64_t object_size = kDefaultObjectSize;
  uint32_t slot_count = kDefaultSlotCount;
  uint32_t io_workers = kDefaultIoWorkers;
  uint32_t file_window = kDefaultFileWindow;
  LayoutPolicy layout;
  FtLogConfig log;  // ft_dir is managed per-run by the harness
  std::map<OstId, uint32_t> congestion_ms;
};

struct RunRecord {
  std::string run_id;
  std::string phase;  // run | baseline | fault | resume | summary
  double seconds = 0;
  uint64_t bytes = 0;
  uint64_t blocks_sent = 0;
  uint64_t blocks_synced = 0;
  uint64_t blocks_retx = 0;
  uint64_t log_space_peak = 0;
  uint64_t files_skipped = 0;
  bool faulted = false;
  bool clean = false;
  std::string error;
};

// The per-experiment outcome: wall-clock before/after fault, the matching
// fault-free time, and the derived recovery cost er = tbf + taf - tt.
struct RecoveryReport {
  std::string run_id;
  double tbf_seconds = 0;
  double taf_seconds = 0;
  double tt_seconds = 0;
  double er_seconds = 0;
  uint64_t retransmitted_blocks = 0;
  uint64_t log_space_peak = 0;
  uint64_t resume_files_skipped = 0;
  uint64_t resume_blocks_sent = 0;
  uint64_t verify_mismatches = 0;
  bool ok = false;
  std::string error;
  std::vector<RunRecord> runs;
};

// JSON-lines metrics stream: one record per run plus one summary record
// per experiment, even when the experiment fails.
class MetricsWriter {
 public:
  explicit MetricsWriter(std::ostream* out) : out_(out) {}
  void run_record(const RunRecord& rec, const EndpointConfig& config);
  void summary_record(const RecoveryReport& report, const EndpointConfig& config);

 private:
  std::ostream* out_;
};

struct SessionResult {
  TransferStats source;
  TransferStats sink;
};

// One in-process transfer over a socketpair: the sink runs on a helper
// thread, the source on the caller. A fault tears the source down without
// BYE; the sink survives it.
SessionResult run_session_pair(const DatasetManifest& manifest, const EndpointConfig& config,
                               const std::filesystem::path& dest_root, bool resume,
                               std::optional<double> fault_at, TraceFn source_trace = nullptr,
                               TraceFn sink_trace = nullptr);

// Baseline run, faulted run, resume, verification; emits one summary
// record whatever happens. `scratch` holds the dest trees and ft dirs and
// is cleaned up per phase.
RecoveryReport run_experiment(const DatasetManifest& manifest, const EndpointConfig& config,
                              std::optional<double> fault_at,
                              const std::filesystem::path& scratch, MetricsWriter* metrics);

struct OverheadRow {
  bool ft_enabled = false;
  LogMechanism mechanism = LogMechanism::kFile;
  LogMethod method = LogMethod::kBit64;
  uint32_t runs = 0;
  double mean_seconds = 0;
  double overhead_pct = 0;  // vs the ft-off row
  uint64_t log_space_peak = 0;
};

// ft-off baseline plus all mechanism x method pairs, `runs_per_config`
// fault-free runs each.
std::vector<OverheadRow> overhead_matrix(const DatasetManifest& manifest,
                                         const EndpointConfig& base, uint32_t runs_per_config,
                                         const std::filesystem::path& scratch,
                                         MetricsWriter* metrics);

std::string overhead_matrix_csv(const std::vector<OverheadRow>& rows);

}  // namespace oxfer
