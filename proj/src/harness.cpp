#include "oxfer/harness.hpp"

#include <sys/statvfs.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <ostream>
#include <random>
#include <thread>

#include "oxfer/errors.hpp"
#include "oxfer/log.hpp"
#include "oxfer/recovery.hpp"
#include "oxfer/wire.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace oxfer {

WorkloadSpec desk_workload(WorkloadKind kind, uint64_t seed) {
  WorkloadSpec spec;
  spec.kind = kind;
  spec.seed = seed;
  if (kind == WorkloadKind::kSmall) {
    spec.file_count = 500;
    spec.file_size = 1ull << 20;
  } else {
    spec.file_count = 8;
    spec.file_size = 64ull << 20;
  }
  return spec;
}

WorkloadSpec scaled_workload(WorkloadKind kind, double scale, uint64_t file_size_override,
                             uint64_t seed) {
  if (scale <= 0) throw ConfigError("workload scale must be positive");
  WorkloadSpec spec;
  spec.kind = kind;
  spec.seed = seed;
  uint64_t base_count = kind == WorkloadKind::kSmall ? 10000 : 100;
  spec.file_count = std::max<uint64_t>(1, static_cast<uint64_t>(std::llround(base_count * scale)));
  spec.file_size = file_size_override ? file_size_override
                                      : (kind == WorkloadKind::kSmall ? 1ull << 20 : 1ull << 30);
  return spec;
}

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

void gen_workload(const WorkloadSpec& spec, const fs::path& out_dir) {
  if (spec.file_count == 0 || spec.file_size == 0)
    throw ConfigError("workload needs positive file count and size");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create workload dir: " + out_dir.string());

  struct statvfs vst{};
  if (::statvfs(out_dir.c_str(), &vst) == 0) {
    uint64_t avail = static_cast<uint64_t>(vst.f_bavail) * vst.f_frsize;
    uint64_t needed = spec.file_count * spec.file_size;
    if (needed > avail)
      throw ConfigError("insufficient disk space for workload: need " + std::to_string(needed) +
                        " bytes, " + std::to_string(avail) + " available");
  }

  std::vector<uint64_t> buf((1 << 20) / 8);
  int digits = spec.file_count > 100000 ? 7 : 5;
  for (uint64_t i = 0; i < spec.file_count; ++i) {
    char name[32];
    snprintf(name, sizeof(name), "file_%0*llu.bin", digits, static_cast<unsigned long long>(i));
    fs::path p = out_dir / name;
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write workload file: " + p.string());
    uint64_t state = splitmix64(spec.seed ^ splitmix64(i + 1));
    uint64_t remaining = spec.file_size;
    while (remaining > 0) {
      uint64_t chunk = std::min<uint64_t>(remaining, buf.size() * 8);
      for (uint64_t w = 0; w < (chunk + 7) / 8; ++w) {
        state = splitmix64(state);
        buf[w] = state;
      }
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(chunk));
      remaining -= chunk;
    }
    if (!out) throw IoError("short write on workload file: " + p.string());
  }
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

ordered_json config_echo(const EndpointConfig& config) {
  ordered_json j;
  j["ft"] = config.log.enabled ? mechanism_name(config.log.mechanism) : "off";
  j["method"] = config.log.enabled ? method_name(config.log.method) : "-";
  j["txn_size"] = config.log.transaction_size;
  j["object_size"] = config.object_size;
  j["slots"] = config.slot_count;
  j["workers"] = config.io_workers;
  j["fsync"] = config.log.fsync_records;
  return j;
}

std::string next_run_id(const char* tag) {
  static std::atomic<uint64_t> seq{0};
  return std::string(tag) + "-" + std::to_string(seq.fetch_add(1));
}

}  // namespace

void MetricsWriter::run_record(const RunRecord& rec, const EndpointConfig& config) {
  if (!out_) return;
  ordered_json j;
  j["run_id"] = rec.run_id;
  j["phase"] = rec.phase;
  j["config"] = config_echo(config);
  j["seconds"] = rec.seconds;
  j["bytes"] = rec.bytes;
  j["blocks_sent"] = rec.blocks_sent;
  j["blocks_synced"] = rec.blocks_synced;
  j["blocks_retx"] = rec.blocks_retx;
  j["log_space_peak"] = rec.log_space_peak;
  j["files_skipped"] = rec.files_skipped;
  j["faulted"] = rec.faulted;
  j["clean"] = rec.clean;
  if (!rec.error.empty()) j["error"] = rec.error;
  (*out_) << j.dump() << "\n";
  out_->flush();
}

void MetricsWriter::summary_record(const RecoveryReport& report, const EndpointConfig& config) {
  if (!out_) return;
  ordered_json j;
  j["run_id"] = report.run_id;
  j["phase"] = "summary";
  j["config"] = config_echo(config);
  j["tbf_seconds"] = report.tbf_seconds;
  j["taf_seconds"] = report.taf_seconds;
  j["tt_seconds"] = report.tt_seconds;
  j["er_seconds"] = report.er_seconds;
  j["retransmitted_blocks"] = report.retransmitted_blocks;
  j["log_space_peak"] = report.log_space_peak;
  j["resume_files_skipped"] = report.resume_files_skipped;
  j["ok"] = report.ok;
  if (!report.error.empty()) j["error"] = report.error;
  (*out_) << j.dump() << "\n";
  out_->flush();
}

// ---------------------------------------------------------------------------
// In-process sessions

SessionResult run_session_pair(const DatasetManifest& manifest, const EndpointConfig& config,
                               const fs::path& dest_root, bool resume,
                               std::optional<double> fault_at, TraceFn source_trace,
                               TraceFn sink_trace) {
  auto [source_end, sink_end] = make_stream_pair();
  SessionResult result;
  std::exception_ptr sink_error;

  std::thread sink_thread([&, stream = std::move(sink_end)]() mutable {
    try {
      BufferPool pool(config.object_size, config.slot_count);
      SinkOptions opts;
      opts.io_workers = config.io_workers;
      opts.trace = sink_trace;
      result.sink = run_sink(*stream, dest_root, pool, opts);
    } catch (...) {
      sink_error = std::current_exception();
    }
  });

  try {
    SourceOptions opts;
    opts.io_workers = config.io_workers;
    opts.file_window = config.file_window;
    opts.resume = resume;
    opts.congestion_ms = config.congestion_ms;
    opts.fault_at = fault_at;
    opts.fault_action = FaultAction::kStopLoops;
    opts.trace = source_trace;
    result.source = run_source_session(manifest, config.log, *source_end, opts,
                                       config.slot_count);
  } catch (...) {
    source_end->shutdown();
    sink_thread.join();
    throw;
  }
  source_end->shutdown();
  sink_thread.join();
  if (sink_error) std::rethrow_exception(sink_error);
  return result;
}

namespace {

RunRecord record_of(const std::string& run_id, const std::string& phase,
                    const TransferStats& stats) {
  RunRecord rec;
  rec.run_id = run_id;
  rec.phase = phase;
  rec.seconds = stats.seconds;
  rec.bytes = stats.bytes_synced;
  rec.blocks_sent = stats.blocks_sent;
  rec.blocks_synced = stats.blocks_synced;
  rec.blocks_retx = stats.blocks_retx;
  rec.log_space_peak = stats.log_space_peak;
  rec.files_skipped = stats.files_skipped;
  rec.faulted = stats.faulted;
  rec.clean = stats.clean;
  rec.error = stats.error;
  return rec;
}

void remove_tree(const fs::path& p) {
  std::error_code ec;
  fs::remove_all(p, ec);
}

}  // namespace

RecoveryReport run_experiment(const DatasetManifest& manifest, const EndpointConfig& config,
                              std::optional<double> fault_at, const fs::path& scratch,
                              MetricsWriter* metrics) {
  RecoveryReport report;
  report.run_id = next_run_id("exp");
  fs::path baseline_dest = scratch / "baseline_dest";
  fs::path fault_dest = scratch / "fault_dest";
  fs::path ft_baseline = scratch / "ft_baseline";
  fs::path ft_fault = scratch / "ft_fault";

  auto emit = [&](const RunRecord& rec) {
    report.runs.push_back(rec);
    if (metrics) metrics->run_record(rec, config);
  };

  try {
    // Fault-free reference run (tt).
    remove_tree(baseline_dest);
    remove_tree(ft_baseline);
    EndpointConfig base_cfg = config;
    base_cfg.log.ft_dir = ft_baseline;
    auto base = run_session_pair(manifest, base_cfg, baseline_dest, false, std::nullopt);
    report.tt_seconds = base.source.seconds;
    emit(record_of(report.run_id, "baseline", base.source));
    if (!base.source.clean) throw ProtocolError("baseline run did not complete: " +
                                                base.source.error);
    remove_tree(baseline_dest);
    remove_tree(ft_baseline);

    if (!fault_at) {
      // No fault policy: er and taf are zero by definition.
      report.tbf_seconds = report.tt_seconds;
      report.taf_seconds = 0;
      report.er_seconds = 0;
      report.log_space_peak = base.source.log_space_peak;
      report.ok = true;
      if (metrics) metrics->summary_record(report, config);
      return report;
    }

    // Faulted run (tbf), then resume (taf) against the same dest and logs.
    remove_tree(fault_dest);
    remove_tree(ft_fault);
    EndpointConfig fault_cfg = config;
    fault_cfg.log.ft_dir = ft_fault;
    auto faulted = run_session_pair(manifest, fault_cfg, fault_dest, false, fault_at);
    report.tbf_seconds = faulted.source.seconds;
    emit(record_of(report.run_id, "fault", faulted.source));
    if (!faulted.source.faulted)
      throw ProtocolError("fault did not fire (transfer completed first)");

    auto resumed = run_session_pair(manifest, fault_cfg, fault_dest, true, std::nullopt);
    report.taf_seconds = resumed.source.seconds;
    emit(record_of(report.run_id, "resume", resumed.source));
    if (!resumed.source.clean)
      throw ProtocolError("resume did not complete: " + resumed.source.error);

    report.er_seconds = report.tbf_seconds + report.taf_seconds - report.tt_seconds;
    uint64_t sent_total = faulted.source.blocks_sent + resumed.source.blocks_sent;
    uint64_t objects = manifest.total_objects();
    report.retransmitted_blocks = sent_total > objects ? sent_total - objects : 0;
    report.log_space_peak =
        std::max(faulted.source.log_space_peak, resumed.source.log_space_peak);
    report.resume_files_skipped = resumed.source.files_skipped;
    report.resume_blocks_sent = resumed.source.blocks_sent;

    auto verify = verify_dataset(manifest.root, fault_dest, manifest);
    report.verify_mismatches = verify.mismatches.size();
    if (!verify.ok()) {
      report.error = "verification found " + std::to_string(verify.mismatches.size()) +
                     " mismatched file(s)";
      report.ok = false;
    } else {
      report.ok = true;
    }
    remove_tree(fault_dest);
    remove_tree(ft_fault);
  } catch (const std::exception& e) {
    report.error = e.what();
    report.ok = false;
  }
  if (metrics) metrics->summary_record(report, config);
  return report;
}

std::vector<OverheadRow> overhead_matrix(const DatasetManifest& manifest,
                                         const EndpointConfig& base, uint32_t runs_per_config,
                                         const fs::path& scratch, MetricsWriter* metrics) {
  std::vector<OverheadRow> rows;
  fs::path dest = scratch / "matrix_dest";
  fs::path ft_dir = scratch / "matrix_ft";

  auto run_config = [&](const EndpointConfig& cfg, OverheadRow row) {
    double total = 0;
    uint64_t peak = 0;
    for (uint32_t r = 0; r < runs_per_config; ++r) {
      remove_tree(dest);
      remove_tree(ft_dir);
      auto res = run_session_pair(manifest, cfg, dest, false, std::nullopt);
      if (!res.source.clean)
        throw ProtocolError("matrix run failed: " + res.source.error);
      total += res.source.seconds;
      peak = std::max(peak, res.source.log_space_peak);
      RunRecord rec = record_of(next_run_id("matrix"), "run", res.source);
      if (metrics) metrics->run_record(rec, cfg);
    }
    remove_tree(dest);
    remove_tree(ft_dir);
    row.runs = runs_per_config;
    row.mean_seconds = total / runs_per_config;
    row.log_space_peak = peak;
    return row;
  };

  // ft-off reference first.
  EndpointConfig off_cfg = base;
  off_cfg.log.enabled = false;
  off_cfg.log.ft_dir = ft_dir;
  OverheadRow off_row;
  off_row.ft_enabled = false;
  rows.push_back(run_config(off_cfg, off_row));
  double off_mean = rows[0].mean_seconds;
  rows[0].overhead_pct = 0;

  for (LogMechanism mech :
       {LogMechanism::kFile, LogMechanism::kTransaction, LogMechanism::kUniversal}) {
    for (LogMethod method : {LogMethod::kChar, LogMethod::kEnc, LogMethod::kInt,
                             LogMethod::kBinary, LogMethod::kBit8, LogMethod::kBit64}) {
      EndpointConfig cfg = base;
      cfg.log.enabled = true;
      cfg.log.mechanism = mech;
      cfg.log.method = method;
      cfg.log.ft_dir = ft_dir;
      OverheadRow row;
      row.ft_enabled = true;
      row.mechanism = mech;
      row.method = method;
      row = run_config(cfg, row);
      row.overhead_pct = off_mean > 0 ? (row.mean_seconds - off_mean) / off_mean * 100.0 : 0;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string overhead_matrix_csv(const std::vector<OverheadRow>& rows) {
  std::string csv = "mechanism,method,runs,mean_seconds,overhead_pct,log_space_peak_bytes\n";
  char line[160];
  for (const auto& r : rows) {
    snprintf(line, sizeof(line), "%s,%s,%u,%.6f,%.3f,%llu\n",
             r.ft_enabled ? mechanism_name(r.mechanism) : "off",
             r.ft_enabled ? method_name(r.method) : "-", r.runs, r.mean_seconds, r.overhead_pct,
             static_cast<unsigned long long>(r.log_space_peak));
    csv += line;
  }
  return csv;
}

}  // namespace oxfer
