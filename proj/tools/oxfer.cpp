// Command-line front end: run a sink, run or resume a source transfer,
// generate workloads, run experiments, verify datasets.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "oxfer/errors.hpp"
#include "oxfer/harness.hpp"
#include "oxfer/layout.hpp"
#include "oxfer/log.hpp"
#include "oxfer/recovery.hpp"
#include "oxfer/transport.hpp"
#include "oxfer/wire.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace oxfer;

namespace {

struct Address {
  std::string host = "127.0.0.1";
  uint16_t port = 9876;
};

Address parse_address(const std::string& s) {
  auto pos = s.rfind(':');
  if (pos == std::string::npos) throw ConfigError("address must be host:port, got " + s);
  Address a;
  a.host = s.substr(0, pos);
  int port = std::stoi(s.substr(pos + 1));
  if (port <= 0 || port > 65535) throw ConfigError("invalid port in " + s);
  a.port = static_cast<uint16_t>(port);
  return a;
}

std::map<OstId, uint32_t> parse_congestion(const std::string& s) {
  std::map<OstId, uint32_t> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto pos = item.find(':');
    if (pos == std::string::npos)
      throw ConfigError("congestion entries must be ost:ms, got " + item);
    out[static_cast<OstId>(std::stoul(item.substr(0, pos)))] =
        static_cast<uint32_t>(std::stoul(item.substr(pos + 1)));
  }
  return out;
}

fs::path default_ft_dir() {
  const char* home = getenv("OXFER_HOME");
  if (!home) home = getenv("HOME");
  return fs::path(home ? home : ".") / ".ftlads";
}

struct SendFlags {
  std::string root;
  std::string manifest_path;
  std::string connect = "127.0.0.1:9876";
  std::string ft = "file";
  std::string method = "bit64";
  uint32_t txn_size = 4;
  std::string ft_dir;
  uint32_t workers = kDefaultIoWorkers;
  uint64_t object_size = kDefaultObjectSize;
  uint32_t slots = kDefaultSlotCount;
  uint32_t file_window = kDefaultFileWindow;
  uint64_t stripe_size = kDefaultObjectSize;
  uint32_t stripe_count = 1;
  uint32_t ost_count = kDefaultOstPoolSize;
  bool no_fsync = false;
  bool resume = false;
  std::string congestion;
  double fault_at = 0;
  std::string metrics_out;
  std::string manifest_out = "manifest.json";
  bool print_config = false;
};

FtLogConfig log_config_from(const std::string& ft, const std::string& method, uint32_t txn_size,
                            const std::string& ft_dir, bool no_fsync) {
  FtLogConfig cfg;
  if (ft == "off") {
    cfg.enabled = false;
  } else {
    auto mech = parse_mechanism(ft);
    if (!mech) throw ConfigError("unknown --ft mechanism: " + ft);
    cfg.mechanism = *mech;
  }
  auto m = parse_method(method);
  if (!m) throw ConfigError("unknown --method: " + method);
  cfg.method = *m;
  cfg.transaction_size = txn_size;
  cfg.ft_dir = ft_dir.empty() ? default_ft_dir() : fs::path(ft_dir);
  cfg.fsync_records = !no_fsync;
  return cfg;
}

ordered_json effective_config_json(const SendFlags& f, const FtLogConfig& log) {
  ordered_json j;
  j["root"] = f.root;
  j["connect"] = f.connect;
  j["ft"] = log.enabled ? mechanism_name(log.mechanism) : "off";
  j["method"] = method_name(log.method);
  j["txn_size"] = log.transaction_size;
  j["ft_dir"] = log.ft_dir.string();
  j["fsync"] = log.fsync_records;
  j["workers"] = f.workers;
  j["object_size"] = f.object_size;
  j["slots"] = f.slots;
  j["file_window"] = f.file_window;
  j["stripe_size"] = f.stripe_size;
  j["stripe_count"] = f.stripe_count;
  j["ost_count"] = f.ost_count;
  j["resume"] = f.resume;
  j["congestion"] = f.congestion;
  j["fault_at"] = f.fault_at;
  j["metrics_out"] = f.metrics_out;
  j["manifest_out"] = f.manifest_out;
  return j;
}

int cmd_send(const SendFlags& f) {
  FtLogConfig log = log_config_from(f.ft, f.method, f.txn_size, f.ft_dir, f.no_fsync);
  if (f.print_config) {
    std::cout << effective_config_json(f, log).dump(2) << "\n";
    return kExitOk;
  }
  if (f.root.empty() && f.manifest_path.empty())
    throw ConfigError("send needs --root or --manifest");

  DatasetManifest manifest;
  if (!f.manifest_path.empty()) {
    manifest = load_manifest(f.manifest_path);
  } else {
    LayoutPolicy policy;
    policy.stripe_size = f.stripe_size;
    policy.stripe_count = f.stripe_count;
    for (uint32_t i = 0; i < f.ost_count; ++i) policy.ost_pool.push_back(i);
    manifest = build_manifest(f.root, f.object_size, policy);
  }
  if (!f.manifest_out.empty()) save_manifest(manifest, f.manifest_out);

  Address addr = parse_address(f.connect);
  auto stream = tcp_connect(addr.host, addr.port);

  SourceOptions opts;
  opts.io_workers = f.workers;
  opts.file_window = f.file_window;
  opts.resume = f.resume;
  opts.congestion_ms = parse_congestion(f.congestion);
  if (f.fault_at > 0) {
    opts.fault_at = f.fault_at;
    opts.fault_action = FaultAction::kExitProcess;
  }
  TransferStats stats = run_source_session(manifest, log, *stream, opts, f.slots);

  if (!f.metrics_out.empty()) {
    std::ofstream out(f.metrics_out, std::ios::app);
    MetricsWriter mw(&out);
    EndpointConfig echo;
    echo.object_size = f.object_size;
    echo.slot_count = f.slots;
    echo.io_workers = f.workers;
    echo.log = log;
    RunRecord rec;
    rec.run_id = "send";
    rec.phase = f.resume ? "resume" : "run";
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
    mw.run_record(rec, echo);
  }

  fprintf(stderr,
          "transfer %s: %llu files (%llu skipped), %llu blocks sent, %llu synced, %.3fs\n",
          stats.clean ? "complete" : "incomplete",
          static_cast<unsigned long long>(stats.files_total),
          static_cast<unsigned long long>(stats.files_skipped),
          static_cast<unsigned long long>(stats.blocks_sent),
          static_cast<unsigned long long>(stats.blocks_synced), stats.seconds);
  if (!stats.clean) {
    fprintf(stderr, "error: %s\n", stats.error.c_str());
    return kExitProtocol;
  }
  return kExitOk;
}

int cmd_recv(const std::string& listen, const std::string& dest, uint64_t object_size,
             uint32_t slots, uint32_t workers, uint32_t max_sessions,
             const std::string& metrics_out) {
  Address addr = parse_address(listen);
  TcpListener listener(addr.host, addr.port);
  fprintf(stderr, "listening on %s:%u, dest %s\n", addr.host.c_str(), listener.port(),
          dest.c_str());
  std::ofstream metrics_file;
  if (!metrics_out.empty()) metrics_file.open(metrics_out, std::ios::app);
  MetricsWriter mw(metrics_file.is_open() ? &metrics_file : nullptr);

  uint32_t session = 0;
  while (max_sessions == 0 || session < max_sessions) {
    auto stream = listener.accept();
    ++session;
    try {
      BufferPool pool(object_size, slots);
      SinkOptions opts;
      opts.io_workers = workers;
      TransferStats stats = run_sink(*stream, dest, pool, opts);
      fprintf(stderr, "session %u %s: %llu blocks written, %.3fs\n", session,
              stats.clean ? "complete" : "interrupted",
              static_cast<unsigned long long>(stats.blocks_written), stats.seconds);
      EndpointConfig echo;
      echo.object_size = object_size;
      echo.slot_count = slots;
      echo.io_workers = workers;
      echo.log.enabled = false;
      RunRecord rec;
      rec.run_id = "recv-" + std::to_string(session);
      rec.phase = "sink";
      rec.seconds = stats.seconds;
      rec.bytes = stats.bytes_written;
      rec.clean = stats.clean;
      rec.error = stats.error;
      mw.run_record(rec, echo);
    } catch (const std::exception& e) {
      fprintf(stderr, "session %u failed: %s\n", session, e.what());
    }
  }
  return kExitOk;
}

int cmd_gen(const std::string& kind, const std::string& out, double scale, uint64_t files,
            uint64_t file_size, uint64_t seed) {
  WorkloadKind k;
  if (kind == "small")
    k = WorkloadKind::kSmall;
  else if (kind == "big")
    k = WorkloadKind::kBig;
  else
    throw ConfigError("--kind must be small or big");

  WorkloadSpec spec = scale > 0 ? scaled_workload(k, scale, file_size, seed) : desk_workload(k, seed);
  if (files) spec.file_count = files;
  if (file_size) spec.file_size = file_size;
  gen_workload(spec, out);
  fprintf(stderr, "generated %llu x %llu-byte files under %s (seed %llu)\n",
          static_cast<unsigned long long>(spec.file_count),
          static_cast<unsigned long long>(spec.file_size), out.c_str(),
          static_cast<unsigned long long>(spec.seed));
  return kExitOk;
}

int cmd_verify(const std::string& src, const std::string& dst, const std::string& manifest_path,
               uint64_t object_size) {
  DatasetManifest manifest;
  if (!manifest_path.empty()) {
    manifest = load_manifest(manifest_path);
  } else {
    LayoutPolicy policy;
    manifest = build_manifest(src, object_size, policy);
  }
  VerifyReport report = verify_dataset(src, dst, manifest);
  for (const auto& f : report.mismatches) {
    const char* what = f.status == DigestStatus::kMismatch     ? "mismatch"
                       : f.status == DigestStatus::kMissingSink ? "missing at sink"
                                                                : "missing at source";
    fprintf(stderr, "%s: %s\n", what, f.path.c_str());
  }
  fprintf(stderr, "verified %zu files, %zu mismatched\n", report.files.size(),
          report.mismatches.size());
  return report.ok() ? kExitOk : kExitVerifyMismatch;
}

int cmd_experiment(const std::string& root, const std::string& scratch, const std::string& ft,
                   const std::string& method, uint32_t txn_size, uint64_t object_size,
                   uint32_t slots, uint32_t workers, bool no_fsync,
                   const std::string& fault_list, const std::string& congestion, bool matrix,
                   uint32_t runs, const std::string& metrics_out, const std::string& csv_out) {
  LayoutPolicy policy;
  DatasetManifest manifest = build_manifest(root, object_size, policy);

  EndpointConfig cfg;
  cfg.object_size = object_size;
  cfg.slot_count = slots;
  cfg.io_workers = workers;
  cfg.log = log_config_from(ft == "off" ? "off" : ft, method, txn_size, "", no_fsync);
  cfg.congestion_ms = parse_congestion(congestion);

  std::ofstream metrics_file;
  if (!metrics_out.empty()) metrics_file.open(metrics_out, std::ios::app);
  MetricsWriter mw(metrics_file.is_open() ? &metrics_file : nullptr);

  fs::create_directories(scratch);

  if (matrix) {
    auto rows = overhead_matrix(manifest, cfg, runs, scratch, &mw);
    std::string csv = overhead_matrix_csv(rows);
    if (!csv_out.empty()) {
      std::ofstream out(csv_out, std::ios::trunc);
      out << csv;
    }
    std::cout << csv;
    return kExitOk;
  }

  std::vector<std::optional<double>> fault_points;
  if (fault_list.empty()) {
    fault_points.push_back(std::nullopt);
  } else {
    std::stringstream ss(fault_list);
    std::string item;
    while (std::getline(ss, item, ',')) fault_points.push_back(std::stod(item));
  }

  bool all_ok = true;
  bool verify_failed = false;
  for (auto fp : fault_points) {
    auto report = run_experiment(manifest, cfg, fp, scratch, &mw);
    printf("fault=%s tt=%.3fs tbf=%.3fs taf=%.3fs er=%.3fs retx=%llu peak_log=%llu %s\n",
           fp ? std::to_string(*fp).c_str() : "none", report.tt_seconds, report.tbf_seconds,
           report.taf_seconds, report.er_seconds,
           static_cast<unsigned long long>(report.retransmitted_blocks),
           static_cast<unsigned long long>(report.log_space_peak),
           report.ok ? "ok" : ("FAILED: " + report.error).c_str());
    if (!report.ok) {
      all_ok = false;
      if (report.verify_mismatches) verify_failed = true;
    }
  }
  if (all_ok) return kExitOk;
  return verify_failed ? kExitVerifyMismatch : kExitProtocol;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layout-aware resumable object transfer"};
  app.set_config("--config", "", "read defaults from a config file");
  app.require_subcommand(1);
  bool verbose = false;
  bool debug = false;
  app.add_flag("-v,--verbose", verbose, "info-level logging");
  app.add_flag("--debug", debug, "debug-level logging");

  // send
  SendFlags sf;
  auto* send = app.add_subcommand("send", "run or resume a source transfer");
  send->add_option("--root", sf.root, "dataset root directory");
  send->add_option("--manifest", sf.manifest_path, "use a saved manifest instead of scanning");
  send->add_option("--connect", sf.connect, "sink address host:port")->capture_default_str();
  send->add_option("--ft", sf.ft, "logger mechanism: file|txn|universal|off")
      ->capture_default_str();
  send->add_option("--method", sf.method, "logger method: char|enc|int|binary|bit8|bit64")
      ->capture_default_str();
  send->add_option("--txn-size", sf.txn_size, "files per transaction log")->capture_default_str();
  send->add_option("--ft-dir", sf.ft_dir, "log directory (default ~/.ftlads)");
  send->add_option("--workers", sf.workers, "I/O worker threads")->capture_default_str();
  send->add_option("--object-size", sf.object_size, "transfer unit bytes")->capture_default_str();
  send->add_option("--slots", sf.slots, "staging buffer slots")->capture_default_str();
  send->add_option("--file-window", sf.file_window, "max files open at the sink")
      ->capture_default_str();
  send->add_option("--stripe-size", sf.stripe_size, "simulated stripe size")
      ->capture_default_str();
  send->add_option("--stripe-count", sf.stripe_count, "simulated stripe count")
      ->capture_default_str();
  send->add_option("--ost-count", sf.ost_count, "simulated OST pool size")->capture_default_str();
  send->add_flag("--no-fsync", sf.no_fsync, "skip per-record fsync (benchmarking only)");
  send->add_flag("--resume", sf.resume, "resume the pinned prior session");
  send->add_option("--congestion", sf.congestion, "per-OST delays, ost:ms[,ost:ms...]");
  send->add_option("--fault-at", sf.fault_at,
                   "inject a fault after this fraction of bytes synced (process exits)");
  send->add_option("--metrics-out", sf.metrics_out, "append JSON-lines metrics here");
  send->add_option("--manifest-out", sf.manifest_out, "write the manifest here")
      ->capture_default_str();
  send->add_flag("--print-config", sf.print_config, "dump the effective configuration and exit");

  // recv
  std::string listen = "127.0.0.1:9876";
  std::string dest;
  uint64_t recv_object_size = kDefaultObjectSize;
  uint32_t recv_slots = kDefaultSlotCount;
  uint32_t recv_workers = kDefaultIoWorkers;
  uint32_t max_sessions = 0;
  std::string recv_metrics;
  auto* recv = app.add_subcommand("recv", "run a sink endpoint");
  recv->add_option("--listen", listen, "listen address host:port")->capture_default_str();
  recv->add_option("--dest", dest, "destination root")->required();
  recv->add_option("--object-size", recv_object_size, "staging slot bytes")
      ->capture_default_str();
  recv->add_option("--slots", recv_slots, "staging buffer slots")->capture_default_str();
  recv->add_option("--workers", recv_workers, "I/O worker threads")->capture_default_str();
  recv->add_option("--max-sessions", max_sessions, "exit after N sessions (0 = forever)")
      ->capture_default_str();
  recv->add_option("--metrics-out", recv_metrics, "append JSON-lines metrics here");

  // gen
  std::string gen_kind;
  std::string gen_out;
  double gen_scale = 0;
  uint64_t gen_files = 0;
  uint64_t gen_file_size = 0;
  uint64_t gen_seed = 42;
  auto* gen = app.add_subcommand("gen", "generate a reproducible workload");
  gen->add_option("--kind", gen_kind, "small (1 MiB files) or big")->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--scale", gen_scale, "scale factor on the full workload file count");
  gen->add_option("--files", gen_files, "override file count");
  gen->add_option("--file-size", gen_file_size, "override file size in bytes");
  gen->add_option("--seed", gen_seed, "content seed")->capture_default_str();

  // verify
  std::string verify_src;
  std::string verify_dst;
  std::string verify_manifest;
  uint64_t verify_object_size = kDefaultObjectSize;
  auto* verify = app.add_subcommand("verify", "compare per-file digests of two trees");
  verify->add_option("--src", verify_src, "source root")->required();
  verify->add_option("--dst", verify_dst, "sink root")->required();
  verify->add_option("--manifest", verify_manifest, "manifest to verify against");
  verify->add_option("--object-size", verify_object_size, "object size when scanning src")
      ->capture_default_str();

  // experiment
  std::string exp_root;
  std::string exp_scratch;
  std::string exp_ft = "file";
  std::string exp_method = "bit64";
  uint32_t exp_txn = 4;
  uint64_t exp_object_size = kDefaultObjectSize;
  uint32_t exp_slots = kDefaultSlotCount;
  uint32_t exp_workers = kDefaultIoWorkers;
  bool exp_no_fsync = false;
  std::string exp_faults;
  std::string exp_congestion;
  bool exp_matrix = false;
  uint32_t exp_runs = 5;
  std::string exp_metrics;
  std::string exp_csv;
  auto* exp = app.add_subcommand("experiment", "fault/recovery and overhead measurements");
  exp->add_option("--root", exp_root, "source workload root")->required();
  exp->add_option("--scratch", exp_scratch, "scratch dir for dest trees and logs")->required();
  exp->add_option("--ft", exp_ft, "logger mechanism")->capture_default_str();
  exp->add_option("--method", exp_method, "logger method")->capture_default_str();
  exp->add_option("--txn-size", exp_txn, "files per transaction")->capture_default_str();
  exp->add_option("--object-size", exp_object_size, "transfer unit bytes")->capture_default_str();
  exp->add_option("--slots", exp_slots, "staging buffer slots")->capture_default_str();
  exp->add_option("--workers", exp_workers, "I/O worker threads")->capture_default_str();
  exp->add_flag("--no-fsync", exp_no_fsync, "skip per-record fsync");
  exp->add_option("--fault-at", exp_faults, "comma list of fault points, e.g. 0.2,0.4,0.6,0.8");
  exp->add_option("--congestion", exp_congestion, "per-OST delays, ost:ms[,...]");
  exp->add_flag("--matrix", exp_matrix, "run the mechanism x method overhead matrix");
  exp->add_option("--runs", exp_runs, "runs per matrix configuration")->capture_default_str();
  exp->add_option("--metrics-out", exp_metrics, "append JSON-lines metrics here");
  exp->add_option("--csv-out", exp_csv, "write the matrix CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  set_log_threshold(debug ? LogLevel::kDebug : verbose ? LogLevel::kInfo : LogLevel::kWarn);

  try {
    if (send->parsed()) return cmd_send(sf);
    if (recv->parsed())
      return cmd_recv(listen, dest, recv_object_size, recv_slots, recv_workers, max_sessions,
                      recv_metrics);
    if (gen->parsed())
      return cmd_gen(gen_kind, gen_out, gen_scale, gen_files, gen_file_size, gen_seed);
    if (verify->parsed())
      return cmd_verify(verify_src, verify_dst, verify_manifest, verify_object_size);
    if (exp->parsed())
      return cmd_experiment(exp_root, exp_scratch, exp_ft, exp_method, exp_txn, exp_object_size,
                            exp_slots, exp_workers, exp_no_fsync, exp_faults, exp_congestion,
                            exp_matrix, exp_runs, exp_metrics, exp_csv);
  } catch (const ConfigError& e) {
    fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ResumePinError& e) {
    fprintf(stderr, "resume error: %s\n", e.what());
    return kExitResumePin;
  } catch (const LogCorruptError& e) {
    fprintf(stderr, "log error: %s\n", e.what());
    return kExitInternal;
  } catch (const ProtocolError& e) {
    fprintf(stderr, "protocol error: %s\n", e.what());
    return kExitProtocol;
  } catch (const IoError& e) {
    fprintf(stderr, "io error: %s\n", e.what());
    return kExitProtocol;
  } catch (const std::exception& e) {
    fprintf(stderr, "error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitConfig;
}
