#include "oxfer/recovery.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <random>

#include "oxfer/errors.hpp"
#include "oxfer/log.hpp"
#include "oxfer/transport.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace oxfer {

Classification classify_file(FtLogger& logger, const FileSpec& file, bool sink_skip) {
  Classification c;
  c.completed = logger.load_completed(file);
  bool has_log = c.completed.count() > 0;
  if (sink_skip && !has_log) {
    c.status = FileStatus::kComplete;
  } else if (has_log) {
    if (sink_skip)
      OXFER_WARN("file %s: sink reports complete but a log entry exists; trusting the log",
                 file.path.c_str());
    c.status = FileStatus::kPartial;
  } else {
    c.status = FileStatus::kUntouched;
  }
  return c;
}

void write_session_pin(const fs::path& ft_dir, const SessionPin& pin) {
  std::error_code ec;
  fs::create_directories(ft_dir, ec);
  ordered_json j;
  j["session_id"] = pin.session_id;
  j["manifest_checksum"] = pin.manifest_checksum;
  j["config"] = {{"object_size", pin.object_size},
                 {"ft_enabled", pin.ft_enabled},
                 {"mechanism", pin.mechanism},
                 {"method", pin.method},
                 {"transaction_size", pin.transaction_size}};
  fs::path p = ft_dir / kSessionPinName;
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

std::optional<SessionPin> read_session_pin(const fs::path& ft_dir) {
  fs::path p = ft_dir / kSessionPinName;
  std::ifstream in(p);
  if (!in) return std::nullopt;
  SessionPin pin;
  try {
    auto j = ordered_json::parse(in);
    pin.session_id = j.at("session_id").get<uint64_t>();
    pin.manifest_checksum = j.at("manifest_checksum").get<std::string>();
    const auto& c = j.at("config");
    pin.object_size = c.at("object_size").get<uint64_t>();
    pin.ft_enabled = c.at("ft_enabled").get<bool>();
    pin.mechanism = c.at("mechanism").get<std::string>();
    pin.method = c.at("method").get<std::string>();
    pin.transaction_size = c.at("transaction_size").get<uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ResumePinError(std::string("malformed session pin: ") + e.what());
  }
  return pin;
}

void clear_session_pin(const fs::path& ft_dir) {
  std::error_code ec;
  fs::remove(ft_dir / kSessionPinName, ec);
}

void check_session_pin(const SessionPin& pin, const DatasetManifest& manifest,
                       const FtLogConfig& config) {
  if (pin.manifest_checksum != manifest_checksum(manifest))
    throw ResumePinError("dataset changed since fault (manifest checksum mismatch)");
  if (pin.object_size != manifest.object_size)
    throw ResumePinError("object_size changed since fault");
  if (pin.ft_enabled != config.enabled)
    throw ResumePinError("fault-tolerance setting changed since fault");
  if (!config.enabled) return;
  if (pin.mechanism != mechanism_name(config.mechanism) ||
      pin.method != method_name(config.method))
    throw ResumePinError("logger configuration changed since fault");
  if (config.mechanism == LogMechanism::kTransaction &&
      pin.transaction_size != config.transaction_size)
    throw ResumePinError("transaction_size changed since fault");
}

TransferStats run_source_session(const DatasetManifest& manifest, const FtLogConfig& config,
                                 ByteStream& stream, const SourceOptions& options,
                                 uint32_t slot_count) {
  SourceOptions opts = options;
  auto existing = config.ft_dir.empty() ? std::nullopt : read_session_pin(config.ft_dir);
  if (opts.resume) {
    if (!existing)
      throw ResumePinError("no prior session to resume in " + config.ft_dir.string());
    check_session_pin(*existing, manifest, config);
    opts.session_id = existing->session_id;
  } else {
    if (existing)
      throw ResumePinError("prior session state exists in " + config.ft_dir.string() +
                           "; resume it or clear the directory");
    SessionPin pin;
    pin.session_id = opts.session_id;
    if (pin.session_id == 0) {
      std::random_device rd;
      pin.session_id = (static_cast<uint64_t>(rd()) << 32) | rd();
    }
    opts.session_id = pin.session_id;
    pin.manifest_checksum = manifest_checksum(manifest);
    pin.object_size = manifest.object_size;
    pin.ft_enabled = config.enabled;
    pin.mechanism = mechanism_name(config.mechanism);
    pin.method = method_name(config.method);
    pin.transaction_size = config.transaction_size;
    if (!config.ft_dir.empty()) write_session_pin(config.ft_dir, pin);
  }

  TransferPlan plan(manifest.object_size);
  BufferPool pool(manifest.object_size, slot_count);
  FtLogger logger(config, manifest.object_size);
  TransferStats stats = run_source(manifest, plan, pool, logger, stream, opts);
  if (stats.clean && !config.ft_dir.empty()) clear_session_pin(config.ft_dir);
  return stats;
}

VerifyReport verify_dataset(const fs::path& source_root, const fs::path& sink_root,
                            const DatasetManifest& manifest) {
  VerifyReport report;
  for (const auto& f : manifest.files) {
    FileDigest d;
    d.path = f.path;
    fs::path src = source_root / f.path;
    fs::path dst = sink_root / f.path;
    bool src_ok = fs::exists(src);
    bool dst_ok = fs::exists(dst);
    if (!src_ok) {
      d.status = DigestStatus::kMissingSource;
    } else if (!dst_ok) {
      d.status = DigestStatus::kMissingSink;
      d.source_digest = sha256_file(src);
    } else {
      d.source_digest = sha256_file(src);
      d.sink_digest = sha256_file(dst);
      d.status = d.source_digest == d.sink_digest ? DigestStatus::kOk : DigestStatus::kMismatch;
    }
    if (d.status != DigestStatus::kOk) report.mismatches.push_back(d);
    report.files.push_back(std::move(d));
  }
  return report;
}

}  // namespace oxfer
