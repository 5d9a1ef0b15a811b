#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "oxfer/ftlog.hpp"
#include "oxfer/layout.hpp"

namespace oxfer {

class ByteStream;
struct SourceOptions;
struct TransferStats;

enum class FileStatus { kComplete, kPartial, kUntouched };

struct Classification {
  FileStatus status = FileStatus::kUntouched;
  CompletedSet completed;
};

// Resume-time status of one file from the source log plus the sink's
// FILE_ID reply: sink skip with no log entry means the file finished in a
// prior session; a log entry wins over a sink skip (the log never claims
// more than the sink has).
Classification classify_file(FtLogger& logger, const FileSpec& file, bool sink_skip);

// ft_dir/session.json: pins the dataset and config a faulted session used,
// so a resume cannot silently run against different data.
struct SessionPin {
  uint64_t session_id = 0;
  std::string manifest_checksum;
  uint64_t object_size = 0;
  std::string mechanism;
  std::string method;
  uint32_t transaction_size = 0;
  bool ft_enabled = true;
};

inline constexpr const char* kSessionPinName = "session.json";

void write_session_pin(const std::filesystem::path& ft_dir, const SessionPin& pin);
std::optional<SessionPin> read_session_pin(const std::filesystem::path& ft_dir);
void clear_session_pin(const std::filesystem::path& ft_dir);

// Throws ResumePinError when the pinned dataset/config does not match.
void check_session_pin(const SessionPin& pin, const DatasetManifest& manifest,
                       const FtLogConfig& config);

// Full source-session lifecycle around run_source: validates or writes the
// session pin, builds plan/pool/logger, runs the transfer, and clears the
// pin when the session ends cleanly (leaving ft_dir empty).
TransferStats run_source_session(const DatasetManifest& manifest, const FtLogConfig& config,
                                 ByteStream& stream, const SourceOptions& options,
                                 uint32_t slot_count);

enum class DigestStatus { kOk, kMismatch, kMissingSink, kMissingSource };

struct FileDigest {
  std::string path;
  DigestStatus status = DigestStatus::kOk;
  std::string source_digest;
  std::string sink_digest;
};

struct VerifyReport {
  std::vector<FileDigest> files;      // every file, in manifest order
  std::vector<FileDigest> mismatches; // the non-ok subset
  bool ok() const { return mismatches.empty(); }
};

// Strong per-file digests on both sides; empty mismatch list iff the sink
// tree holds byte-identical copies of every manifest file.
VerifyReport verify_dataset(const std::filesystem::path& source_root,
                            const std::filesystem::path& sink_root,
                            const DatasetManifest& manifest);

}  // namespace oxfer
