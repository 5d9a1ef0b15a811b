#pragma once

#include <stdexcept>
#include <string>

namespace oxfer {

// Process exit codes shared by the CLI and the experiment driver.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitProtocol = 3,
  kExitVerifyMismatch = 4,
  kExitResumePin = 5,
  // A source that terminates itself through an injected fault exits with
  // this code so a driver can tell "fault fired" from "transfer failed".
  kExitFault = 70,
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unrecoverable damage to a completion log; the operator must clear ft_dir.
struct LogCorruptError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Resume pre-conditions not met (dataset or config changed since the fault).
struct ResumePinError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace oxfer
