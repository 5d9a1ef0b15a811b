#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "oxfer/errors.hpp"

namespace oxfer {

// Wire values are pinned; the variant order below must match.
enum class MsgType : uint8_t {
  kConnect = 0,
  kNewFile = 1,
  kFileId = 2,
  kNewBlock = 3,
  kBlockSync = 4,
  kBye = 5,
  kFileClose = 6,
};

const char* msg_type_name(MsgType t);

struct ConnectMsg {
  uint64_t object_size = 0;
  uint32_t slot_count = 0;
  uint64_t session_id = 0;
  uint8_t resume_flag = 0;
  bool operator==(const ConnectMsg&) const = default;
};

struct NewFileMsg {
  uint32_t file_id = 0;
  uint64_t size = 0;
  uint64_t mtime = 0;
  std::string path;
  bool operator==(const NewFileMsg&) const = default;
};

struct FileIdMsg {
  uint32_t file_id = 0;
  uint64_t sink_fd = 0;
  uint8_t skip_flag = 0;
  bool operator==(const FileIdMsg&) const = default;
};

struct NewBlockMsg {
  uint32_t file_id = 0;
  uint64_t block_index = 0;
  std::vector<uint8_t> data;
  bool operator==(const NewBlockMsg&) const = default;
};

struct BlockSyncMsg {
  uint32_t file_id = 0;
  uint64_t block_index = 0;
  uint8_t status = 0;  // 0 = PFS write ok, 1 = write failed
  bool operator==(const BlockSyncMsg&) const = default;
};

struct ByeMsg {
  bool operator==(const ByeMsg&) const = default;
};

struct FileCloseMsg {
  uint32_t file_id = 0;
  bool operator==(const FileCloseMsg&) const = default;
};

using Message =
    std::variant<ConnectMsg, NewFileMsg, FileIdMsg, NewBlockMsg, BlockSyncMsg, ByeMsg, FileCloseMsg>;

MsgType msg_type(const Message& m);

inline constexpr size_t kFrameHeaderSize = 5;  // type u8 + payload_len u32 LE
inline constexpr uint32_t kMaxPayloadLen = (64u << 20) + 64;

// Frame: {type u8, payload_len u32 LE, payload}. Round-trip identity holds
// for every well-formed message.
std::vector<uint8_t> encode_message(const Message& m);
Message decode_message(std::span<const uint8_t> frame);

// Reliable byte stream; stands in for the RMA-capable interconnect.
class ByteStream {
 public:
  virtual ~ByteStream() = default;
  // Returns bytes read, 0 on EOF. Throws IoError on failure.
  virtual size_t read_some(void* buf, size_t len) = 0;
  virtual void write_all(const void* buf, size_t len) = 0;
  // Abortive close: wakes any thread blocked in read/write on either side.
  virtual void shutdown() = 0;

  // Returns false on clean EOF at a message boundary; throws mid-buffer.
  bool read_exact(void* buf, size_t len);
};

class FdStream : public ByteStream {
 public:
  explicit FdStream(int fd) : fd_(fd) {}
  ~FdStream() override;
  size_t read_some(void* buf, size_t len) override;
  void write_all(const void* buf, size_t len) override;
  void shutdown() override;
  int fd() const { return fd_; }

 private:
  int fd_ = -1;
};

// In-process duplex connection (a socketpair); both ends are real streams.
std::pair<std::unique_ptr<ByteStream>, std::unique_ptr<ByteStream>> make_stream_pair();

class TcpListener {
 public:
  TcpListener(const std::string& host, uint16_t port);
  ~TcpListener();
  std::unique_ptr<ByteStream> accept();
  uint16_t port() const { return port_; }
  void close();

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

std::unique_ptr<ByteStream> tcp_connect(const std::string& host, uint16_t port);

// Helpers used by the comm loops: whole-message framing over a ByteStream.
void send_message(ByteStream& s, const Message& m);
// Returns nullopt on clean EOF before a header byte.
std::optional<Message> recv_message(ByteStream& s);

}  // namespace oxfer
