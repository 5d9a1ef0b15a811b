#include "oxfer/wire.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <optional>

#include "oxfer/bytes.hpp"

namespace oxfer {

const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::kConnect: return "CONNECT";
    case MsgType::kNewFile: return "NEW_FILE";
    case MsgType::kFileId: return "FILE_ID";
    case MsgType::kNewBlock: return "NEW_BLOCK";
    case MsgType::kBlockSync: return "BLOCK_SYNC";
    case MsgType::kBye: return "BYE";
    case MsgType::kFileClose: return "FILE_CLOSE";
  }
  return "UNKNOWN";
}

MsgType msg_type(const Message& m) { return static_cast<MsgType>(m.index()); }

namespace {

void encode_payload(ByteWriter& w, const ConnectMsg& m) {
  w.u64(m.object_size);
  w.u32(m.slot_count);
  w.u64(m.session_id);
  w.u8(m.resume_flag);
}

void encode_payload(ByteWriter& w, const NewFileMsg& m) {
  if (m.path.size() > UINT16_MAX) throw ProtocolError("path too long for wire format");
  w.u32(m.file_id);
  w.u64(m.size);
  w.u64(m.mtime);
  w.u16(static_cast<uint16_t>(m.path.size()));
  w.str(m.path);
}

void encode_payload(ByteWriter& w, const FileIdMsg& m) {
  w.u32(m.file_id);
  w.u64(m.sink_fd);
  w.u8(m.skip_flag);
}

void encode_payload(ByteWriter& w, const NewBlockMsg& m) {
  w.u32(m.file_id);
  w.u64(m.block_index);
  w.u32(static_cast<uint32_t>(m.data.size()));
  w.raw(m.data.data(), m.data.size());
}

void encode_payload(ByteWriter& w, const BlockSyncMsg& m) {
  w.u32(m.file_id);
  w.u64(m.block_index);
  w.u8(m.status);
}

void encode_payload(ByteWriter&, const ByeMsg&) {}

void encode_payload(ByteWriter& w, const FileCloseMsg& m) { w.u32(m.file_id); }

}  // namespace

std::vector<uint8_t> encode_message(const Message& m) {
  ByteWriter w;
  w.u8(static_cast<uint8_t>(msg_type(m)));
  w.u32(0);  // patched below
  std::visit([&](const auto& msg) { encode_payload(w, msg); }, m);
  size_t total = w.size();
  std::vector<uint8_t> out = w.take();
  uint32_t payload_len = static_cast<uint32_t>(total - kFrameHeaderSize);
  for (int i = 0; i < 4; ++i) out[1 + i] = static_cast<uint8_t>(payload_len >> (8 * i));
  return out;
}

Message decode_message(std::span<const uint8_t> frame) {
  if (frame.size() < kFrameHeaderSize) throw ProtocolError("truncated frame");
  uint8_t type = frame[0];
  uint32_t payload_len = 0;
  for (int i = 0; i < 4; ++i) payload_len |= static_cast<uint32_t>(frame[1 + i]) << (8 * i);
  if (frame.size() != kFrameHeaderSize + payload_len)
    throw ProtocolError("payload length mismatch");
  ByteReader r(frame.subspan(kFrameHeaderSize));

  Message m;
  switch (static_cast<MsgType>(type)) {
    case MsgType::kConnect: {
      ConnectMsg msg;
      msg.object_size = r.u64();
      msg.slot_count = r.u32();
      msg.session_id = r.u64();
      msg.resume_flag = r.u8();
      m = msg;
      break;
    }
    case MsgType::kNewFile: {
      NewFileMsg msg;
      msg.file_id = r.u32();
      msg.size = r.u64();
      msg.mtime = r.u64();
      uint16_t path_len = r.u16();
      msg.path = r.str(path_len);
      m = msg;
      break;
    }
    case MsgType::kFileId: {
      FileIdMsg msg;
      msg.file_id = r.u32();
      msg.sink_fd = r.u64();
      msg.skip_flag = r.u8();
      m = msg;
      break;
    }
    case MsgType::kNewBlock: {
      NewBlockMsg msg;
      msg.file_id = r.u32();
      msg.block_index = r.u64();
      uint32_t len = r.u32();
      msg.data = r.bytes(len);
      m = msg;
      break;
    }
    case MsgType::kBlockSync: {
      BlockSyncMsg msg;
      msg.file_id = r.u32();
      msg.block_index = r.u64();
      msg.status = r.u8();
      m = msg;
      break;
    }
    case MsgType::kBye:
      m = ByeMsg{};
      break;
    case MsgType::kFileClose: {
      FileCloseMsg msg;
      msg.file_id = r.u32();
      m = msg;
      break;
    }
    default:
      throw ProtocolError("unknown message type " + std::to_string(type));
  }
  if (r.remaining() != 0) throw ProtocolError("trailing bytes in frame");
  return m;
}

bool ByteStream::read_exact(void* buf, size_t len) {
  auto* p = static_cast<uint8_t*>(buf);
  size_t got = 0;
  while (got < len) {
    size_t n = read_some(p + got, len - got);
    if (n == 0) {
      if (got == 0) return false;
      throw ProtocolError("connection closed mid-frame");
    }
    got += n;
  }
  return true;
}

FdStream::~FdStream() {
  if (fd_ >= 0) ::close(fd_);
}

size_t FdStream::read_some(void* buf, size_t len) {
  for (;;) {
    ssize_t n = ::read(fd_, buf, len);
    if (n >= 0) return static_cast<size_t>(n);
    if (errno == EINTR) continue;
    if (errno == ECONNRESET) return 0;  // peer aborted: treat as EOF
    throw IoError(std::string("read failed: ") + std::strerror(errno));
  }
}

void FdStream::write_all(const void* buf, size_t len) {
  const auto* p = static_cast<const uint8_t*>(buf);
  size_t sent = 0;
  while (sent < len) {
    // MSG_NOSIGNAL: a dead peer surfaces as EPIPE, not a process signal.
    ssize_t n = ::send(fd_, p + sent, len - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("write failed: ") + std::strerror(errno));
    }
    sent += static_cast<size_t>(n);
  }
}

void FdStream::shutdown() { ::shutdown(fd_, SHUT_RDWR); }

std::pair<std::unique_ptr<ByteStream>, std::unique_ptr<ByteStream>> make_stream_pair() {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0)
    throw IoError(std::string("socketpair failed: ") + std::strerror(errno));
  return {std::make_unique<FdStream>(fds[0]), std::make_unique<FdStream>(fds[1])};
}

TcpListener::TcpListener(const std::string& host, uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw IoError(std::string("socket failed: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw ConfigError("invalid listen address: " + host);
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
    throw IoError(std::string("bind failed: ") + std::strerror(errno));
  if (::listen(fd_, 8) != 0) throw IoError(std::string("listen failed: ") + std::strerror(errno));
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() { close(); }

void TcpListener::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

std::unique_ptr<ByteStream> TcpListener::accept() {
  int cfd = ::accept(fd_, nullptr, nullptr);
  if (cfd < 0) throw IoError(std::string("accept failed: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_unique<FdStream>(cfd);
}

std::unique_ptr<ByteStream> tcp_connect(const std::string& host, uint16_t port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw IoError(std::string("socket failed: ") + std::strerror(errno));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw ConfigError("invalid connect address: " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    int err = errno;
    ::close(fd);
    throw IoError(std::string("connect failed: ") + std::strerror(err));
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_unique<FdStream>(fd);
}

void send_message(ByteStream& s, const Message& m) {
  auto frame = encode_message(m);
  s.write_all(frame.data(), frame.size());
}

std::optional<Message> recv_message(ByteStream& s) {
  uint8_t header[kFrameHeaderSize];
  if (!s.read_exact(header, sizeof(header))) return std::nullopt;
  uint32_t payload_len = 0;
  for (int i = 0; i < 4; ++i) payload_len |= static_cast<uint32_t>(header[1 + i]) << (8 * i);
  if (payload_len > kMaxPayloadLen) throw ProtocolError("oversized frame");
  std::vector<uint8_t> frame(kFrameHeaderSize + payload_len);
  std::memcpy(frame.data(), header, kFrameHeaderSize);
  if (payload_len > 0 && !s.read_exact(frame.data() + kFrameHeaderSize, payload_len))
    throw ProtocolError("connection closed mid-frame");
  return decode_message(frame);
}

}  // namespace oxfer
