#include "oxfer/wire.hpp"

#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "oxfer/errors.hpp"

using namespace oxfer;

namespace {

TEST(Codec, ByeIsFiveBytes) {
  auto bytes = encode_message(ByeMsg{});
  ASSERT_EQ(bytes.size(), 5u);
  EXPECT_EQ(bytes[0], 0x05);
  EXPECT_EQ(bytes[1], 0x00);
  EXPECT_EQ(bytes[2], 0x00);
  EXPECT_EQ(bytes[3], 0x00);
  EXPECT_EQ(bytes[4], 0x00);
}

TEST(Codec, TypeBytesMatchWireTable) {
  EXPECT_EQ(encode_message(ConnectMsg{})[0], 0);
  EXPECT_EQ(encode_message(NewFileMsg{})[0], 1);
  EXPECT_EQ(encode_message(FileIdMsg{})[0], 2);
  EXPECT_EQ(encode_message(NewBlockMsg{})[0], 3);
  EXPECT_EQ(encode_message(BlockSyncMsg{})[0], 4);
  EXPECT_EQ(encode_message(ByeMsg{})[0], 5);
  EXPECT_EQ(encode_message(FileCloseMsg{})[0], 6);
}

TEST(Codec, NewBlockLayout) {
  NewBlockMsg m{7, 42, {0xde, 0xad}};
  auto bytes = encode_message(m);
  // header(5) + file_id(4) + block(8) + len(4) + data(2)
  ASSERT_EQ(bytes.size(), 23u);
  EXPECT_EQ(bytes[0], 3);
  uint32_t payload_len = bytes[1] | bytes[2] << 8 | bytes[3] << 16 | bytes[4] << 24;
  EXPECT_EQ(payload_len, 18u);
  EXPECT_EQ(bytes[5], 7);     // file_id LE
  EXPECT_EQ(bytes[9], 42);    // block_index LE
  EXPECT_EQ(bytes[17], 2);    // length LE
  EXPECT_EQ(bytes[21], 0xde);
  EXPECT_EQ(bytes[22], 0xad);
}

TEST(Codec, RoundTripIdentity) {
  std::mt19937_64 rng(11);
  std::vector<uint8_t> blob(1 << 10);
  for (auto& b : blob) b = static_cast<uint8_t>(rng());
  std::vector<Message> msgs = {
      ConnectMsg{1 << 20, 256, rng(), 1},
      NewFileMsg{12, 987654321, 1700001234, "dir/some file (x).bin"},
      FileIdMsg{12, 5, 1},
      NewBlockMsg{12, 1ull << 33, blob},
      BlockSyncMsg{12, 1ull << 33, 1},
      ByeMsg{},
      FileCloseMsg{12},
  };
  for (const auto& m : msgs) {
    auto decoded = decode_message(encode_message(m));
    EXPECT_EQ(decoded, m);
  }
}

TEST(Codec, UnknownTypeRejected) {
  std::vector<uint8_t> frame = {0x09, 0, 0, 0, 0};
  EXPECT_THROW(decode_message(frame), ProtocolError);
}

TEST(Codec, LengthMismatchRejected) {
  auto frame = encode_message(FileCloseMsg{3});
  frame[1] = 0xff;  // lie about payload length
  EXPECT_THROW(decode_message(frame), ProtocolError);
  auto truncated = encode_message(NewFileMsg{1, 2, 3, "abc"});
  truncated.pop_back();
  EXPECT_THROW(decode_message(truncated), ProtocolError);
}

TEST(Codec, TrailingBytesRejected) {
  auto frame = encode_message(FileCloseMsg{3});
  frame.push_back(0);
  frame[1] = static_cast<uint8_t>(frame.size() - 5);
  EXPECT_THROW(decode_message(frame), ProtocolError);
}

TEST(StreamPair, CarriesFramesBothWays) {
  auto [a, b] = make_stream_pair();
  send_message(*a, NewFileMsg{1, 100, 200, "x.bin"});
  send_message(*b, FileIdMsg{1, 44, 0});
  auto at_b = recv_message(*b);
  auto at_a = recv_message(*a);
  ASSERT_TRUE(at_b && at_a);
  EXPECT_EQ(std::get<NewFileMsg>(*at_b).path, "x.bin");
  EXPECT_EQ(std::get<FileIdMsg>(*at_a).sink_fd, 44u);
}

TEST(StreamPair, ShutdownWakesBlockedReader) {
  auto [a, b] = make_stream_pair();
  std::thread reader([&, bp = b.get()] {
    auto msg = recv_message(*bp);
    EXPECT_FALSE(msg.has_value());
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  a->shutdown();
  reader.join();
}

TEST(Tcp, LoopbackSession) {
  TcpListener listener("127.0.0.1", 0);
  std::thread server([&] {
    auto conn = listener.accept();
    auto msg = recv_message(*conn);
    ASSERT_TRUE(msg);
    send_message(*conn, *msg);  // echo
  });
  auto client = tcp_connect("127.0.0.1", listener.port());
  send_message(*client, BlockSyncMsg{9, 81, 0});
  auto echo = recv_message(*client);
  server.join();
  ASSERT_TRUE(echo);
  EXPECT_EQ(std::get<BlockSyncMsg>(*echo).block_index, 81u);
}

}  // namespace
