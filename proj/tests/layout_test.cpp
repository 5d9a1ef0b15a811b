#include "oxfer/layout.hpp"

#include <gtest/gtest.h>

#include <set>

#include "oxfer/errors.hpp"
#include "testutil.hpp"

using namespace oxfer;
using namespace oxfer::test;

namespace {

constexpr uint64_t kMiB = 1ull << 20;

TEST(ObjectCount, CeilingAndZero) {
  FileSpec f = spec_of(0, 0, kMiB, 1, {0});
  EXPECT_EQ(f.object_count(kMiB), 0u);  // empty file: complete immediately
  f.size = 1;
  EXPECT_EQ(f.object_count(kMiB), 1u);
  f.size = kMiB;
  EXPECT_EQ(f.object_count(kMiB), 1u);
  f.size = kMiB + 1;
  EXPECT_EQ(f.object_count(kMiB), 2u);
}

TEST(ObjectCount, HundredGiBDataset) {
  // 100 files x 1 GiB at 1 MiB objects = 102400 objects.
  DatasetManifest m;
  m.object_size = kMiB;
  for (uint32_t i = 0; i < 100; ++i) m.files.push_back(spec_of(i, 1024 * kMiB, kMiB, 1, {0}));
  EXPECT_EQ(m.total_objects(), 102400u);
}

TEST(ObjectAt, FinalBlockRemainder) {
  // 2.5 MiB at 1 MiB objects: lengths 1 MiB, 1 MiB, 0.5 MiB.
  FileSpec f = spec_of(0, 5 * kMiB / 2, kMiB, 1, {3});
  ASSERT_EQ(f.object_count(kMiB), 3u);
  EXPECT_EQ(object_at(f, kMiB, 0).length, kMiB);
  EXPECT_EQ(object_at(f, kMiB, 1).length, kMiB);
  EXPECT_EQ(object_at(f, kMiB, 2).length, kMiB / 2);
  EXPECT_EQ(object_at(f, kMiB, 2).offset, 2 * kMiB);
}

TEST(OstOf, StripeRule) {
  // offset 3 MiB, stripe 1 MiB, count 4 -> index 3 -> OST 9.
  FileSpec f = spec_of(0, 8 * kMiB, kMiB, 4, {2, 5, 7, 9});
  EXPECT_EQ(ost_of(f, kMiB, 3), 9u);
}

TEST(OstOf, SingleStripeIsIdentity) {
  FileSpec f = spec_of(0, 8 * kMiB, kMiB, 1, {6});
  for (uint64_t k = 0; k < 8; ++k) EXPECT_EQ(ost_of(f, kMiB, k), 6u);
}

TEST(OstOf, TwoStripesAlternate) {
  FileSpec f = spec_of(0, 4 * kMiB, kMiB, 2, {11, 22});
  EXPECT_EQ(ost_of(f, kMiB, 0), 11u);
  EXPECT_EQ(ost_of(f, kMiB, 1), 22u);
  EXPECT_EQ(ost_of(f, kMiB, 2), 11u);
  EXPECT_EQ(ost_of(f, kMiB, 3), 22u);
}

TEST(OstOf, OutOfRangeBlockThrows) {
  FileSpec f = spec_of(0, kMiB, kMiB, 1, {0});
  EXPECT_THROW(ost_of(f, kMiB, 1), std::out_of_range);
}

TEST(OstOf, ObjectSmallerThanStripe) {
  // 64 KiB objects on a 1 MiB stripe: 16 consecutive objects share an OST.
  FileSpec f = spec_of(0, 4 * kMiB, kMiB, 2, {1, 2});
  EXPECT_EQ(ost_of(f, 1 << 16, 0), 1u);
  EXPECT_EQ(ost_of(f, 1 << 16, 15), 1u);
  EXPECT_EQ(ost_of(f, 1 << 16, 16), 2u);
  EXPECT_EQ(ost_of(f, 1 << 16, 32), 1u);
}

TEST(BuildManifest, DeterministicAndSorted) {
  TempDir dir("layout");
  write_file(dir / "b/two.bin", "yy");
  write_file(dir / "a/one.bin", "x");
  write_file(dir / "zzz.bin", "abc");
  LayoutPolicy policy;
  policy.ost_pool = {0, 1, 2};
  auto m1 = build_manifest(dir.path(), kMiB, policy);
  auto m2 = build_manifest(dir.path(), kMiB, policy);
  EXPECT_EQ(manifest_to_json(m1), manifest_to_json(m2));
  ASSERT_EQ(m1.files.size(), 3u);
  EXPECT_EQ(m1.files[0].path, "a/one.bin");
  EXPECT_EQ(m1.files[1].path, "b/two.bin");
  EXPECT_EQ(m1.files[2].path, "zzz.bin");
  for (uint32_t i = 0; i < 3; ++i) EXPECT_EQ(m1.files[i].file_id, i);
  // Round robin from file_id mod pool size.
  EXPECT_EQ(m1.files[0].ost_list[0], 0u);
  EXPECT_EQ(m1.files[1].ost_list[0], 1u);
  EXPECT_EQ(m1.files[2].ost_list[0], 2u);
}

TEST(BuildManifest, EmptyDatasetIsAnError) {
  TempDir dir("layout-empty");
  EXPECT_THROW(build_manifest(dir.path(), kMiB, LayoutPolicy{}), ConfigError);
}

TEST(BuildManifest, MissingRootIsAnError) {
  EXPECT_THROW(build_manifest("/nonexistent/nowhere", kMiB, LayoutPolicy{}), ConfigError);
}

TEST(BuildManifest, StripeCountBeyondPoolIsAnError) {
  TempDir dir("layout-pool");
  write_file(dir / "f.bin", "x");
  LayoutPolicy policy;
  policy.stripe_count = 4;
  policy.ost_pool = {0, 1};
  EXPECT_THROW(build_manifest(dir.path(), kMiB, policy), ConfigError);
}

TEST(Manifest, JsonRoundTrip) {
  TempDir dir("layout-json");
  write_file(dir / "x.bin", pseudo_bytes(1, 5000));
  LayoutPolicy policy;
  policy.stripe_count = 2;
  policy.ost_pool = {4, 9, 13};
  auto m = build_manifest(dir.path(), 4096, policy);
  auto back = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(back.object_size, m.object_size);
  ASSERT_EQ(back.files.size(), m.files.size());
  EXPECT_EQ(back.files[0], m.files[0]);
  EXPECT_EQ(manifest_checksum(back), manifest_checksum(m));
}

TEST(Manifest, ChecksumIgnoresRootPath) {
  TempDir dir("layout-sum");
  write_file(dir / "x.bin", "hello");
  auto m = build_manifest(dir.path(), 4096, LayoutPolicy{});
  auto moved = m;
  moved.root = "/somewhere/else";
  EXPECT_EQ(manifest_checksum(m), manifest_checksum(moved));
  moved.files[0].size ^= 1;
  EXPECT_NE(manifest_checksum(m), manifest_checksum(moved));
}

// Coverage property: objects tile each file exactly once, no gaps/overlaps,
// and ost_of is stable.
TEST(Layout, ObjectsTileEachFile) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    uint64_t object_size = 1 + rng() % 5000;
    uint64_t size = rng() % 200000;
    uint32_t stripe_count = 1 + static_cast<uint32_t>(rng() % 4);
    std::vector<OstId> osts;
    for (uint32_t i = 0; i < stripe_count; ++i) osts.push_back(100 + i);
    FileSpec f = spec_of(0, size, 1 + rng() % 9000, stripe_count, osts);
    uint64_t expected_offset = 0;
    uint64_t blocks = f.object_count(object_size);
    for (uint64_t k = 0; k < blocks; ++k) {
      auto d = object_at(f, object_size, k);
      EXPECT_EQ(d.offset, expected_offset);
      EXPECT_GT(d.length, 0u);
      EXPECT_EQ(d.ost_id, ost_of(f, object_size, k));
      expected_offset += d.length;
    }
    EXPECT_EQ(expected_offset, size);
  }
}

}  // namespace
