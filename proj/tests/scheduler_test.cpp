#include "oxfer/scheduler.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

#include "testutil.hpp"

using namespace oxfer;
using namespace oxfer::test;

namespace {

constexpr uint64_t kObj = 1ull << 20;

TEST(EnqueueFile, AllBlocksWhenNothingSkipped) {
  TransferPlan plan(kObj);
  FileSpec f = spec_of(0, 1024 * kObj, kObj, 1, {0});
  EXPECT_EQ(plan.enqueue_file(f), 1024u);
  EXPECT_EQ(plan.pending_count(), 1024u);
}

TEST(EnqueueFile, SkipAllYieldsZero) {
  TransferPlan plan(kObj);
  FileSpec f = spec_of(0, 1024 * kObj, kObj, 1, {0});
  CompletedSet skip(1024);
  for (uint64_t k = 0; k < 1024; ++k) skip.insert(k);
  EXPECT_EQ(plan.enqueue_file(f, &skip), 0u);
}

TEST(EnqueueFile, ReEnqueueIsNoOp) {
  TransferPlan plan(kObj);
  FileSpec f = spec_of(0, 4 * kObj, kObj, 1, {0});
  EXPECT_EQ(plan.enqueue_file(f), 4u);
  EXPECT_EQ(plan.enqueue_file(f), 0u);
  EXPECT_EQ(plan.pending_count(), 4u);
}

TEST(EnqueueFile, PartitionsBySkipAndStripe) {
  // 10 blocks alternating across two OSTs, skip {0,1,2}:
  // OST a gets {4,6,8}, OST b gets {3,5,7,9}.
  TransferPlan plan(kObj);
  FileSpec f = spec_of(0, 10 * kObj, kObj, 2, {100, 200});
  CompletedSet skip(10);
  skip.insert(0);
  skip.insert(1);
  skip.insert(2);
  EXPECT_EQ(plan.enqueue_file(f, &skip), 7u);

  // Independent oracle: parity partition of 3..9.
  std::vector<uint64_t> want_a, want_b;
  for (uint64_t k = 3; k < 10; ++k) (k % 2 == 0 ? want_a : want_b).push_back(k);

  std::vector<uint64_t> got_a, got_b;
  for (;;) {
    auto d = plan.claim_next(0);
    if (!d) break;
    (d->ost_id == 100 ? got_a : got_b).push_back(d->block_index);
    plan.release_ost(d->ost_id);
  }
  EXPECT_EQ(got_a, want_a);
  EXPECT_EQ(got_b, want_b);
}

TEST(ClaimNext, TwoWorkersGetDistinctOsts) {
  TransferPlan plan(kObj);
  plan.enqueue_file(spec_of(0, 4 * kObj, kObj, 2, {1, 2}));
  auto a = plan.claim_next(0);
  auto b = plan.claim_next(1);
  ASSERT_TRUE(a && b);
  EXPECT_NE(a->ost_id, b->ost_id);
}

TEST(ClaimNext, BusyQueueYieldsNothing) {
  TransferPlan plan(kObj);
  plan.enqueue_file(spec_of(0, 4 * kObj, kObj, 1, {1}));
  auto a = plan.claim_next(0);
  ASSERT_TRUE(a);
  EXPECT_FALSE(plan.claim_next(1).has_value());
  plan.release_ost(a->ost_id);
  EXPECT_TRUE(plan.claim_next(1).has_value());
}

TEST(ClaimNext, RoundRobinStartsAfterLastHeld) {
  // Queues {A:[x], B:[y,z]}; a worker that last held A claims y from B.
  TransferPlan plan(kObj);
  FileSpec fa = spec_of(0, 3 * kObj, kObj, 1, {1}, "a");  // A: blocks 0,1,2
  FileSpec fb = spec_of(1, 2 * kObj, kObj, 1, {2}, "b");  // B: blocks 0,1
  plan.enqueue_file(fa);
  plan.enqueue_file(fb);
  auto first = plan.claim_next(0);
  ASSERT_TRUE(first);
  EXPECT_EQ(first->ost_id, 1u);
  plan.release_ost(1);
  auto second = plan.claim_next(0);
  ASSERT_TRUE(second);
  EXPECT_EQ(second->ost_id, 2u);  // rotation moved past A
  EXPECT_EQ(second->file_id, 1u);
  EXPECT_EQ(second->block_index, 0u);
}

TEST(ReleaseOst, DoubleReleaseIsALogicFault) {
  TransferPlan plan(kObj);
  plan.enqueue_file(spec_of(0, 2 * kObj, kObj, 1, {5}));
  auto d = plan.claim_next(0);
  ASSERT_TRUE(d);
  plan.release_ost(5);
  EXPECT_THROW(plan.release_ost(5), std::logic_error);
}

TEST(ReleaseOst, PendingItemsSurviveRelease) {
  TransferPlan plan(kObj);
  plan.enqueue_file(spec_of(0, 3 * kObj, kObj, 1, {5}));
  auto d = plan.claim_next(0);
  ASSERT_TRUE(d);
  plan.release_ost(5);
  EXPECT_EQ(plan.pending_count(), 2u);
}

TEST(Requeue, FailedObjectComesBackFirst) {
  TransferPlan plan(kObj);
  FileSpec f = spec_of(0, 3 * kObj, kObj, 1, {0});
  plan.enqueue_file(f);
  auto d = plan.claim_next(0);
  ASSERT_TRUE(d);
  EXPECT_EQ(d->block_index, 0u);
  plan.release_ost(0);
  plan.requeue(*d);
  auto again = plan.claim_next(0);
  ASSERT_TRUE(again);
  EXPECT_EQ(again->block_index, 0u);
}

// Mutual exclusion under concurrent hammering; the plan itself throws if an
// OST is ever held twice.
TEST(Stress, MutualExclusionAcrossWorkers) {
  TransferPlan plan(1 << 16);
  LayoutPolicy policy;
  for (uint32_t i = 0; i < 4; ++i) {
    FileSpec f = spec_of(i, 256 * (1 << 16), 1 << 16, 4, {0, 1, 2, 3},
                         "s" + std::to_string(i));
    plan.enqueue_file(f);
  }
  std::atomic<uint64_t> claimed{0};
  std::atomic<bool> failed{false};
  std::vector<std::thread> workers;
  for (uint32_t w = 0; w < 8; ++w) {
    workers.emplace_back([&, w] {
      std::mt19937_64 rng(w);
      try {
        while (auto d = plan.wait_and_claim(w)) {
          if (rng() % 4 == 0) std::this_thread::sleep_for(std::chrono::microseconds(rng() % 50));
          plan.release_ost(d->ost_id);
          if (claimed.fetch_add(1) + 1 == 4 * 256) plan.shutdown();
        }
      } catch (const std::logic_error&) {
        failed.store(true);
      }
    });
  }
  for (auto& t : workers) t.join();
  EXPECT_FALSE(failed.load());
  EXPECT_EQ(claimed.load(), 4u * 256u);
}

// Progress: a congested OST never stalls the others, and a bounded wait
// drains every queue.
TEST(Stress, CongestionDoesNotStallOtherQueues) {
  TransferPlan plan(1 << 16);
  plan.set_congestion({{0, 30}});
  FileSpec f = spec_of(0, 32 * (1 << 16), 1 << 16, 2, {0, 1});
  plan.enqueue_file(f);

  std::vector<uint64_t> fast_claims;
  std::mutex mu;
  std::atomic<bool> done{false};
  std::vector<std::thread> workers;
  for (uint32_t w = 0; w < 2; ++w) {
    workers.emplace_back([&, w] {
      while (auto d = plan.wait_and_claim(w)) {
        uint32_t delay = plan.congestion_delay_ms(d->ost_id);
        if (delay) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        {
          std::lock_guard lk(mu);
          if (d->ost_id == 1) fast_claims.push_back(d->block_index);
        }
        plan.release_ost(d->ost_id);
        if (plan.pending_count() == 0) done.store(true);
      }
    });
  }
  auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(30);
  while (!done.load() && std::chrono::steady_clock::now() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  plan.shutdown();
  for (auto& t : workers) t.join();
  EXPECT_TRUE(done.load());
  EXPECT_EQ(fast_claims.size(), 16u);  // every odd block went through OST 1
}

}  // namespace
