/*
 * Copyright 2026 The ptools Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "pt/collectives.hpp"
#include "pt/transport.hpp"
#include "recorder.hpp"

namespace fs = std::filesystem;

namespace {

pt::HostSet n_hosts(int n) {
  pt::HostSet s;
  for (int i = 1; i <= n; ++i) s.hosts.push_back("h" + std::to_string(i));
  return s;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("ptcoll_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

// Runs an SPMD body over a group of exactly `size` ranks.  Sizes >= 2 go
// through the normal launch (size-1 hosts plus the orchestrator); size 1 is
// a standalone single-rank group.
template <typename Body>
pt::LaunchReport run_sized(int size, Body&& body) {
  if (size == 1) {
    auto tr = std::make_shared<pt::SimTransport>(1);
    pt::NodeGroup g(tr, {"solo"}, {fs::path()}, 0, pt::Backend::Sim, 0, {0});
    body(g);
    pt::LaunchReport rep;
    rep.stats = tr->stats();
    return rep;
  }
  TempDir tmp;
  pt::LaunchOptions opt;
  opt.sim_root = tmp.path;
  return pt::run_sim_group(n_hosts(size - 1), opt, body);
}

std::string random_payload(uint32_t seed, size_t max_len = 2048) {
  std::mt19937 rng(seed);
  std::string s(rng() % max_len, '\0');
  for (auto& c : s) c = char(rng() & 0xff);
  return s;
}

uint32_t ceil_log2(uint32_t n) {
  uint32_t r = 0;
  while ((1u << r) < n) ++r;
  return r;
}

}  // namespace

TEST_CASE("broadcast: oracle equivalence for sizes 1..16") {
  for (int size = 1; size <= 16; ++size) {
    Recorder rec;
    run_sized(size, [&](pt::NodeGroup& g) {
      for (int iter = 0; iter < 5; ++iter) {
        // every rank can compute the expected payload independently
        std::string expected = random_payload(uint32_t(size * 100 + iter));
        std::string got =
            pt::broadcast(g, 0, g.rank() == 0 ? expected : std::string());
        EXPECT_REC(rec, got == expected);
      }
    });
    INFO("size " << size << "\n" << rec.report());
    REQUIRE(rec.ok());
  }
}

TEST_CASE("broadcast: non-zero root") {
  Recorder rec;
  run_sized(6, [&](pt::NodeGroup& g) {
    std::string got =
        pt::broadcast(g, 3, g.rank() == 3 ? std::string("payload") : "");
    EXPECT_REC(rec, got == "payload");
  });
  INFO(rec.report());
  REQUIRE(rec.ok());
}

TEST_CASE("broadcast: exactly size-1 messages, at most ceil(log2 size) rounds") {
  for (int size : {2, 3, 4, 5, 7, 8, 9, 16}) {
    pt::LaunchReport rep = run_sized(size, [&](pt::NodeGroup& g) {
      pt::broadcast(g, 0, g.rank() == 0 ? std::string("x") : std::string());
    });
    INFO("size " << size);
    CHECK(rep.stats.messages_sent == uint64_t(size - 1));
    CHECK(rep.stats.max_rounds <= ceil_log2(uint32_t(size)));
  }
}

TEST_CASE("broadcast: size 1 moves no messages, size 8 takes 3 rounds") {
  pt::LaunchReport one = run_sized(1, [](pt::NodeGroup& g) {
    CHECK(pt::broadcast(g, 0, "solo-payload") == "solo-payload");
  });
  CHECK(one.stats.messages_sent == 0);

  pt::LaunchReport eight = run_sized(8, [](pt::NodeGroup& g) {
    pt::broadcast(g, 0, g.rank() == 0 ? std::string("y") : std::string());
  });
  CHECK(eight.stats.messages_sent == 7);
  CHECK(eight.stats.max_rounds == 3);
}

TEST_CASE("broadcast: root mismatch is a protocol error") {
  Recorder rec;
  run_sized(2, [&](pt::NodeGroup& g) {
    if (g.rank() == 0) {
      // hand-frame a broadcast message claiming the wrong root
      std::string wire;
      pt::put_u32(wire, 1);  // root field
      pt::put_bytes(wire, "payload");
      g.send(1, pt::coll_detail::kTagBcast, wire);
    } else {
      bool threw = false;
      try {
        pt::broadcast(g, 0, "");
      } catch (const pt::ProtocolError&) {
        threw = true;
      }
      EXPECT_REC(rec, threw);
    }
  });
  INFO(rec.report());
  CHECK(rec.ok());
}

TEST_CASE("reduce: fixed examples") {
  run_sized(3, [](pt::NodeGroup& g) {
    int64_t vals[] = {3, 0, 7};
    int64_t r = pt::reduce(g, 0, pt::ReduceOp::Min, vals[g.rank()]);
    if (g.rank() == 0) CHECK(r == 0);
  });
  run_sized(4, [](pt::NodeGroup& g) {
    int64_t vals[] = {1, 1, 0, 1};
    int64_t r = pt::reduce(g, 0, pt::ReduceOp::LogicalAnd, vals[g.rank()]);
    if (g.rank() == 0) CHECK(r == 0);
  });
  run_sized(2, [](pt::NodeGroup& g) {
    int64_t r = pt::reduce(g, 0, pt::ReduceOp::LogicalOr, 0);
    if (g.rank() == 0) CHECK(r == 0);
  });
}

TEST_CASE("reduce: logical ops reject values outside {0,1}") {
  run_sized(1, [](pt::NodeGroup& g) {
    CHECK_THROWS_AS(pt::reduce(g, 0, pt::ReduceOp::LogicalAnd, 2),
                    pt::UsageError);
    CHECK_THROWS_AS(pt::reduce(g, 0, pt::ReduceOp::LogicalOr, -1),
                    pt::UsageError);
    CHECK(pt::reduce(g, 0, pt::ReduceOp::Min, -5) == -5);
  });
}

TEST_CASE("reduce: equals left-fold over rank order (property, sizes 1..16)") {
  for (int size = 1; size <= 16; ++size) {
    for (auto op : {pt::ReduceOp::Min, pt::ReduceOp::LogicalAnd,
                    pt::ReduceOp::LogicalOr}) {
      // deterministic per-rank values every rank can recompute
      auto value_of = [&](int rank) -> int64_t {
        std::mt19937 rng(uint32_t(size * 1000 + rank));
        if (op == pt::ReduceOp::Min) return int64_t(rng() % 1000) - 500;
        return int64_t(rng() % 2);
      };
      Recorder rec;
      run_sized(size, [&](pt::NodeGroup& g) {
        int64_t got = pt::reduce(g, 0, op, value_of(g.rank()));
        if (g.rank() == 0) {
          int64_t expect = value_of(0);
          for (int r = 1; r < size; ++r) {
            int64_t v = value_of(r);
            switch (op) {
              case pt::ReduceOp::Min: expect = std::min(expect, v); break;
              case pt::ReduceOp::LogicalAnd: expect = (expect && v) ? 1 : 0; break;
              case pt::ReduceOp::LogicalOr: expect = (expect || v) ? 1 : 0; break;
            }
          }
          EXPECT_REC(rec, got == expect);
        }
      });
      INFO("size " << size << "\n" << rec.report());
      REQUIRE(rec.ok());
    }
  }
}

TEST_CASE("gather: values indexed by rank") {
  run_sized(3, [](pt::NodeGroup& g) {
    const char* vals[] = {"a", "b", "c"};
    auto got = pt::gather(g, 0, vals[g.rank()]);
    if (g.rank() == 0) {
      REQUIRE(got.size() == 3);
      CHECK(got[0] == "a");
      CHECK(got[1] == "b");
      CHECK(got[2] == "c");
    } else {
      CHECK(got.empty());
    }
  });
}

TEST_CASE("gather: empty contributions and oracle comparison, size 9") {
  run_sized(9, [](pt::NodeGroup& g) {
    auto empties = pt::gather(g, 0, "");
    if (g.rank() == 0) {
      REQUIRE(empties.size() == 9);
      for (const auto& e : empties) CHECK(e.empty());
    }
    std::string mine = random_payload(uint32_t(g.rank()) + 77);
    auto got = pt::gather(g, 0, mine);
    if (g.rank() == 0) {
      for (int r = 0; r < 9; ++r)
        CHECK(got[size_t(r)] == random_payload(uint32_t(r) + 77));
    }
  });
}

TEST_CASE("split: same color keeps everyone, subgroup collectives work") {
  Recorder rec;
  run_sized(5, [&](pt::NodeGroup& g) {
    auto sub = pt::split(g, 7);
    EXPECT_REC(rec, sub.has_value());
    EXPECT_REC(rec, sub->size() == 5);
    EXPECT_REC(rec, sub->rank() == g.rank());
    std::string got = pt::broadcast(
        *sub, 0, sub->rank() == 0 ? std::string("inner") : std::string());
    EXPECT_REC(rec, got == "inner");
  });
  INFO(rec.report());
  CHECK(rec.ok());
}

TEST_CASE("split: two colors partition the group") {
  Recorder rec;
  run_sized(4, [&](pt::NodeGroup& g) {
    auto sub = pt::split(g, g.rank() % 2);
    EXPECT_REC(rec, sub.has_value());
    EXPECT_REC(rec, sub->size() == 2);
    // parent rank order is preserved: ranks {0,2} -> {0,1}, {1,3} -> {0,1}
    EXPECT_REC(rec, sub->rank() == g.rank() / 2);
    // subgroup collectives are isolated per color
    int64_t sum_min = pt::reduce(*sub, 0, pt::ReduceOp::Min, g.rank());
    if (sub->rank() == 0) EXPECT_REC(rec, sum_min == g.rank() % 2);
  });
  INFO(rec.report());
  CHECK(rec.ok());
}

TEST_CASE("split: undefined color excludes the member") {
  Recorder rec;
  run_sized(4, [&](pt::NodeGroup& g) {
    int color = g.rank() == 2 ? pt::kSplitUndefined : 0;
    auto sub = pt::split(g, color);
    if (g.rank() == 2) {
      EXPECT_REC(rec, !sub.has_value());
    } else {
      EXPECT_REC(rec, sub.has_value());
      EXPECT_REC(rec, sub->size() == 3);
      int expect_rank = g.rank() < 2 ? g.rank() : g.rank() - 1;
      EXPECT_REC(rec, sub->rank() == expect_rank);
    }
  });
  INFO(rec.report());
  CHECK(rec.ok());
}

TEST_CASE("barrier completes on every rank") {
  Recorder rec;
  run_sized(6, [&](pt::NodeGroup& g) {
    for (int i = 0; i < 3; ++i) pt::barrier(g);
    EXPECT_REC(rec, true);
  });
  CHECK(rec.ok());
}
