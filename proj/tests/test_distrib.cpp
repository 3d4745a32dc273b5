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

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pt/distrib.hpp"
#include "pt/transport.hpp"
#include "recorder.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("ptdistrib_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

// The listed hosts become worker ranks 1..n; the implicit rank 0 is the
// console running the scheduler.
pt::HostSet workers(int n) {
  pt::HostSet s;
  for (int i = 1; i <= n; ++i) s.hosts.push_back("w" + std::to_string(i));
  return s;
}

std::vector<std::string> make_inputs(const fs::path& dir, int n,
                                     const std::string& content = "data\n") {
  std::vector<std::string> files;
  fs::create_directories(dir);
  for (int i = 0; i < n; ++i) {
    fs::path p = dir / ("in" + std::to_string(i) + ".txt");
    std::ofstream(p) << content << i << "\n";
    files.push_back(p.string());
  }
  return files;
}

pt::DistribResult run_distrib(int nworkers, const std::vector<std::string>& files,
                              const std::string& tmpl,
                              pt::DistribOptions opt = {},
                              const fs::path& sim_root = {}) {
  TempDir fallback;
  pt::LaunchOptions lopt;
  lopt.sim_root = sim_root.empty() ? fallback.path : sim_root;
  pt::DistribResult result;
  pt::run_sim_group(workers(nworkers), lopt, [&](pt::NodeGroup& g) {
    pt::DistribResult r = pt::ptdistrib_run(g, opt, tmpl, files);
    if (g.rank() == 0) result = std::move(r);
  });
  return result;
}

}  // namespace

TEST_CASE("substitute") {
  CHECK(pt::substitute("cc -c {}", "a.c") ==
        std::vector<std::string>{"cc", "-c", "a.c"});
  CHECK(pt::substitute("echo {} {}", "f") ==
        std::vector<std::string>{"echo", "f", "f"});
  CHECK(pt::substitute("wc -l", "f") ==
        std::vector<std::string>{"wc", "-l", "f"});
  CHECK_THROWS_AS(pt::substitute("", "f"), pt::UsageError);
  CHECK_THROWS_AS(pt::substitute("{}", ""), pt::UsageError);
}

TEST_CASE("one worker runs files in input order") {
  TempDir in;
  auto files = make_inputs(in.path / "src", 3);
  pt::DistribResult r = run_distrib(1, files, "cat {}");
  REQUIRE(r.jobs.size() == 3);
  CHECK(r.report.aggregate == 0);
  CHECK(r.rounds == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(r.jobs[size_t(i)].status == pt::JobStatus::Done);
    CHECK(r.jobs[size_t(i)].exit_code == 0);
    CHECK(r.jobs[size_t(i)].assigned_rank == 1);
    CHECK(r.jobs[size_t(i)].round_started == i);
  }
}

TEST_CASE("three workers, three files: one each in a single round") {
  TempDir in;
  auto files = make_inputs(in.path / "src", 3);
  pt::DistribResult r = run_distrib(3, files, "cat {}");
  CHECK(r.rounds == 1);
  std::map<int, int> jobs_per_worker;
  for (const auto& j : r.jobs) {
    REQUIRE(j.assigned_rank.has_value());
    ++jobs_per_worker[*j.assigned_rank];
  }
  CHECK(jobs_per_worker.size() == 3);
  for (const auto& [rank, count] : jobs_per_worker) CHECK(count == 1);
}

TEST_CASE("rounds = ceil(n/w) with unit durations") {
  struct Case { int workers, files, rounds; };
  for (Case c : {Case{1, 5, 5}, Case{3, 3, 1}, Case{2, 6, 3}, Case{4, 13, 4}}) {
    TempDir in;
    auto files = make_inputs(in.path / "src", c.files);
    pt::DistribResult r = run_distrib(c.workers, files, "cat {}");
    INFO("workers=" << c.workers << " files=" << c.files);
    CHECK(r.rounds == c.rounds);
    CHECK(r.report.aggregate == 0);
  }
}

TEST_CASE("exactly-once: every file Done once, no worker overlap") {
  TempDir in;
  auto files = make_inputs(in.path / "src", 13);
  pt::DistribResult r = run_distrib(4, files, "cat {}");
  REQUIRE(r.jobs.size() == 13);
  std::map<std::string, int> done_count;
  // per worker, at most one job per round (disjoint running intervals)
  std::map<std::pair<int, int>, int> per_worker_round;
  for (const auto& j : r.jobs) {
    CHECK(j.status == pt::JobStatus::Done);
    ++done_count[j.file];
    REQUIRE(j.assigned_rank.has_value());
    ++per_worker_round[{*j.assigned_rank, j.round_started}];
  }
  for (const auto& f : files) CHECK(done_count[f] == 1);
  for (const auto& [key, n] : per_worker_round) CHECK(n == 1);
}

TEST_CASE("unusable worker is dropped and its file requeued") {
  TempDir in, sim;
  auto files = make_inputs(in.path / "src", 6);
  // worker w2 declares itself unusable
  fs::create_directories(sim.path / "w2");
  std::ofstream(sim.path / "w2" / ".pt_unusable") << "";
  pt::DistribResult r = run_distrib(2, files, "cat {}", {}, sim.path);
  CHECK(r.report.aggregate == 0);
  CHECK(r.unprocessed.empty());
  std::map<std::string, int> done_count;
  for (const auto& j : r.jobs) {
    CHECK(j.status == pt::JobStatus::Done);
    CHECK(*j.assigned_rank == 1);  // only the healthy worker ever finishes one
    ++done_count[j.file];
  }
  for (const auto& f : files) CHECK(done_count[f] == 1);
}

TEST_CASE("all workers unusable: unprocessed files reported, aggregate fails") {
  TempDir in, sim;
  auto files = make_inputs(in.path / "src", 4);
  for (const char* w : {"w1", "w2"}) {
    fs::create_directories(sim.path / w);
    std::ofstream(sim.path / w / ".pt_unusable") << "";
  }
  pt::DistribResult r = run_distrib(2, files, "cat {}", {}, sim.path);
  CHECK(r.report.aggregate == 1);
  CHECK(r.unprocessed.size() == 4);
}

TEST_CASE("fetch returns outputs to the invoking directory") {
  TempDir in, out;
  auto files = make_inputs(in.path / "src", 3);
  pt::DistribOptions opt;
  opt.fetch = true;
  opt.fetch_dir = out.path;
  pt::DistribResult r = run_distrib(2, files, "cp {} {}.out", opt);
  CHECK(r.report.aggregate == 0);
  for (int i = 0; i < 3; ++i) {
    fs::path fetched = out.path / ("in" + std::to_string(i) + ".txt.out");
    INFO(fetched);
    REQUIRE(fs::is_regular_file(fetched));
    std::ifstream f(fetched);
    std::stringstream ss;
    ss << f.rdbuf();
    CHECK(ss.str() == "data\n" + std::to_string(i) + "\n");
  }
}

TEST_CASE("fetch off: no local outputs appear") {
  TempDir in, out;
  auto files = make_inputs(in.path / "src", 2);
  pt::DistribOptions opt;
  opt.fetch = false;
  opt.fetch_dir = out.path;
  run_distrib(2, files, "cp {} {}.out", opt);
  CHECK(fs::is_empty(out.path));
}

TEST_CASE("fetch collision: later write wins with a warning") {
  TempDir in, out;
  auto files = make_inputs(in.path / "src", 2);
  pt::DistribOptions opt;
  opt.fetch = true;
  opt.fetch_dir = out.path;
  // both jobs produce the same output name
  pt::DistribResult r = run_distrib(1, files, "cp {} clash.out", opt);
  CHECK(fs::is_regular_file(out.path / "clash.out"));
  CHECK_FALSE(r.warnings.empty());
}

TEST_CASE("one failing job does not disturb the others") {
  TempDir in;
  auto files = make_inputs(in.path / "src", 3);
  // make the middle input empty so `test -s` fails for it alone
  std::ofstream(files[1], std::ios::trunc);
  pt::DistribResult r = run_distrib(2, files, "test -s {}");
  CHECK(r.report.aggregate != 0);
  CHECK(r.jobs[0].exit_code == 0);
  CHECK(r.jobs[1].exit_code != 0);
  CHECK(r.jobs[2].exit_code == 0);
  for (const auto& j : r.jobs) CHECK(j.status == pt::JobStatus::Done);
}

TEST_CASE("usage errors: no files, unreadable file") {
  TempDir in;
  pt::LaunchOptions lopt;
  lopt.sim_root = in.path / "sim";
  CHECK_THROWS_AS(
      pt::run_sim_group(workers(1), lopt,
                        [&](pt::NodeGroup& g) {
                          pt::ptdistrib_run(g, {}, "cat {}", {});
                        }),
      pt::UsageError);
  CHECK_THROWS_AS(
      pt::run_sim_group(workers(1), lopt,
                        [&](pt::NodeGroup& g) {
                          pt::ptdistrib_run(g, {}, "cat {}",
                                            {(in.path / "missing").string()});
                        }),
      pt::UsageError);
}
