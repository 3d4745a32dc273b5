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
#include <string>

#include "pt/exec.hpp"
#include "pt/transport.hpp"
#include "recorder.hpp"

namespace fs = std::filesystem;

namespace {

pt::HostSet hosts(std::initializer_list<const char*> names) {
  pt::HostSet s;
  for (const char* n : names) s.hosts.push_back(n);
  return s;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("ptexec_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << content;
}

// Run the SPMD body once and hand back rank 0's result.
template <typename F>
auto at_rank0(const pt::HostSet& hs, const fs::path& root, F&& f) {
  pt::LaunchOptions opt;
  opt.sim_root = root;
  using R = decltype(f(std::declval<pt::NodeGroup&>()));
  R result{};
  pt::run_sim_group(hs, opt, [&](pt::NodeGroup& g) {
    R r = f(g);
    if (g.rank() == 0) result = std::move(r);
  });
  return result;
}

}  // namespace

TEST_CASE("run_on_all: hostname on three sim nodes") {
  TempDir tmp;
  auto [out, rep] = at_rank0(
      hosts({"n1.x", "n2.x", "n3.x"}), tmp.path, [](pt::NodeGroup& g) {
        return pt::run_on_all(g, pt::CommandSpec{{"hostname"}, false});
      });
  CHECK(out == "n1.x\nn2.x\nn3.x\n");
  CHECK(rep.aggregate == 0);
  REQUIRE(rep.per_host.size() == 3);
  CHECK(rep.per_host[0] == std::pair<std::string, int>{"n1.x", 0});
}

TEST_CASE("run_on_all: headers appear even for silent nodes") {
  TempDir tmp;
  // give only node a2 a file to list
  write_file(tmp.path / "a2" / "only.txt", "");
  auto [out, rep] = at_rank0(hosts({"a1", "a2", "a3"}), tmp.path,
                             [](pt::NodeGroup& g) {
                               return pt::run_on_all(
                                   g, pt::CommandSpec{{"ls"}, true});
                             });
  CHECK(out == "[a1]\n[a2]\nonly.txt\n[a3]\n");
  CHECK(rep.aggregate == 0);
}

TEST_CASE("run_on_all: header-line count equals host count (property)") {
  TempDir tmp;
  for (int n : {1, 2, 5}) {
    pt::HostSet hs;
    for (int i = 0; i < n; ++i) hs.hosts.push_back("p" + std::to_string(i));
    auto [out, rep] = at_rank0(hs, tmp.path / std::to_string(n),
                               [](pt::NodeGroup& g) {
                                 return pt::run_on_all(
                                     g, pt::CommandSpec{{"ls"}, true});
                               });
    size_t headers = 0;
    for (size_t pos = 0; (pos = out.find('[', pos)) != std::string::npos; ++pos)
      ++headers;
    CHECK(headers == size_t(n));
  }
}

TEST_CASE("run_on_all: aggregate reflects any failure") {
  TempDir tmp;
  // file exists on b1 only; test -f fails on b2
  write_file(tmp.path / "b1" / "present", "");
  auto [out, rep] = at_rank0(
      hosts({"b1", "b2"}), tmp.path, [](pt::NodeGroup& g) {
        return pt::run_on_all(g, pt::CommandSpec{{"test", "-f", "present"}, false});
      });
  CHECK(rep.aggregate == 1);
  REQUIRE(rep.per_host.size() == 2);
  CHECK(rep.per_host[0].second == 0);
  CHECK(rep.per_host[1].second != 0);
}

TEST_CASE("run_on_all: output is deterministic across runs") {
  TempDir tmp;
  write_file(tmp.path / "c1" / "f1", "");
  write_file(tmp.path / "c2" / "f2", "");
  auto run = [&] {
    return at_rank0(hosts({"c1", "c2"}), tmp.path, [](pt::NodeGroup& g) {
      return pt::run_on_all(g, pt::CommandSpec{{"ls"}, true});
    });
  };
  auto first = run();
  auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.first == "[c1]\nf1\n[c2]\nf2\n");
}

TEST_CASE("run_on_all: unknown command yields per-node failure, not a crash") {
  TempDir tmp;
  auto [out, rep] = at_rank0(
      hosts({"u1"}), tmp.path, [](pt::NodeGroup& g) {
        return pt::run_on_all(g, pt::CommandSpec{{"no-such-command-xyz"}, false});
      });
  CHECK(rep.aggregate == 1);
  CHECK(rep.per_host[0].second == 127);
}

TEST_CASE("run_on_all: empty command is a usage error") {
  TempDir tmp;
  pt::LaunchOptions opt;
  opt.sim_root = tmp.path;
  CHECK_THROWS_AS(
      pt::run_sim_group(hosts({"x"}), opt,
                        [](pt::NodeGroup& g) {
                          pt::run_on_all(g, pt::CommandSpec{{}, false});
                        }),
      pt::UsageError);
}

TEST_CASE("wrapped_base_command covers the wrapper set") {
  CHECK(*pt::wrapped_base_command("ptrm") == "rm");
  CHECK(*pt::wrapped_base_command("ptmkdir") == "mkdir");
  CHECK(*pt::wrapped_base_command("ptrmdir") == "rmdir");
  CHECK(*pt::wrapped_base_command("ptchmod") == "chmod");
  CHECK(*pt::wrapped_base_command("ptchown") == "chown");
  CHECK(*pt::wrapped_base_command("ptchgrp") == "chgrp");
  CHECK(*pt::wrapped_base_command("ptln") == "ln");
  CHECK(*pt::wrapped_base_command("ptkillall") == "killall");
  CHECK(*pt::wrapped_base_command("ptls") == "ls");
  CHECK(*pt::wrapped_base_command("ptcat") == "cat");
  CHECK(*pt::wrapped_base_command("ptfind") == "find");
  CHECK_FALSE(pt::wrapped_base_command("ptcp").has_value());
}

TEST_CASE("run_wrapped: ptrm removes on every node") {
  TempDir tmp;
  for (const char* h : {"w1", "w2"}) write_file(tmp.path / h / "junk", "x");
  auto [out, rep] = at_rank0(hosts({"w1", "w2"}), tmp.path,
                             [](pt::NodeGroup& g) {
                               return pt::run_wrapped(g, "ptrm", {"junk"});
                             });
  CHECK(rep.aggregate == 0);
  CHECK_FALSE(fs::exists(tmp.path / "w1" / "junk"));
  CHECK_FALSE(fs::exists(tmp.path / "w2" / "junk"));
}

TEST_CASE("run_wrapped: ptmkdir twice fails the second time") {
  TempDir tmp;
  auto mk = [&] {
    return at_rank0(hosts({"m1", "m2"}), tmp.path, [](pt::NodeGroup& g) {
      return pt::run_wrapped(g, "ptmkdir", {"newdir"});
    });
  };
  CHECK(mk().second.aggregate == 0);
  CHECK(mk().second.aggregate != 0);
}

TEST_CASE("run_wrapped: -h headers only for the formatted trio") {
  TempDir tmp;
  write_file(tmp.path / "f1" / "data.txt", "payload\n");
  auto [out, rep] = at_rank0(hosts({"f1"}), tmp.path, [](pt::NodeGroup& g) {
    return pt::run_wrapped(g, "ptcat", {"-h", "data.txt"});
  });
  CHECK(out == "[f1]\npayload\n");
  CHECK(rep.aggregate == 0);
}

TEST_CASE("run_wrapped: unknown name is a usage error") {
  TempDir tmp;
  pt::LaunchOptions opt;
  opt.sim_root = tmp.path;
  CHECK_THROWS_AS(
      pt::run_sim_group(hosts({"x"}), opt,
                        [](pt::NodeGroup& g) {
                          pt::run_wrapped(g, "ptbogus", {});
                        }),
      pt::UsageError);
}
