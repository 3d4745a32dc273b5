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

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>

#include "pt/hostspec.hpp"

namespace {

// env lookup backed by a plain map, so tests never touch the real environment
pt::EnvLookup fake_env(const std::map<std::string, std::string>& vars) {
  return [vars](const char* name) -> const char* {
    auto it = vars.find(name);
    return it == vars.end() ? nullptr : it->second.c_str();
  };
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& content) {
    path = std::filesystem::temp_directory_path() /
           ("hostspec_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    std::ofstream(path) << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

}  // namespace

TEST_CASE("expand_pattern: ranged pattern with multiple ranges") {
  pt::HostSet s = pt::expand_pattern("ccn%d@1-32,42,65-96");
  REQUIRE(s.size() == 65);
  CHECK(s.hosts.front() == "ccn1");
  CHECK(s.hosts[31] == "ccn32");
  CHECK(s.hosts[32] == "ccn42");
  CHECK(s.hosts[33] == "ccn65");
  CHECK(s.hosts.back() == "ccn96");
}

TEST_CASE("expand_pattern: suffix pattern") {
  pt::HostSet s = pt::expand_pattern("ccn%d-myr@129-256");
  REQUIRE(s.size() == 128);
  CHECK(s.hosts.front() == "ccn129-myr");
  CHECK(s.hosts.back() == "ccn256-myr");
}

TEST_CASE("expand_pattern: explicit blank-separated list") {
  pt::HostSet s = pt::expand_pattern("donner dasher blitzen");
  CHECK(s.hosts == std::vector<std::string>{"donner", "dasher", "blitzen"});
  CHECK(s.origin == pt::HostOrigin::ExplicitList);
}

TEST_CASE("expand_pattern: single-element range") {
  CHECK(pt::expand_pattern("a%d@5-5").hosts == std::vector<std::string>{"a5"});
}

TEST_CASE("expand_pattern: duplicates preserved") {
  CHECK(pt::expand_pattern("h h h").size() == 3);
  CHECK(pt::expand_pattern("n%d@1-2,1-2").size() == 4);
}

TEST_CASE("expand_pattern: malformed patterns are usage errors") {
  CHECK_THROWS_AS(pt::expand_pattern("ccn%d"), pt::UsageError);       // missing @
  CHECK_THROWS_AS(pt::expand_pattern("ccn%d@"), pt::UsageError);      // empty ranges
  CHECK_THROWS_AS(pt::expand_pattern("ccn%d@5-2"), pt::UsageError);   // descending
  CHECK_THROWS_AS(pt::expand_pattern("ccn%d@a-b"), pt::UsageError);   // non-numeric
  CHECK_THROWS_AS(pt::expand_pattern("ccn%d@1,,3"), pt::UsageError);  // empty term
  CHECK_THROWS_AS(pt::expand_pattern("a%d@1@2"), pt::UsageError);     // two @
  CHECK_THROWS_AS(pt::expand_pattern("a%d%d@1-2"), pt::UsageError);   // two %d
  CHECK_THROWS_AS(pt::expand_pattern("a@1-3"), pt::UsageError);       // @ without %d
  CHECK_THROWS_AS(pt::expand_pattern(""), pt::UsageError);
}

TEST_CASE("expand_pattern: length equals sum of range widths (property)") {
  std::mt19937 rng(20260823);
  for (int trial = 0; trial < 200; ++trial) {
    int nranges = 1 + int(rng() % 4);
    std::string spec = "host%d-x@";
    size_t expect = 0;
    for (int i = 0; i < nranges; ++i) {
      unsigned long lo = rng() % 1000;
      unsigned long hi = lo + rng() % 50;
      expect += hi - lo + 1;
      if (i) spec += ",";
      if (lo == hi && rng() % 2) {
        spec += std::to_string(lo);
      } else {
        spec += std::to_string(lo) + "-" + std::to_string(hi);
      }
    }
    pt::HostSet s = pt::expand_pattern(spec);
    REQUIRE(s.size() == expect);
    // k-th host depends only on the k-th index: spot-check the first host
    CHECK(s.hosts.front().rfind("host", 0) == 0);
  }
}

TEST_CASE("read_machine_file_content: comments and blanks filtered") {
  CHECK(pt::read_machine_file_content("h1\nh2\n", pt::HostOrigin::MachineFile)
            .hosts == std::vector<std::string>{"h1", "h2"});
  CHECK(pt::read_machine_file_content("h1\n\n# c\n  h2  ",
                                      pt::HostOrigin::MachineFile)
            .hosts == std::vector<std::string>{"h1", "h2"});
  CHECK_THROWS_AS(
      pt::read_machine_file_content("", pt::HostOrigin::MachineFile),
      pt::UsageError);
  CHECK_THROWS_AS(
      pt::read_machine_file_content("# only\n\n", pt::HostOrigin::MachineFile),
      pt::UsageError);
}

TEST_CASE("resolve_hosts: PT_MACHINE_FILE overrides and consumes nothing") {
  TempFile mf("h1\nh2\n");
  auto env = fake_env({{"PT_MACHINE_FILE", mf.path}});
  pt::ResolvedHosts r = pt::resolve_hosts({"-M", "x%d@1-9"}, env);
  CHECK(r.hosts.hosts == std::vector<std::string>{"h1", "h2"});
  CHECK(r.hosts.origin == pt::HostOrigin::EnvFile);
  CHECK(r.consumed == 0);

  // the override also applies with no host argument at all
  pt::ResolvedHosts r2 = pt::resolve_hosts({}, env);
  CHECK(r2.hosts.hosts == std::vector<std::string>{"h1", "h2"});
}

TEST_CASE("resolve_hosts: -m reads the named machine file") {
  TempFile mf("alpha\nbeta\n");
  pt::ResolvedHosts r = pt::resolve_hosts({"-m", mf.path}, fake_env({}));
  CHECK(r.hosts.hosts == std::vector<std::string>{"alpha", "beta"});
  CHECK(r.hosts.origin == pt::HostOrigin::MachineFile);
  CHECK(r.consumed == 2);
}

TEST_CASE("resolve_hosts: -M expands a pattern") {
  pt::ResolvedHosts r = pt::resolve_hosts({"-M", "n%d@1-3", "tail"}, fake_env({}));
  CHECK(r.hosts.hosts == std::vector<std::string>{"n1", "n2", "n3"});
  CHECK(r.consumed == 2);
}

TEST_CASE("resolve_hosts: -all uses PT_ALL_HOSTS_FILE") {
  TempFile all("n1\nn2\nn3\n");
  pt::ResolvedHosts r =
      pt::resolve_hosts({"-all"}, fake_env({{"PT_ALL_HOSTS_FILE", all.path}}));
  CHECK(r.hosts.hosts == std::vector<std::string>{"n1", "n2", "n3"});
  CHECK(r.hosts.origin == pt::HostOrigin::All);
  CHECK(r.consumed == 1);
}

TEST_CASE("resolve_hosts: error cases") {
  CHECK_THROWS_AS(pt::resolve_hosts({}, fake_env({})), pt::UsageError);
  CHECK_THROWS_AS(pt::resolve_hosts({"-m"}, fake_env({})), pt::UsageError);
  CHECK_THROWS_AS(pt::resolve_hosts({"-m", "/nonexistent/file"}, fake_env({})),
                  pt::UsageError);
  CHECK_THROWS_AS(pt::resolve_hosts({"-M"}, fake_env({})), pt::UsageError);
  CHECK_THROWS_AS(pt::resolve_hosts({"somefile"}, fake_env({})), pt::UsageError);
  // -all with neither env var nor home directory
  CHECK_THROWS_AS(pt::resolve_hosts({"-all"}, fake_env({})), pt::UsageError);
}
