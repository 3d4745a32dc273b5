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

#pragma once

#include <string>
#include <vector>

#include "pt/collectives.hpp"
#include "pt/exec.hpp"
#include "pt/testexpr.hpp"
#include "pt/transport.hpp"

namespace pt {

enum class TestMode { And, Or };

struct TestResult {
  std::vector<std::pair<std::string, bool>> per_host;  // rank order
  bool combined = false;
  TestMode mode = TestMode::Or;
};

/// SPMD body of pttesta/pttesto: run test(1) on every node and combine with
/// a logical reduction.  The per-host vector is only filled at rank 0.
inline TestResult pttest_run(const NodeGroup& g, TestMode mode,
                             const std::vector<std::string>& test_args) {
  check_test_expr(test_args);  // malformed expression is a usage error everywhere

  int flag;
  if (g.rank() == 0) {
    // rank 0 does not run the test; contribute the identity element
    flag = mode == TestMode::And ? 1 : 0;
  } else {
    flag = eval_test_expr(test_args, NodeCtx::self(g)) ? 1 : 0;
  }

  std::string mine(1, char('0' + flag));
  std::vector<std::string> all = gather(g, 0, mine);
  int64_t combined = reduce(
      g, 0, mode == TestMode::And ? ReduceOp::LogicalAnd : ReduceOp::LogicalOr,
      flag);

  TestResult res;
  res.mode = mode;
  if (g.rank() == 0) {
    for (int r = 1; r < g.size(); ++r)
      res.per_host.emplace_back(g.host_of(r), all[size_t(r)] == "1");
    res.combined = combined != 0;
  }
  return res;
}

/// SPMD body of ptpred: one `host: <true|false string>` line per host in
/// rank order.  Reporting tool: always "succeeds".
inline std::vector<std::string> ptpred_run(const NodeGroup& g,
                                           const std::vector<std::string>& test_args,
                                           const std::string& true_out,
                                           const std::string& false_out) {
  TestResult r = pttest_run(g, TestMode::Or, test_args);
  std::vector<std::string> lines;
  if (g.rank() == 0)
    for (const auto& [host, ok] : r.per_host)
      lines.push_back(host + ": " + (ok ? true_out : false_out));
  return lines;
}

}  // namespace pt
