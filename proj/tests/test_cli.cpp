// Copyright 2026 The bfpd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <sys/wait.h>

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bfpd/io.hpp"
#include "bfpd/rational.hpp"

using bfpd::Json;
using bfpd::Rat;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

std::string data_file(const std::string& name) {
  return std::string(BFPD_DATA_DIR) + "/" + name;
}

// Runs the command-line binary with stderr discarded and stdout captured.
CliRun run_cli(const std::string& args, const std::string& env = "") {
  std::string cmd;
  if (!env.empty()) cmd += env + " ";
  cmd += std::string(BFPD_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliRun r;
  char buf[4096];
  std::size_t got = 0;
  while ((got = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  REQUIRE(f.good());
  f << text;
}

std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream s(line);
  while (std::getline(s, item, ',')) out.push_back(item);
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::string line;
  std::istringstream s(text);
  while (std::getline(s, line)) out.push_back(line);
  return out;
}

const char kBenchHeader[] =
    "n,k,theta,theta_dec_lossy,mechanism,value,value_dec_lossy,opt_f_k,opt_f_k_dec_lossy,"
    "opt_i_k,opt_i_k_dec_lossy,ratio,ratio_dec_lossy,pay_over_budget,pay_over_budget_dec_lossy";

}  // namespace

TEST_CASE("solve matches the hand-derived tight-instance records", "[cli]") {
  CliRun r = run_cli("solve --mechanism prune-assign " + data_file("tight_eps100.json"));
  REQUIRE(r.code == 0);
  const Json rec = Json::parse(r.out);
  CHECK(rec["mechanism"] == "prune-assign");
  CHECK(rec["outcome"]["allocation"]["mode"] == "fraction");
  CHECK(rec["outcome"]["payments"] == Json::array({"9999/40000", "20199/40000"}));
  CHECK(Rat::parse(rec["outcome"]["total_payment"].get<std::string>()) == Rat(30198, 40000));
  CHECK(rec["outcome"]["value"] == "1");
  CHECK(rec["benchmarks"]["opt_f"] == "2");
  CHECK(rec["ratios"]["opt_f_over_value"] == "2");
  CHECK_FALSE(rec.contains("wall_time_ms"));

  CliRun r10 = run_cli("solve --mechanism prune-assign " + data_file("tight_eps10.json"));
  REQUIRE(r10.code == 0);
  const Json rec10 = Json::parse(r10.out);
  CHECK(rec10["outcome"]["payments"] == Json::array({"99/400", "219/400"}));
  CHECK(rec10["outcome"]["value"] == "1");
  CHECK(rec10["ratios"]["opt_f_over_value"] == "2");
}

TEST_CASE("solve reproduces the symmetric five-agent outcome", "[cli]") {
  CliRun r = run_cli("solve --mechanism sort-reject " + data_file("symmetric_five.json"));
  REQUIRE(r.code == 0);
  const Json rec = Json::parse(r.out);
  CHECK(rec["outcome"]["allocation"]["x"] == Json::array({"1", "1", "0", "0", "0"}));
  CHECK(rec["outcome"]["payments"] == Json::array({"1", "1", "0", "0", "0"}));
  CHECK(rec["benchmarks"]["opt_f_k"] == "4");
  CHECK(rec["benchmarks"]["opt_i_k"] == "4");
  CHECK(rec["ratios"]["opt_i_over_value"] == "2");
  CHECK(rec["budget"] == "4");
}

TEST_CASE("solve spellings agree and records are byte-stable", "[cli]") {
  const std::string args = "solve --mechanism sort-reject ";
  CliRun positional = run_cli(args + data_file("two_agent.json"));
  CliRun flagged = run_cli(args + "--in " + data_file("two_agent.json"));
  CliRun again = run_cli(args + data_file("two_agent.json"));
  REQUIRE(positional.code == 0);
  REQUIRE(flagged.code == 0);
  CHECK(positional.out == flagged.out);
  CHECK(positional.out == again.out);

  const Json rec = Json::parse(positional.out);
  CHECK(rec["instance_digest"].get<std::string>().size() == 16);
  CHECK(rec["budget"] == "5/2");
  CHECK(rec["outcome"]["allocation"]["x"] == Json::array({"2", "0"}));
  CHECK(rec["outcome"]["payments"] == Json::array({"5/2", "0"}));
  CHECK(rec["outcome"]["diagnostics"]["if_branch"] == true);

  const std::string out_path = "cli_tmp_record.json";
  CliRun to_file = run_cli(args + "--out " + out_path + " " + data_file("two_agent.json"));
  REQUIRE(to_file.code == 0);
  CHECK(to_file.out.empty());
  CHECK(read_file(out_path) == positional.out);
  std::remove(out_path.c_str());

  CliRun timed = run_cli(args + "--timings " + data_file("two_agent.json"));
  REQUIRE(timed.code == 0);
  CHECK(Json::parse(timed.out).contains("wall_time_ms"));
}

TEST_CASE("solve runs best-in with its certified or supplied rate", "[cli]") {
  CliRun r = run_cli("solve --mechanism best-in " + data_file("best_in_three.json"));
  REQUIRE(r.code == 0);
  const Json rec = Json::parse(r.out);
  CHECK(rec["outcome"]["allocation"]["x"] == Json::array({"1", "0", "0"}));
  CHECK(rec["config"].contains("alpha"));
  CHECK(rec["config"].contains("beta"));

  // At k = 1 the rate 1/5 is certified and pins beta = (1 - 2/5)/(1/5 + 1).
  CliRun fixed =
      run_cli("solve --mechanism best-in --alpha 1/5 " + data_file("best_in_three.json"));
  REQUIRE(fixed.code == 0);
  const Json frec = Json::parse(fixed.out);
  CHECK(frec["config"]["alpha"] == "1/5");
  CHECK(frec["config"]["beta"] == "1/2");
}

TEST_CASE("solve enforces the model and regime gates", "[cli]") {
  const std::pair<const char*, const char*> cases[] = {
      {"sort-reject", "tight_eps100.json"}, {"prune-assign", "two_agent.json"},
      {"chunk-solve", "two_agent.json"},    {"best-in", "two_agent.json"},
      {"sort-reject", "best_in_three.json"}};
  for (const auto& [mechanism, file] : cases) {
    CAPTURE(mechanism, file);
    CliRun r = run_cli(std::string("solve --mechanism ") + mechanism + " " + data_file(file));
    CHECK(r.code == 3);
    CHECK(Json::parse(r.out)["error"] == "mismatch");
  }

  // A valid divisible instance with no value anywhere cannot seed the rate
  // mechanism either; that is an instance/mechanism mismatch, not bad input.
  const std::string zero_path = "cli_tmp_zero.json";
  write_file(zero_path,
             "{\"model\":\"divisible\",\"budget\":\"1\",\"agents\":[{\"cost\":\"1/2\","
             "\"valuation\":{\"type\":\"linear\",\"slope\":\"0\"}}]}");
  CliRun zero = run_cli("solve --mechanism prune-assign " + zero_path);
  CHECK(zero.code == 3);
  CHECK(Json::parse(zero.out)["error"] == "mismatch");
  std::remove(zero_path.c_str());
}

TEST_CASE("solve reports parse and validation failures machine-readably", "[cli]") {
  CliRun missing = run_cli("solve --mechanism sort-reject no_such_file.json");
  CHECK(missing.code == 2);
  CHECK(Json::parse(missing.out)["error"] == "parse");

  const std::string bad_json = "cli_tmp_malformed.json";
  write_file(bad_json, "{\"model\": \"k-level\",");
  CliRun malformed = run_cli("solve --mechanism sort-reject " + bad_json);
  CHECK(malformed.code == 2);
  CHECK(Json::parse(malformed.out)["error"] == "parse");
  std::remove(bad_json.c_str());

  const std::string bad_budget = "cli_tmp_budget.json";
  write_file(bad_budget,
             "{\"model\":\"k-level\",\"budget\":\"0\",\"k\":2,\"regime\":\"all-in\","
             "\"agents\":[{\"cost\":\"1\",\"marginals\":[\"4\",\"2\"]}]}");
  CliRun invalid = run_cli("solve --mechanism sort-reject " + bad_budget);
  CHECK(invalid.code == 2);
  const Json report = Json::parse(invalid.out);
  CHECK(report["error"] == "validation");
  REQUIRE(report["violations"].size() == 1);
  CHECK(report["violations"][0]["agent"] == -1);
  CHECK(report["violations"][0]["rule"].get<std::string>().find("NonPositive") !=
        std::string::npos);
  std::remove(bad_budget.c_str());
}

TEST_CASE("solve rejects bad rate configurations", "[cli]") {
  const char* bad[] = {
      "solve --mechanism sort-reject --alpha 1/2",
      "solve --mechanism sort-reject --alpha 1/4 --theta 1/10",
      "solve --mechanism sort-reject --alpha banana",
  };
  for (const char* args : bad) {
    CAPTURE(args);
    CliRun r = run_cli(std::string(args) + " " + data_file("two_agent.json"));
    CHECK(r.code == 2);
    CHECK(Json::parse(r.out)["error"] == "config");
  }

  CliRun theta_bi =
      run_cli("solve --mechanism best-in --theta 1/10 " + data_file("best_in_three.json"));
  CHECK(theta_bi.code == 2);
  CHECK(Json::parse(theta_bi.out)["error"] == "config");

  CliRun alpha_div =
      run_cli("solve --mechanism prune-assign --alpha 1/4 " + data_file("tight_eps100.json"));
  CHECK(alpha_div.code == 2);
  CHECK(Json::parse(alpha_div.out)["error"] == "config");

  CliRun good = run_cli("solve --mechanism sort-reject --alpha 1/4 " + data_file("two_agent.json"));
  REQUIRE(good.code == 0);
  CHECK(Json::parse(good.out)["config"]["alpha"] == "1/4");

  CliRun themed =
      run_cli("solve --mechanism sort-reject --theta 1/10 " + data_file("symmetric_five.json"));
  REQUIRE(themed.code == 0);
  const Json rec = Json::parse(themed.out);
  CHECK(rec["config"]["theta"] == "1/10");
  const Rat alpha = Rat::parse(rec["config"]["alpha"].get<std::string>());
  // theta + alpha <= (1 - alpha)^2 holds exactly for the certified rate.
  CHECK((Rat(1) - alpha) * (Rat(1) - alpha) - alpha - Rat(1, 10) >= Rat(0));
}

TEST_CASE("solve usage errors exit with code 2", "[cli]") {
  CHECK(run_cli("solve --mechanism sort-reject").code == 2);
  CHECK(run_cli("solve --mechanism sort-reject --in " + data_file("two_agent.json") + " " +
                data_file("two_agent.json"))
            .code == 2);
  CHECK(run_cli("solve --mechanism frobnicate " + data_file("two_agent.json")).code == 2);
  CHECK(run_cli("").code == 2);
  CHECK(run_cli("conjure").code == 2);
}

TEST_CASE("audit exits zero on clean corpora for every mechanism", "[cli]") {
  for (const char* mechanism : {"sort-reject", "best-in", "prune-assign", "chunk-solve"}) {
    CAPTURE(mechanism);
    CliRun r = run_cli(std::string("audit --mechanism ") + mechanism + " --trials 30 --seed 5");
    REQUIRE(r.code == 0);
    const Json rep = Json::parse(r.out);
    CHECK(rep["summary"]["all_passed"] == true);
    CHECK(rep["summary"]["failures"] == 0);
    CHECK(rep["summary"]["checks"].get<long>() > 100);
  }
}

TEST_CASE("audit with zero trials emits the empty report", "[cli]") {
  CliRun r = run_cli("audit --mechanism sort-reject --trials 0");
  CHECK(r.code == 0);
  CHECK(r.out ==
        "{\n"
        "  \"summary\": {\n"
        "    \"properties\": 0,\n"
        "    \"checks\": 0,\n"
        "    \"failures\": 0,\n"
        "    \"all_passed\": true\n"
        "  },\n"
        "  \"properties\": []\n"
        "}\n");
}

TEST_CASE("audit reports are byte-stable for fixed flags and seed", "[cli]") {
  const std::string args = "audit --mechanism sort-reject --trials 10 --seed 42";
  CliRun first = run_cli(args);
  CliRun second = run_cli(args);
  REQUIRE(first.code == 0);
  CHECK(first.out == second.out);
}

TEST_CASE("fault injection is caught and carries a witness", "[cli]") {
  CliRun pa = run_cli("audit --mechanism prune-assign --trials 3 --inject-fault");
  CHECK(pa.code == 1);
  const Json rep = Json::parse(pa.out);
  CHECK(rep["summary"]["all_passed"] == false);
  bool found = false;
  for (const Json& p : rep["properties"]) {
    if (p["name"] != "assignment.rate-split-identity") continue;
    found = true;
    CHECK(p["failed"].get<long>() == 3);
    REQUIRE_FALSE(p["failure_witness"].is_null());
    CHECK(p["failure_witness"].contains("model"));
  }
  CHECK(found);

  CliRun chunk = run_cli("audit --mechanism chunk-solve --trials 2 --inject-fault");
  CHECK(chunk.code == 1);
  CHECK(Json::parse(chunk.out)["summary"]["failures"].get<long>() >= 1);
}

TEST_CASE("bench symmetric family emits the golden CSV", "[cli]") {
  CliRun r = run_cli("bench --family symmetric");
  REQUIRE(r.code == 0);
  CHECK(r.out ==
        std::string(kBenchHeader) +
            "\n"
            "3,1,1/2,0.5,sort-reject,1,1,2,2,2,2,2,2,1/2,0.5\n"
            "4,1,1/3,0.333333333333,sort-reject,1,1,3,3,3,3,3,3,1/3,0.333333333333\n"
            "5,1,1/4,0.25,sort-reject,2,2,4,4,4,4,2,2,1/2,0.5\n"
            "6,1,1/5,0.2,sort-reject,2,2,5,5,5,5,5/2,2.5,2/5,0.4\n");

  // Every row respects the sort-reject guarantee OPT_F <= value / alpha.
  const Rat inv_alpha(1000000, 267949);
  const auto rows = lines_of(r.out);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = csv_fields(rows[i]);
    REQUIRE(f.size() == 15);
    CHECK(Rat::parse(f[11]) <= inv_alpha);
    CHECK(Rat::parse(f[13]) <= Rat(1));
  }
}

TEST_CASE("bench large-market family meets the certified rate bound", "[cli]") {
  CliRun r = run_cli("bench --family large-market");
  REQUIRE(r.code == 0);
  CHECK(r.out ==
        std::string(kBenchHeader) +
            "\n"
            "5,2,1/5,0.2,sort-reject,2,2,5,5,5,5,5/2,2.5,2/5,0.4\n"
            "6,3,1/10,0.1,sort-reject,4,4,10,10,10,10,5/2,2.5,2/5,0.4\n"
            "6,5,1/20,0.05,sort-reject,8,8,20,20,20,20,5/2,2.5,2/5,0.4\n");

  const auto rows = lines_of(r.out);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = csv_fields(rows[i]);
    REQUIRE(f.size() == 15);
    const double theta = Rat::parse(f[2]).to_double();
    const double ratio = Rat::parse(f[11]).to_double();
    CHECK(ratio <= (3.0 + std::sqrt(5.0 + 4.0 * theta)) / (2.0 * (1.0 - theta)) + 1e-6);
    CHECK(Rat::parse(f[13]) <= Rat(1));
  }
}

TEST_CASE("bench handles explicit, empty, and bad sizes", "[cli]") {
  CliRun empty = run_cli("bench --family symmetric --sizes \"\"");
  CHECK(empty.code == 0);
  CHECK(empty.out == std::string(kBenchHeader) + "\n");
  CliRun empty_lm = run_cli("bench --family large-market --sizes \"\"");
  CHECK(empty_lm.code == 0);
  CHECK(empty_lm.out == std::string(kBenchHeader) + "\n");

  CliRun one = run_cli("bench --family symmetric --sizes 4");
  REQUIRE(one.code == 0);
  REQUIRE(lines_of(one.out).size() == 2);
  CHECK(csv_fields(lines_of(one.out)[1])[0] == "4");

  CHECK(run_cli("bench --family symmetric --sizes 1").code == 2);
  CHECK(run_cli("bench --family symmetric --sizes x").code == 2);
  CHECK(run_cli("bench --family large-market --sizes 1").code == 2);
  CHECK(run_cli("bench --family large-market --sizes 3/2").code == 2);

  CliRun to_file = run_cli("bench --family large-market --out cli_tmp_bench.csv");
  REQUIRE(to_file.code == 0);
  CHECK(to_file.out.empty());
  CHECK(read_file("cli_tmp_bench.csv") == run_cli("bench --family large-market").out);
  std::remove("cli_tmp_bench.csv");
}

TEST_CASE("enumeration cap environment variable is honored", "[cli]") {
  CliRun capped = run_cli("solve --mechanism sort-reject " + data_file("symmetric_five.json"),
                          "BFPD_ENUM_CAP=2");
  REQUIRE(capped.code == 0);
  const Json rec = Json::parse(capped.out);
  CHECK_FALSE(rec["benchmarks"].contains("opt_i_k"));
  CHECK_FALSE(rec["ratios"].contains("opt_i_over_value"));

  CliRun bench = run_cli("bench --family symmetric", "BFPD_ENUM_CAP=2");
  CHECK(bench.code == 2);
  CHECK(Json::parse(bench.out)["error"] == "too-large");

  CliRun garbage = run_cli("solve --mechanism sort-reject " + data_file("two_agent.json"),
                           "BFPD_ENUM_CAP=banana");
  CHECK(garbage.code == 2);
  CHECK(Json::parse(garbage.out)["error"] == "config");
}
