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

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "bfpd/divisible_mech.hpp"
#include "bfpd/harness.hpp"
#include "bfpd/io.hpp"
#include "bfpd/klevel_mech.hpp"
#include "bfpd/knapsack.hpp"
#include "bfpd/model.hpp"
#include "bfpd/payments.hpp"
#include "bfpd/rational.hpp"

namespace {

using bfpd::Json;
using bfpd::Rat;

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

// Machine-readable error report on stdout, human echo on stderr.
int fail_with(const char* kind, const std::string& detail, int code) {
  std::cout << bfpd::dump_pretty(Json{{"error", kind}, {"detail", detail}});
  std::cerr << "bfpd: " << detail << "\n";
  return code;
}

int fail_validation(const bfpd::ValidationError& e) {
  Json violations = Json::array();
  for (const auto& v : e.violations())
    violations.push_back(Json{{"agent", v.agent}, {"rule", v.rule}});
  std::cout << bfpd::dump_pretty(
      Json{{"error", "validation"}, {"violations", std::move(violations)}, {"detail", e.what()}});
  std::cerr << "bfpd: " << e.what() << "\n";
  return 2;
}

void emit(const std::string& out_path, const std::string& text, const char* what) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    bfpd::save_text(out_path, text);
    std::cerr << "bfpd: wrote " << what << " to " << out_path << "\n";
  }
}

// Enumeration budget for the brute-force oracle; BFPD_ENUM_CAP overrides it.
long enum_cap() {
  const char* env = std::getenv("BFPD_ENUM_CAP");
  if (!env || !*env) return bfpd::kDefaultEnumCap;
  char* end = nullptr;
  long cap = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || cap < 1)
    throw std::invalid_argument(std::string("BFPD_ENUM_CAP must be a positive integer, got \"") +
                                env + "\"");
  return cap;
}

// Display-only decimal rendering, 12 significant digits; never fed back into
// any computation.
std::string dec12(const Rat& v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v.to_double());
  return buf;
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

struct SolveArgs {
  std::string file;
  std::string in_flag;
  std::string mechanism;
  std::string alpha;
  std::string theta;
  std::string out_path;
  bool timings = false;
};

// Every ratio in a run record must be re-derivable from the record's own
// fields; drift here means the record assembly has a bug.
void verify_record_ratios(const Json& rec) {
  const Rat value = Rat::parse(rec["outcome"]["value"].get<std::string>());
  const Rat total = Rat::parse(rec["outcome"]["total_payment"].get<std::string>());
  const Rat budget = Rat::parse(rec["budget"].get<std::string>());
  const Json& bench = rec["benchmarks"];
  const Json& ratios = rec["ratios"];
  auto expect = [&](const char* key, const Rat& want) {
    if (!ratios.contains(key) || Rat::parse(ratios[key].get<std::string>()) != want)
      throw std::logic_error(std::string("run record ratio drift on ") + key);
  };
  expect("payment_over_budget", total / budget);
  const char* fkey = bench.contains("opt_f_k") ? "opt_f_k" : "opt_f";
  if (bench.contains(fkey) && value.is_positive())
    expect("opt_f_over_value", Rat::parse(bench[fkey].get<std::string>()) / value);
  if (bench.contains("opt_i_k") && value.is_positive())
    expect("opt_i_over_value", Rat::parse(bench["opt_i_k"].get<std::string>()) / value);
}

int cmd_solve(const SolveArgs& a) {
  if (a.file.empty() == a.in_flag.empty())
    return fail_with("usage", "pass the instance file exactly once (positional or --in)", 2);
  const std::string path = a.file.empty() ? a.in_flag : a.file;

  Json doc;
  bfpd::ParsedInstance parsed;
  try {
    doc = bfpd::load_json(path);
    parsed = bfpd::parse_instance(doc);
  } catch (const bfpd::ValidationError& e) {
    return fail_validation(e);
  } catch (const bfpd::ParseError& e) {
    return fail_with("parse", e.what(), 2);
  }

  std::optional<Rat> alpha, theta;
  try {
    if (!a.alpha.empty()) alpha = Rat::parse(a.alpha);
    if (!a.theta.empty()) theta = Rat::parse(a.theta);
  } catch (const std::exception& e) {
    return fail_with("config", std::string("bad rate flag: ") + e.what(), 2);
  }
  if (alpha && theta) return fail_with("config", "--alpha and --theta are mutually exclusive", 2);

  const long cap = enum_cap();
  const bool klevel_mechanism = a.mechanism == "sort-reject" || a.mechanism == "best-in";

  Json config = Json::object();
  Json benchmarks = Json::object();
  Json ratios = Json::object();
  bfpd::Outcome out;
  Rat budget;
  double wall_ms = 0;

  if (klevel_mechanism) {
    const auto* in = std::get_if<bfpd::KLevelInstance>(&parsed);
    if (!in)
      return fail_with("mismatch", a.mechanism + " runs on k-level instances, got divisible", 3);
    budget = in->budget;

    bfpd::KLevelRule rule = bfpd::KLevelRule::sort_reject();
    try {
      if (a.mechanism == "sort-reject") {
        if (in->regime != bfpd::Regime::AllIn)
          return fail_with("mismatch", "sort-reject runs in the all-in regime", 3);
        bfpd::SortRejectConfig cfg;
        if (theta)
          cfg = bfpd::large_market_config(*theta);
        else if (alpha)
          cfg = bfpd::SortRejectConfig(*alpha);
        rule = bfpd::KLevelRule::sort_reject(cfg);
      } else {
        if (in->regime != bfpd::Regime::BestIn)
          return fail_with("mismatch", "best-in runs in the best-in regime", 3);
        if (theta)
          return fail_with("config", "--theta reparameterizes sort-reject only", 2);
        bfpd::BestInConfig cfg =
            alpha ? bfpd::BestInConfig::with_alpha(in->k, *alpha) : bfpd::BestInConfig::make(in->k);
        rule = bfpd::KLevelRule::best_in(cfg);
      }
    } catch (const bfpd::InvalidAlpha& e) {
      return fail_with("config", e.what(), 2);
    } catch (const bfpd::InvalidAlphaBeta& e) {
      return fail_with("config", e.what(), 2);
    } catch (const bfpd::BadTheta& e) {
      return fail_with("config", e.what(), 2);
    }

    const auto t0 = std::chrono::steady_clock::now();
    out = bfpd::solve_klevel(*in, rule);
    wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                  .count();

    config["alpha"] = bfpd::scalar_json(rule.alpha());
    if (rule.beta()) config["beta"] = bfpd::scalar_json(*rule.beta());
    if (theta) config["theta"] = bfpd::scalar_json(*theta);

    const Rat opt_f = bfpd::greedy_fractional(*in).value;
    benchmarks["opt_f_k"] = bfpd::scalar_json(opt_f);
    std::optional<Rat> opt_i;
    try {
      opt_i = bfpd::brute_opt_integral(*in, cap).value;
    } catch (const bfpd::TooLarge&) {
      // The enumeration oracle is optional diagnostics here; skip it.
    }
    if (opt_i) benchmarks["opt_i_k"] = bfpd::scalar_json(*opt_i);
    if (out.value.is_positive()) {
      ratios["opt_f_over_value"] = bfpd::scalar_json(opt_f / out.value);
      if (opt_i) ratios["opt_i_over_value"] = bfpd::scalar_json(*opt_i / out.value);
    }
  } else {
    const auto* in = std::get_if<bfpd::DivisibleInstance>(&parsed);
    if (!in)
      return fail_with("mismatch", a.mechanism + " runs on divisible instances, got k-level", 3);
    budget = in->budget;
    if (alpha || theta)
      return fail_with("config", "--alpha/--theta apply to the k-level mechanisms only", 2);

    try {
      const auto t0 = std::chrono::steady_clock::now();
      out = a.mechanism == "prune-assign" ? bfpd::prune_and_assign(*in)
                                          : bfpd::chunk_and_solve(*in);
      wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
    } catch (const bfpd::NonLinearValuation& e) {
      return fail_with("mismatch", e.what(), 3);
    } catch (const bfpd::ZeroValueInstance& e) {
      return fail_with("mismatch", e.what(), 3);
    }

    if (out.diagnostics.alpha) config["alpha"] = bfpd::scalar_json(*out.diagnostics.alpha);
    const Rat opt_f = bfpd::divisible_opt_f_exact(*in).value;
    benchmarks["opt_f"] = bfpd::scalar_json(opt_f);
    if (out.value.is_positive())
      ratios["opt_f_over_value"] = bfpd::scalar_json(opt_f / out.value);
  }

  ratios["payment_over_budget"] = bfpd::scalar_json(out.total_payment() / budget);

  Json record{{"instance_digest", bfpd::digest64(doc.dump())},
              {"mechanism", out.mechanism},
              {"budget", bfpd::scalar_json(budget)},
              {"config", std::move(config)},
              {"outcome", bfpd::to_json(out)},
              {"benchmarks", std::move(benchmarks)},
              {"ratios", std::move(ratios)}};
  if (a.timings) record["wall_time_ms"] = wall_ms;
  verify_record_ratios(record);

  emit(a.out_path, bfpd::dump_pretty(record), "run record");
  return 0;
}

// ---------------------------------------------------------------------------
// audit
// ---------------------------------------------------------------------------

struct AuditArgs {
  std::string mechanism;
  long trials = 100;
  long seed = 0;
  int n_max = 5;
  int k_max = 4;
  bool inject_fault = false;
};

void print_summary_table(const bfpd::AuditReport& report) {
  const Json j = report.to_json();
  std::size_t name_w = 8;
  for (const Json& p : j["properties"])
    name_w = std::max(name_w, p["name"].get<std::string>().size());

  std::ostringstream t;
  t << std::left << std::setw(static_cast<int>(name_w)) << "property" << std::right
    << std::setw(8) << "pass" << std::setw(6) << "fail"
    << "  worst-slack\n";
  for (const Json& p : j["properties"]) {
    const long failed = p["failed"].get<long>();
    t << std::left << std::setw(static_cast<int>(name_w)) << p["name"].get<std::string>()
      << std::right << std::setw(8) << p["passed"].get<long>() << std::setw(6) << failed << "  "
      << (p["worst_slack"].is_null() ? std::string("-") : p["worst_slack"].get<std::string>())
      << (failed > 0 ? "  FAIL" : "") << "\n";
  }
  t << j["summary"]["properties"].get<long>() << " properties, "
    << j["summary"]["checks"].get<long>() << " checks, " << j["summary"]["failures"].get<long>()
    << " failures" << (report.all_passed() ? "" : " -- AUDIT FAILED") << "\n";
  std::cerr << t.str();
}

int cmd_audit(const AuditArgs& a) {
  const long cap = enum_cap();
  bfpd::AuditReport report;
  std::map<int, bfpd::KLevelRule> best_in_rules;

  for (long t = 0; t < a.trials; ++t) {
    const long seed = a.seed + t;
    const int n = 1 + static_cast<int>(t % a.n_max);
    const int k = 1 + static_cast<int>(t % a.k_max);
    const int agent = static_cast<int>(t % n);
    const Rat lambda(2 + static_cast<long>(t % 3), 1 + static_cast<long>(t % 2));

    if (a.mechanism == "sort-reject" || a.mechanism == "best-in") {
      const bool sr = a.mechanism == "sort-reject";
      const bfpd::KLevelInstance in =
          bfpd::gen_klevel(seed, n, k, sr ? bfpd::Regime::AllIn : bfpd::Regime::BestIn);
      bfpd::KLevelRule rule = bfpd::KLevelRule::sort_reject();
      if (!sr) {
        auto it = best_in_rules.find(k);
        if (it == best_in_rules.end())
          it = best_in_rules.emplace(k, bfpd::KLevelRule::best_in(bfpd::BestInConfig::make(k)))
                   .first;
        rule = it->second;
      }

      // The tightest largeness bound this instance satisfies; sort-reject
      // only (the floor is not a best-in property), and skipped when the
      // enumeration oracle is out of reach or the instance has no value.
      std::optional<Rat> theta;
      if (sr) {
        try {
          const Rat opt_i = bfpd::brute_opt_integral(in, cap).value;
          if (opt_i.is_positive()) theta = bfpd::largeness(in, opt_i, cap);
        } catch (const bfpd::TooLarge&) {
        } catch (const bfpd::BadTheta&) {
        }
      }

      bfpd::check_core_properties(report, rule, in, theta);
      bfpd::check_truthfulness(report, rule, in, 6);
      bfpd::check_monotonicity(report, rule, in, agent, in.agents[agent].cost / Rat(2));
      bfpd::check_cost_scaling(report, rule, in, lambda);
      if (sr) bfpd::check_value_scaling(report, bfpd::SortRejectConfig{}, in, Rat(3, 7));
    } else if (a.mechanism == "prune-assign") {
      const bfpd::DivisibleInstance in = bfpd::gen_divisible(seed, n, false);
      if (a.inject_fault) {
        bfpd::Outcome bad = bfpd::prune_and_assign(in);
        bad.diagnostics.q_star = *bad.diagnostics.q_star + Rat(1, 997);
        bfpd::check_core_properties(report, bfpd::PruneAssignMech{}, in, &bad);
      } else {
        bfpd::check_core_properties(report, bfpd::PruneAssignMech{}, in);
      }
      bfpd::check_truthfulness_divisible(report, in, 6);
      bfpd::check_monotonicity(report, in, agent, in.agents[agent].cost / Rat(2));
      bfpd::check_cost_scaling(report, in, lambda);
    } else {  // chunk-solve
      const bfpd::DivisibleInstance in = bfpd::gen_divisible(seed, n, t % 2 == 1);
      if (a.inject_fault) {
        bfpd::Outcome bad = bfpd::chunk_and_solve(in);
        bad.payments[0] += Rat(1, 997);
        bfpd::check_core_properties(report, bfpd::ChunkSolveMech{}, in, &bad);
      } else {
        bfpd::check_core_properties(report, bfpd::ChunkSolveMech{}, in);
      }
      // Modified-declaration checks run through the chunked level instance;
      // the divisible cost-scaling overload replays the linear-only
      // mechanism, which concave inputs here would reject.
      const bfpd::KLevelInstance chunks = bfpd::chunk_instance(in);
      const bfpd::KLevelRule rule = bfpd::KLevelRule::sort_reject();
      bfpd::check_truthfulness(report, rule, chunks, 6);
      bfpd::check_monotonicity(report, rule, chunks, agent, chunks.agents[agent].cost / Rat(2));
      bfpd::check_cost_scaling(report, rule, chunks, lambda);
    }
  }

  std::cout << bfpd::dump_pretty(report.to_json());
  print_summary_table(report);
  return report.all_passed() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string family;
  std::string sizes;
  bool sizes_given = false;
  std::string out_path;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream stream(s);
  while (std::getline(stream, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    if (a == std::string::npos) continue;
    const auto b = item.find_last_not_of(" \t");
    out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

const char kBenchHeader[] =
    "n,k,theta,theta_dec_lossy,mechanism,value,value_dec_lossy,opt_f_k,opt_f_k_dec_lossy,"
    "opt_i_k,opt_i_k_dec_lossy,ratio,ratio_dec_lossy,pay_over_budget,pay_over_budget_dec_lossy\n";

void append_bench_row(std::string& csv, const bfpd::KLevelInstance& in,
                      const bfpd::KLevelRule& rule, long cap) {
  const bfpd::Outcome out = bfpd::solve_klevel(in, rule);
  const Rat opt_f = bfpd::greedy_fractional(in).value;
  const Rat opt_i = bfpd::brute_opt_integral(in, cap).value;
  const Rat theta = bfpd::largeness(in, opt_i, cap);
  const Rat ratio = opt_f / out.value;
  const Rat pay = out.total_payment() / in.budget;

  csv += std::to_string(in.n()) + "," + std::to_string(in.k) + ",";
  csv += theta.str() + "," + dec12(theta) + ",";
  csv += out.mechanism + ",";
  csv += out.value.str() + "," + dec12(out.value) + ",";
  csv += opt_f.str() + "," + dec12(opt_f) + ",";
  csv += opt_i.str() + "," + dec12(opt_i) + ",";
  csv += ratio.str() + "," + dec12(ratio) + ",";
  csv += pay.str() + "," + dec12(pay) + "\n";
}

// Equal agents at cost 1 with a single unit marginal; the budget n - 1 makes
// exactly one agent dispensable.
bfpd::KLevelInstance symmetric_instance(int n) {
  bfpd::KLevelInstance in;
  in.budget = Rat(n - 1);
  in.k = 1;
  in.regime = bfpd::Regime::AllIn;
  in.agents.assign(n, bfpd::KLevelAgent{Rat(1), {Rat(1)}});
  return in;
}

// ceil(1/theta) unit-value levels of supply priced at 1, spread over enough
// agents that the budget binds; the measured largeness is exactly
// 1/ceil(1/theta) <= theta.
bfpd::KLevelInstance large_market_instance(const Rat& theta_target) {
  const long units = (Rat(1) / theta_target).ceil().floor_long();
  const long k = (units + 3) / 4;
  const long n = (units + k - 1) / k + 2;
  bfpd::KLevelInstance in;
  in.budget = Rat(units);
  in.k = static_cast<int>(k);
  in.regime = bfpd::Regime::AllIn;
  in.agents.assign(n, bfpd::KLevelAgent{Rat(1), std::vector<Rat>(k, Rat(1))});
  return in;
}

int cmd_bench(const BenchArgs& b) {
  const long cap = enum_cap();
  std::string csv = kBenchHeader;

  if (b.family == "symmetric") {
    const std::string spec = b.sizes_given ? b.sizes : "3,4,5,6";
    for (const std::string& token : split_csv(spec)) {
      int n = 0;
      try {
        n = std::stoi(token);
      } catch (const std::exception&) {
        return fail_with("config", "bad agent count in --sizes: \"" + token + "\"", 2);
      }
      if (n < 2) return fail_with("config", "symmetric family needs n >= 2", 2);
      append_bench_row(csv, symmetric_instance(n), bfpd::KLevelRule::sort_reject(), cap);
    }
  } else {  // large-market
    const std::string spec = b.sizes_given ? b.sizes : "1/5,1/10,1/20";
    for (const std::string& token : split_csv(spec)) {
      Rat theta;
      try {
        theta = Rat::parse(token);
      } catch (const std::exception&) {
        return fail_with("config", "bad largeness target in --sizes: \"" + token + "\"", 2);
      }
      bfpd::SortRejectConfig cfg;
      try {
        cfg = bfpd::large_market_config(theta);
      } catch (const bfpd::BadTheta& e) {
        return fail_with("config", e.what(), 2);
      }
      append_bench_row(csv, large_market_instance(theta), bfpd::KLevelRule::sort_reject(cfg),
                       cap);
    }
  }

  emit(b.out_path, csv, "benchmark CSV");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"budget-feasible procurement mechanisms with exact rational payments"};
  app.require_subcommand(1);
  const std::vector<std::string> mechanisms{"sort-reject", "best-in", "chunk-solve",
                                            "prune-assign"};

  SolveArgs s;
  CLI::App* solve = app.add_subcommand("solve", "run one mechanism on one instance file");
  solve->add_option("file", s.file, "instance JSON file");
  solve->add_option("--in", s.in_flag, "instance JSON file (alternative to the positional)");
  solve->add_option("--mechanism", s.mechanism, "mechanism to run")
      ->required()
      ->check(CLI::IsMember(mechanisms));
  solve->add_option("--alpha", s.alpha, "rejection rate override, as a rational like 1/4");
  solve->add_option("--theta", s.theta,
                    "market largeness target; picks the certified sort-reject rate");
  solve->add_option("--out", s.out_path, "write the run record here instead of stdout");
  solve->add_flag("--timings", s.timings, "include wall-clock time in the record");

  AuditArgs a;
  CLI::App* audit = app.add_subcommand("audit", "run the property audit on seeded instances");
  audit->add_option("--mechanism", a.mechanism, "mechanism to audit")
      ->required()
      ->check(CLI::IsMember(mechanisms));
  audit->add_option("--trials", a.trials, "number of seeded instances")
      ->check(CLI::Range(0L, 1000000L))
      ->capture_default_str();
  audit->add_option("--seed", a.seed, "base seed")->capture_default_str();
  audit->add_option("--n-max", a.n_max, "largest agent count")
      ->check(CLI::Range(1, 1000))
      ->capture_default_str();
  audit->add_option("--k-max", a.k_max, "largest level count (k-level mechanisms)")
      ->check(CLI::Range(1, 1000))
      ->capture_default_str();
  audit->add_flag("--inject-fault", a.inject_fault, "corrupt one outcome per trial")->group("");

  BenchArgs b;
  CLI::App* bench = app.add_subcommand("bench", "emit a CSV of approximation ratios");
  bench->add_option("--family", b.family, "benchmark family")
      ->required()
      ->check(CLI::IsMember({"symmetric", "large-market"}));
  CLI::Option* sizes_opt = bench->add_option(
      "--sizes", b.sizes,
      "comma-separated agent counts (symmetric) or largeness targets (large-market); "
      "empty for a header-only CSV");
  bench->add_option("--out", b.out_path, "write the CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e, std::cout, std::cerr);
    std::cout << bfpd::dump_pretty(Json{{"error", "usage"}, {"detail", e.what()}});
    return 2;
  }
  b.sizes_given = sizes_opt->count() > 0;

  try {
    if (solve->parsed()) return cmd_solve(s);
    if (audit->parsed()) return cmd_audit(a);
    return cmd_bench(b);
  } catch (const bfpd::TooLarge& e) {
    return fail_with("too-large", e.what(), 2);
  } catch (const std::invalid_argument& e) {
    return fail_with("config", e.what(), 2);
  } catch (const std::exception& e) {
    return fail_with("internal", e.what(), 2);
  }
}
