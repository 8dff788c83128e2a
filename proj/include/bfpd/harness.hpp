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

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "bfpd/divisible_mech.hpp"
#include "bfpd/io.hpp"
#include "bfpd/payments.hpp"

namespace bfpd {

// ---------------------------------------------------------------------------
// Audit reports
// ---------------------------------------------------------------------------

// Aggregated outcome of property checks. Each named property keeps pass/fail
// counts, the smallest slack ever observed together with the instance that
// produced it, and, for failures, a replayable witness instance.
class AuditReport {
 public:
  struct Property {
    std::string name;
    long passed = 0;
    long failed = 0;
    bool strict = false;  // strict properties need slack > 0, others >= 0
    std::optional<Rat> worst_slack;
    std::string worst_witness;    // serialized instance for the worst slack
    std::string failure_witness;  // serialized instance for the first failure
  };

  // Records one check. slack >= 0 passes (> 0 when strict); the witness is a
  // serialized instance that reproduces the check.
  void check(const std::string& name, const Rat& slack, bool strict, const std::string& witness) {
    Property& p = at(name);
    p.strict = strict;
    const bool ok = strict ? slack.is_positive() : !slack.is_negative();
    ++(ok ? p.passed : p.failed);
    if (!p.worst_slack || slack < *p.worst_slack) {
      p.worst_slack = slack;
      p.worst_witness = witness;
    }
    if (!ok && p.failure_witness.empty()) p.failure_witness = witness;
  }

  void check_flag(const std::string& name, bool ok, const std::string& witness) {
    check(name, ok ? Rat(0) : Rat(-1), false, witness);
  }

  // Equalities pass only at slack exactly 0; any difference is a failure.
  void check_equal(const std::string& name, const Rat& lhs, const Rat& rhs,
                   const std::string& witness) {
    Rat d = lhs - rhs;
    if (d.is_positive()) d = -d;
    check(name, d, false, witness);
  }

  // Aggregation point when trials fan out across workers.
  void merge(const AuditReport& other) {
    for (const Property& q : other.props_) {
      Property& p = at(q.name);
      p.strict = q.strict;
      p.passed += q.passed;
      p.failed += q.failed;
      if (q.worst_slack && (!p.worst_slack || *q.worst_slack < *p.worst_slack)) {
        p.worst_slack = q.worst_slack;
        p.worst_witness = q.worst_witness;
      }
      if (p.failure_witness.empty()) p.failure_witness = q.failure_witness;
    }
  }

  const std::vector<Property>& properties() const { return props_; }

  long checks() const {
    long t = 0;
    for (const Property& p : props_) t += p.passed + p.failed;
    return t;
  }
  long failures() const {
    long t = 0;
    for (const Property& p : props_) t += p.failed;
    return t;
  }
  bool all_passed() const { return failures() == 0; }

  Json to_json() const {
    Json props = Json::array();
    for (const Property& p : props_) {
      Json row{{"name", p.name},
               {"passed", p.passed},
               {"failed", p.failed},
               {"strict", p.strict},
               {"worst_slack", p.worst_slack ? scalar_json(*p.worst_slack) : Json(nullptr)},
               {"worst_witness",
                p.worst_witness.empty() ? Json(nullptr) : Json::parse(p.worst_witness)},
               {"failure_witness",
                p.failure_witness.empty() ? Json(nullptr) : Json::parse(p.failure_witness)}};
      props.push_back(std::move(row));
    }
    return Json{{"summary",
                 Json{{"properties", static_cast<long>(props_.size())},
                      {"checks", checks()},
                      {"failures", failures()},
                      {"all_passed", all_passed()}}},
                {"properties", std::move(props)}};
  }

 private:
  Property& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
      index_.emplace(name, props_.size());
      props_.emplace_back();
      props_.back().name = name;
      return props_.back();
    }
    return props_[it->second];
  }

  std::vector<Property> props_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Seeded instance generators
// ---------------------------------------------------------------------------

// Deterministic pseudo-random level instance: budget 1, costs uniform over
// the valid range with denominators <= 1000, marginals drawn from a coarse
// per-agent lattice (and sorted) so exact ties show up often.
inline KLevelInstance gen_klevel(long seed, int n, int k, Regime regime) {
  if (n < 1 || k < 1) throw BadIndex("gen_klevel: n and k must be >= 1");
  if (k > 1000) throw BadIndex("gen_klevel: k beyond the cost lattice");
  std::seed_seq seq{0x6b6c766cu, static_cast<unsigned>(seed), static_cast<unsigned>(seed >> 32),
                    static_cast<unsigned>(n), static_cast<unsigned>(k),
                    static_cast<unsigned>(regime == Regime::AllIn ? 0 : 1)};
  std::mt19937_64 rng(seq);
  KLevelInstance in;
  in.budget = Rat(1);
  in.k = k;
  in.regime = regime;
  for (int i = 0; i < n; ++i) {
    KLevelAgent a;
    long den, amax;
    if (regime == Regime::AllIn) {
      den = k + static_cast<long>(rng() % static_cast<unsigned long>(1001 - k));
      amax = den / k;  // cost <= budget / k
    } else {
      den = 1 + static_cast<long>(rng() % 1000);
      amax = den;  // cost <= budget
    }
    a.cost = Rat(1 + static_cast<long>(rng() % static_cast<unsigned long>(amax)), den);
    long lat = 1 + static_cast<long>(rng() % 12);
    for (int j = 0; j < k; ++j)
      a.marginals.emplace_back(static_cast<long>(rng() % static_cast<unsigned long>(2 * lat + 1)),
                               lat);
    std::sort(a.marginals.begin(), a.marginals.end(), [](const Rat& x, const Rat& y) { return y < x; });
    in.agents.push_back(std::move(a));
  }
  return in;
}

// Deterministic divisible instance: budget 1, costs in (0, 1] with
// denominators <= 1000. Linear valuations draw one lattice slope; concave
// ones draw a few descending segment slopes. At least one agent always has
// positive value so the rate mechanisms have somewhere to start.
inline DivisibleInstance gen_divisible(long seed, int n, bool concave) {
  if (n < 1) throw BadIndex("gen_divisible: n must be >= 1");
  std::seed_seq seq{0x64697673u, static_cast<unsigned>(seed), static_cast<unsigned>(seed >> 32),
                    static_cast<unsigned>(n), static_cast<unsigned>(concave ? 1 : 0)};
  std::mt19937_64 rng(seq);
  DivisibleInstance in;
  in.budget = Rat(1);
  for (int i = 0; i < n; ++i) {
    DivisibleAgent a;
    long den = 1 + static_cast<long>(rng() % 1000);
    a.cost = Rat(1 + static_cast<long>(rng() % static_cast<unsigned long>(den)), den);
    long lat = 1 + static_cast<long>(rng() % 12);
    if (!concave) {
      a.valuation = PiecewiseValuation::linear(
          Rat(static_cast<long>(rng() % static_cast<unsigned long>(3 * lat + 1)), lat));
    } else {
      static const int kGrids[] = {2, 3, 4, 6};
      int g = kGrids[rng() % 4];
      std::vector<Rat> slopes;
      for (int s = 0; s < g; ++s)
        slopes.emplace_back(static_cast<long>(rng() % static_cast<unsigned long>(2 * lat + 1)),
                            lat);
      std::sort(slopes.begin(), slopes.end(), [](const Rat& x, const Rat& y) { return y < x; });
      a.valuation.points.emplace_back(Rat(0), Rat(0));
      Rat v(0);
      for (int s = 0; s < g; ++s) {
        v += slopes[s] / Rat(g);
        a.valuation.points.emplace_back(Rat(s + 1, g), v);
      }
    }
    in.agents.push_back(std::move(a));
  }
  bool any_value = false;
  for (const DivisibleAgent& a : in.agents)
    if (a.valuation.points.back().second.is_positive()) any_value = true;
  if (!any_value) in.agents[0].valuation = PiecewiseValuation::linear(Rat(1, 2));
  return in;
}

// ---------------------------------------------------------------------------
// Truthfulness checks
// ---------------------------------------------------------------------------

// Utility of an agent with true cost `truth` when declaring `bid`, read off
// the agent's allocation curve: threshold payments minus incurred cost.
inline Rat declared_utility(const StepFunction& curve, const Rat& truth, const Rat& bid) {
  CriticalPayments cp = critical_payments(curve, bid);
  return cp.total - truth * Rat(cp.level);
}

// Checks that no finite deviation beats the truthful declaration. The
// deviation set joins a uniform grid over (0, cap] with every curve
// breakpoint and critical threshold nudged by a small rational; since the
// allocation is a step function of the declared cost, utility is linear
// between those points and the set is decisive.
inline void check_truthfulness(AuditReport& report, const KLevelRule& rule,
                               const KLevelInstance& in, long grid_size = 8) {
  const std::string witness = to_json(in).dump();
  const Rat cap = rule.cost_cap(in);
  const Rat nudge = cap / Rat(1 << 20);
  for (int i = 0; i < in.n(); ++i) {
    StepFunction curve = allocation_curve(rule, in, i);
    const Rat& truth = in.agents[i].cost;
    const Rat u_truth = declared_utility(curve, truth, truth);
    report.check("truthfulness.nonnegative-utility", u_truth, false, witness);

    std::set<Rat> bids;
    for (long t = 1; t <= grid_size; ++t) bids.insert(cap * Rat(t, grid_size));
    auto near = [&](const Rat& z) {
      bids.insert(z - nudge);
      bids.insert(z);
      bids.insert(z + nudge);
    };
    for (const Rat& z : curve.z) near(z);
    for (const Rat& p : critical_payments(curve, truth).thresholds) near(p);

    Rat min_slack = u_truth;  // dropping out yields utility 0
    for (const Rat& bid : bids) {
      if (!bid.is_positive() || bid > cap) continue;
      min_slack = min(min_slack, u_truth - declared_utility(curve, truth, bid));
    }
    report.check("truthfulness.no-gain", min_slack, false, witness);
  }
}

// Deviation check for the divisible rate mechanism, by replaying the whole
// mechanism on modified declarations (its allocation varies continuously, so
// there is no curve to enumerate; the grid plus the rate threshold probes the
// profitable directions).
inline void check_truthfulness_divisible(AuditReport& report, const DivisibleInstance& in,
                                         long grid_size = 8) {
  const std::string witness = to_json(in).dump();
  const Outcome base = prune_and_assign(in);
  const Rat r = *base.diagnostics.r;
  const Rat nudge = in.budget / Rat(1 << 20);
  for (int i = 0; i < in.n(); ++i) {
    const Rat& truth = in.agents[i].cost;
    const Rat u_truth = base.payments[i] - truth * base.allocation.x[i];
    report.check("truthfulness.nonnegative-utility", u_truth, false, witness);

    std::set<Rat> bids;
    for (long t = 1; t <= grid_size; ++t) bids.insert(in.budget * Rat(t, grid_size));
    const Rat& top = in.agents[i].valuation.points.back().second;
    if (top.is_positive()) {
      const Rat upper = top / r;  // declarations beyond this are pruned
      for (const Rat& b : {upper - nudge, upper, upper + nudge}) bids.insert(b);
    }
    Rat min_slack(0);
    for (const Rat& bid : bids) {
      if (!bid.is_positive() || bid > in.budget) continue;
      DivisibleInstance moved = in;
      moved.agents[i].cost = bid;
      const Outcome out = prune_and_assign(moved);
      const Rat u = out.payments[i] - truth * out.allocation.x[i];
      min_slack = min(min_slack, u_truth - u);
    }
    report.check("truthfulness.no-gain", min_slack, false, witness);
  }
}

// ---------------------------------------------------------------------------
// Core property checks: level mechanisms
// ---------------------------------------------------------------------------

namespace detail {

// Exact optimality certificate for the greedy fractional relaxation, by
// complementary slackness at the density of the marginal unit. With every
// level bought in full the all-ones point is trivially optimal; otherwise
// the budget must be exhausted, and every level not bought in full must have
// density at most that of the cheapest purchased level.
inline bool greedy_certificate_holds(const KLevelInstance& in, const GreedySolution& g) {
  bool all_full = true;
  for (int i = 0; i < in.n(); ++i)
    if (g.allocation.x[i] != Rat(in.k)) all_full = false;
  if (all_full) return true;

  if (g.spent != in.budget) return false;

  Rat lambda(0);  // min density among levels bought at all
  bool any_bought = false;
  for (int i = 0; i < in.n(); ++i) {
    const Rat& bought = g.allocation.x[i];
    long touched = bought.is_integer() ? bought.floor_long() : bought.floor_long() + 1;
    for (long j = 1; j <= touched; ++j) {
      Rat density = in.agents[i].marginals[j - 1] / in.agents[i].cost;
      if (!any_bought || density < lambda) lambda = density;
      any_bought = true;
    }
  }

  for (int i = 0; i < in.n(); ++i) {
    long full = g.floor_level(i);
    for (long j = full + 1; j <= in.k; ++j) {
      // levels not bought in full (the partial one included)
      if (in.agents[i].marginals[j - 1] > lambda * in.agents[i].cost) return false;
    }
  }
  return true;
}

inline bool fraction_count_ok(const GreedySolution& g) {
  int fractional = 0;
  for (const Rat& v : g.allocation.x)
    if (!v.is_integer()) ++fractional;
  return fractional <= 1;
}

}  // namespace detail

// Runs one level instance through `rule` and records individual rationality,
// budget feasibility, the value guarantee, the greedy-relaxation certificate,
// and the per-run bounds that tie winner costs and payments to the
// sub-instance optima. `theta` (when supplied, together with its instance's
// integral optimum baked into it) additionally enables the market-largeness
// floor on winners.
inline void check_core_properties(AuditReport& report, const KLevelRule& rule,
                                  const KLevelInstance& in,
                                  const std::optional<Rat>& theta = std::nullopt) {
  const std::string witness = to_json(in).dump();
  const SortRejectResult run = rule.run(in);
  const SortRejectTrace& trace = run.trace;
  const Rat& alpha = trace.alpha;
  const Rat value = value_of_levels(in, run.x);
  const Rat one_m_alpha = Rat(1) - alpha;

  // Payments for winners, read off their allocation curves.
  Rat total_pay(0);
  Rat ir_slack(0);
  bool curves_match = true;
  std::vector<std::pair<int, CriticalPayments>> winner_payments;
  for (int i = 0; i < in.n(); ++i) {
    if (run.x[i] == 0) continue;
    StepFunction curve = allocation_curve(rule, in, i);
    if (curve.eval(in.agents[i].cost) != run.x[i]) curves_match = false;
    CriticalPayments cp = critical_payments(curve, in.agents[i].cost);
    // threshold sum vs. the cost-plus-area form of the same payment
    report.check_equal("payments.threshold-decomposition", cp.total,
                       in.agents[i].cost * Rat(run.x[i]) +
                           curve.integral_from(in.agents[i].cost),
                       witness);
    total_pay += cp.total;
    ir_slack = min(ir_slack, cp.total - in.agents[i].cost * Rat(run.x[i]));
    winner_payments.emplace_back(i, std::move(cp));
  }
  report.check_flag("payments.curve-consistency", curves_match, witness);
  report.check("payments.individual-rationality", ir_slack, false, witness);
  report.check("payments.within-budget", in.budget - total_pay, false, witness);
  report.check("allocation.alpha-guarantee", value - alpha * trace.opt_f, false, witness);

  if (rule.kind() == KLevelRule::Kind::BestIn) {
    report.check("allocation.integral-guarantee",
                 value - alpha * brute_opt_integral(in).value, false, witness);
  }

  // Greedy relaxation: optimal and almost integral.
  const GreedySolution greedy = greedy_fractional(in);
  report.check_flag("knapsack.greedy-certificate", detail::greedy_certificate_holds(in, greedy),
                    witness);
  report.check_flag("knapsack.almost-integral", detail::fraction_count_ok(greedy), witness);

  if (trace.took_if_branch) {
    bool star_only = true;
    for (int i = 0; i < in.n(); ++i) {
      long want = i == trace.i_star ? rule.star_levels(in) : 0;
      if (run.x[i] != want) star_only = false;
    }
    report.check_flag("allocation.trace-replay", star_only, witness);
    return;
  }

  // Else-branch bounds, all phrased around the final list agent ell.
  const int ell = *trace.final_ell;
  const Rat m_ell = in.agents[ell].marginals[run.x[ell] - 1];
  report.check("allocation.tail-cost-cap",
               in.budget * m_ell - in.agents[ell].cost * one_m_alpha * trace.opt_f, true, witness);

  if (rule.kind() == KLevelRule::Kind::SortReject) {
    // Summing per-level threshold caps against the exclusion floor bounds the
    // whole payout; both ingredients are specific to the all-in rule.
    const Rat& d_ell = trace.d_minus[ell];
    report.check("payments.tail-ratio-cap",
                 in.budget / one_m_alpha * (m_ell / d_ell + alpha / one_m_alpha) - total_pay, true,
                 witness);
  }

  if (rule.kind() == KLevelRule::Kind::SortReject) {
    // The floor needs the full-bundle ratio test, so it is specific to the
    // all-in rule; the best-in analog is the winner exclusion cap below.
    Rat exclusion_slack;
    bool first = true;
    for (int i = 0; i < in.n(); ++i) {
      Rat s = alpha * trace.d_minus[i] - one_m_alpha * (value - m_ell);
      if (first || s < exclusion_slack) exclusion_slack = s;
      first = false;
    }
    report.check("knapsack.exclusion-floor", exclusion_slack, true, witness);
  }

  Rat threshold_cap_slack(0);
  bool cap_first = true;
  for (const auto& [i, cp] : winner_payments) {
    for (std::size_t j = 0; j < cp.thresholds.size(); ++j) {
      Rat s = in.budget * in.agents[i].marginals[j] -
              one_m_alpha * cp.thresholds[j] * trace.d_minus[i];
      if (cap_first || s < threshold_cap_slack) threshold_cap_slack = s;
      cap_first = false;
    }
  }
  if (!cap_first) report.check("payments.threshold-cap", threshold_cap_slack, false, witness);

  // The floor theta * d_i >= (1 - alpha) * m_i(x_i) rests on the full-bundle
  // ratio test (every surviving agent has v_i(k) < alpha/(1-alpha) * d_i),
  // which only the sort-reject rule applies; best-in tests single levels and
  // admits counterexamples, so theta is ignored for it.
  if (theta && rule.kind() == KLevelRule::Kind::SortReject) {
    Rat largeness_slack;
    bool lfirst = true;
    for (const auto& [i, cp] : winner_payments) {
      Rat s = *theta * trace.d_minus[i] - one_m_alpha * in.agents[i].marginals[run.x[i] - 1];
      if (lfirst || s < largeness_slack) largeness_slack = s;
      lfirst = false;
    }
    if (!lfirst) report.check("market.largeness-floor", largeness_slack, false, witness);
  }

  if (rule.kind() == KLevelRule::Kind::BestIn) {
    const Rat factor = Rat(1) + *rule.beta() * Rat(in.k);
    Rat slack;
    bool bfirst = true;
    for (const auto& [i, cp] : winner_payments) {
      Rat s = factor * trace.d_minus[i] - trace.opt_f;
      if (bfirst || s < slack) slack = s;
      bfirst = false;
    }
    if (!bfirst) report.check("knapsack.winner-exclusion-cap", slack, false, witness);
  }

  // Replaying the recorded removals from the greedy floor must land exactly
  // on the final allocation.
  std::vector<long> replay = trace.initial_floor;
  bool replay_ok = true;
  for (const auto& [agent, level] : trace.removals) {
    if (agent < 0 || agent >= in.n() || replay[agent] != level) {
      replay_ok = false;
      break;
    }
    --replay[agent];
  }
  if (replay_ok) replay_ok = replay == run.x;
  report.check_flag("allocation.trace-replay", replay_ok, witness);
}

// ---------------------------------------------------------------------------
// Core property checks: divisible mechanisms
// ---------------------------------------------------------------------------

struct PruneAssignMech {};
struct ChunkSolveMech {};

// `precomputed` lets a caller audit an outcome it already holds (or has
// deliberately tampered with, in fault-injection drills) instead of a fresh
// mechanism run on `in`.
inline void check_core_properties(AuditReport& report, PruneAssignMech,
                                  const DivisibleInstance& in,
                                  const Outcome* precomputed = nullptr) {
  const std::string witness = to_json(in).dump();
  const Outcome out = precomputed ? *precomputed : prune_and_assign(in);
  const Rat& r = *out.diagnostics.r;
  const int i_star = *out.diagnostics.i_star;

  Rat total_pay(0), ir_slack(0);
  bool losers_unpaid = true, unit_range = true;
  for (int i = 0; i < in.n(); ++i) {
    const Rat& x = out.allocation.x[i];
    if (x.is_negative() || x > Rat(1)) unit_range = false;
    if (x.is_zero() && !out.payments[i].is_zero()) losers_unpaid = false;
    ir_slack = min(ir_slack, out.payments[i] - in.agents[i].cost * x);
    total_pay += out.payments[i];
  }
  report.check("payments.individual-rationality", ir_slack, false, witness);
  report.check_flag("payments.losers-unpaid", losers_unpaid, witness);
  report.check_flag("allocation.unit-range", unit_range, witness);
  report.check("payments.within-budget", in.budget - total_pay, false, witness);

  Rat vs(0), cs(0);
  Rat rate_slack;
  bool first = true;
  for (int id : out.diagnostics.winners_s) {
    const Rat v = in.agents[id].valuation.points.back().second;
    vs += v;
    cs += in.agents[id].cost;
    Rat s = min(v - r * in.agents[id].cost, r * in.budget - v);
    if (first || s < rate_slack) rate_slack = s;
    first = false;
  }
  const Rat v_star = in.agents[i_star].valuation.points.back().second;
  const Rat v_tail = vs - v_star;

  report.check("pruning.rate-bounds", rate_slack, false, witness);
  report.check("pruning.tail-below-rate", r * in.budget - v_tail, false, witness);
  if (out.diagnostics.winners_s.size() >= 2)
    report.check("pruning.rate-below-total", vs - r * in.budget, true, witness);

  const Rat opt_f = divisible_opt_f_exact(in).value;
  report.check("pruning.value-cap", vs + r * (in.budget - cs) - opt_f, false, witness);
  report.check("allocation.half-guarantee", Rat(2) * out.value - opt_f, false, witness);
  report.check("payments.within-rate-slack",
               in.budget / Rat(2) + vs / (Rat(4) * r) - total_pay, false, witness);

  const Rat q = *out.diagnostics.q;
  report.check("assignment.damping-range", min(q, Rat(1, 2) - q), false, witness);
  report.check_equal("assignment.rate-split-identity", r * in.budget / Rat(2),
                     *out.diagnostics.q_star * v_star + *out.diagnostics.q_tail * v_tail, witness);
}

inline void check_core_properties(AuditReport& report, ChunkSolveMech,
                                  const DivisibleInstance& in,
                                  const Outcome* precomputed = nullptr) {
  const std::string witness = to_json(in).dump();
  const KLevelInstance chunks = chunk_instance(in);
  const Outcome out = precomputed ? *precomputed : chunk_and_solve(in);
  const Rat n(in.n());

  Rat total_pay(0), ir_slack(0);
  bool losers_unpaid = true, on_grid = true;
  Rat value_direct(0);
  for (int i = 0; i < in.n(); ++i) {
    const Rat& x = out.allocation.x[i];
    if (!(x * n).is_integer()) on_grid = false;
    if (x.is_zero() && !out.payments[i].is_zero()) losers_unpaid = false;
    ir_slack = min(ir_slack, out.payments[i] - in.agents[i].cost * x);
    total_pay += out.payments[i];
    value_direct += eval_valuation(in.agents[i].valuation, x);
  }
  report.check("payments.individual-rationality", ir_slack, false, witness);
  report.check_flag("payments.losers-unpaid", losers_unpaid, witness);
  report.check_flag("chunking.grid-alignment", on_grid, witness);
  report.check("payments.within-budget", in.budget - total_pay, false, witness);
  report.check_equal("chunking.value-consistency", value_direct, out.value, witness);

  const Rat& alpha = *out.diagnostics.alpha;
  const Rat opt_f = divisible_opt_f_exact(in).value;
  report.check("allocation.half-alpha-guarantee", Rat(2) * out.value - alpha * opt_f, false,
               witness);
  report.check("chunking.relaxation-cap", Rat(2) * greedy_fractional(chunks).value - opt_f, false,
               witness);

  // The per-agent payments must be exactly the level engine's critical
  // payments on the chunked instance.
  SortRejectResult levels;
  levels.x.reserve(out.allocation.x.size());
  for (const Rat& x : out.allocation.x) levels.x.push_back((x * n).floor_long());
  const std::vector<Rat> engine = mechanism_payments(KLevelRule::sort_reject(), chunks, levels);
  report.check_flag("chunking.payment-match", engine == out.payments, witness);
}

// ---------------------------------------------------------------------------
// Modified-declaration checks
// ---------------------------------------------------------------------------

// Allocation monotonicity: lowering one declared cost never shrinks that
// agent's allocation.
inline void check_monotonicity(AuditReport& report, const KLevelRule& rule,
                               const KLevelInstance& in, int agent, const Rat& lower_cost) {
  if (agent < 0 || agent >= in.n()) throw BadIndex("check_monotonicity: agent out of range");
  const std::string witness = to_json(in).dump();
  KLevelInstance moved = in;
  moved.agents[agent].cost = lower_cost;
  const long before = rule.run(in).x[agent];
  const long after = rule.run(moved).x[agent];
  report.check("allocation.cost-monotonicity", Rat(after - before), false, witness);
}

inline void check_monotonicity(AuditReport& report, const DivisibleInstance& in, int agent,
                               const Rat& lower_cost) {
  if (agent < 0 || agent >= in.n()) throw BadIndex("check_monotonicity: agent out of range");
  const std::string witness = to_json(in).dump();
  DivisibleInstance moved = in;
  moved.agents[agent].cost = lower_cost;
  const Rat before = prune_and_assign(in).allocation.x[agent];
  const Rat after = prune_and_assign(moved).allocation.x[agent];
  report.check("allocation.cost-monotonicity", after - before, false, witness);

  // A winner's report change that keeps them winning must not move the
  // pruning outcome at all.
  auto same = pruning_robustness_check(in, agent, lower_cost);
  if (same.has_value()) report.check_flag("pruning.report-robustness", *same, witness);
}

// ---------------------------------------------------------------------------
// Metamorphic checks
// ---------------------------------------------------------------------------

// Scaling all costs and the budget by lambda > 0 must keep the allocation and
// scale every payment by lambda.
inline void check_cost_scaling(AuditReport& report, const KLevelRule& rule,
                               const KLevelInstance& in, const Rat& lambda) {
  const std::string witness = to_json(in).dump();
  KLevelInstance scaled = in;
  scaled.budget = in.budget * lambda;
  for (KLevelAgent& a : scaled.agents) a.cost = a.cost * lambda;

  const SortRejectResult base = rule.run(in);
  const SortRejectResult moved = rule.run(scaled);
  bool ok = base.x == moved.x;
  if (ok) {
    const std::vector<Rat> p0 = mechanism_payments(rule, in, base);
    const std::vector<Rat> p1 = mechanism_payments(rule, scaled, moved);
    for (std::size_t i = 0; i < p0.size(); ++i)
      if (p1[i] != p0[i] * lambda) ok = false;
  }
  report.check_flag("metamorphic.cost-scaling", ok, witness);
}

inline void check_cost_scaling(AuditReport& report, const DivisibleInstance& in,
                               const Rat& lambda) {
  const std::string witness = to_json(in).dump();
  DivisibleInstance scaled = in;
  scaled.budget = in.budget * lambda;
  for (DivisibleAgent& a : scaled.agents) a.cost = a.cost * lambda;

  const Outcome base = prune_and_assign(in);
  const Outcome moved = prune_and_assign(scaled);
  bool ok = base.allocation.x == moved.allocation.x;
  if (ok)
    for (std::size_t i = 0; i < base.payments.size(); ++i)
      if (moved.payments[i] != base.payments[i] * lambda) ok = false;
  report.check_flag("metamorphic.cost-scaling", ok, witness);
}

// Scaling all marginals by lambda > 0 must keep the sort-reject allocation:
// every comparison in the mechanism is linear in the values.
inline void check_value_scaling(AuditReport& report, const SortRejectConfig& cfg,
                                const KLevelInstance& in, const Rat& lambda) {
  const std::string witness = to_json(in).dump();
  KLevelInstance scaled = in;
  for (KLevelAgent& a : scaled.agents)
    for (Rat& m : a.marginals) m = m * lambda;
  report.check_flag("metamorphic.value-scaling",
                    sort_and_reject(in, cfg).x == sort_and_reject(scaled, cfg).x, witness);
}

}  // namespace bfpd
