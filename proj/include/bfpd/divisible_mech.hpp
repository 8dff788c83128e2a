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

// Mechanisms for divisible agents.
//
// Linear valuations get the two-stage pipeline: a rate-raising pruning pass
// that fixes a provisional winner set S and a rate r, followed by a
// fractional assignment around the highest-value winner with closed-form
// quadratic payments. General concave piecewise-linear valuations are
// chunked into an n-level instance and handed to the level mechanism; its
// critical payments transfer unchanged.

#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include "bfpd/klevel_mech.hpp"
#include "bfpd/knapsack.hpp"
#include "bfpd/model.hpp"
#include "bfpd/payments.hpp"
#include "bfpd/rational.hpp"

namespace bfpd {

class NonLinearValuation : public std::invalid_argument {
 public:
  explicit NonLinearValuation(const std::string& what) : std::invalid_argument(what) {}
};

class ZeroValueInstance : public std::invalid_argument {
 public:
  explicit ZeroValueInstance(const std::string& what) : std::invalid_argument(what) {}
};

struct PruningResult {
  Rat r;                   // final rate
  Allocation provisional;  // 0/1-valued fractions
  std::vector<int> s;      // kept agents, ascending id
  int i_star = -1;         // highest-value kept agent, ties to the lowest id
  std::vector<int> t;      // s without i_star
};

// Constants of the assignment stage. q_star belongs to i_star, q_tail to
// every other kept agent; together they satisfy the exact identity
// r*B/2 = q_star*v_star + q_tail*v(T).
struct AssignConstants {
  Rat q;
  Rat q_star;
  Rat q_tail;
};

namespace detail {

inline Rat linear_slope(const DivisibleAgent& a, int agent) {
  if (!a.valuation.is_linear())
    throw NonLinearValuation("agent " + std::to_string(agent) +
                             " has a non-linear valuation; chunk_and_solve handles those");
  return a.valuation.points.back().second;
}

inline std::vector<Rat> linear_slopes(const DivisibleInstance& in) {
  std::vector<Rat> v;
  v.reserve(in.agents.size());
  for (int i = 0; i < in.n(); ++i) v.push_back(linear_slope(in.agents[i], i));
  return v;
}

}  // namespace detail

// Rate-raising pruning for linear valuations. Starts at r = max_i v_i / B so
// every survivor has v_i <= r*B, then raises r event by event: the loop stops
// as soon as r*B >= v(S) - max_S v, dropping the worst-ratio survivor
// whenever its ratio is passed first. A ratio tying the stopping rate stays.
inline PruningResult pruning(const DivisibleInstance& in) {
  validate_divisible(in);
  std::vector<Rat> v = detail::linear_slopes(in);

  PruningResult out;
  Rat vmax_all(0);
  for (const Rat& vi : v) vmax_all = max(vmax_all, vi);
  if (vmax_all.is_zero())
    throw ZeroValueInstance("pruning: every agent values the unit at zero");

  // (ratio desc, id asc), comparing v_a/c_a with cross-multiplication.
  std::vector<int> order(static_cast<std::size_t>(in.n()));
  for (int i = 0; i < in.n(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const Rat lhs = v[static_cast<std::size_t>(a)] * in.agents[b].cost;
    const Rat rhs = v[static_cast<std::size_t>(b)] * in.agents[a].cost;
    if (lhs != rhs) return lhs > rhs;
    return a < b;
  });

  Rat r = vmax_all / in.budget;
  std::vector<int> kept;  // in ratio order
  for (int id : order) {
    // ratio >= r, i.e. v_i >= r * c_i
    if (v[static_cast<std::size_t>(id)] >= r * in.agents[id].cost) kept.push_back(id);
  }

  while (true) {
    Rat vs(0), vmax(0);
    for (int id : kept) {
      vs += v[static_cast<std::size_t>(id)];
      vmax = max(vmax, v[static_cast<std::size_t>(id)]);
    }
    Rat need = (vs - vmax) / in.budget;
    if (r >= need) break;
    int ell = kept.back();
    const Rat& v_ell = v[static_cast<std::size_t>(ell)];
    if (v_ell >= need * in.agents[ell].cost) {  // ratio_ell >= need: stop there
      r = need;
      break;
    }
    r = v_ell / in.agents[ell].cost;
    kept.pop_back();
  }

  out.r = r;
  out.s = kept;
  std::sort(out.s.begin(), out.s.end());
  out.i_star = out.s.front();
  for (int id : out.s)
    if (v[static_cast<std::size_t>(id)] > v[static_cast<std::size_t>(out.i_star)]) out.i_star = id;
  for (int id : out.s)
    if (id != out.i_star) out.t.push_back(id);

  out.provisional.mode = AllocMode::Fraction;
  out.provisional.x.assign(in.agents.size(), Rat(0));
  for (int id : out.s) out.provisional.x[static_cast<std::size_t>(id)] = Rat(1);
  return out;
}

// True when a unilateral report that keeps the agent a provisional winner
// leaves the pruning output untouched; nullopt when the agent is not a winner
// under one of the two reports, which makes the comparison vacuous.
inline std::optional<bool> pruning_robustness_check(const DivisibleInstance& in, int agent,
                                                    const Rat& alt_cost) {
  if (agent < 0 || agent >= in.n())
    throw BadIndex("pruning_robustness_check: agent index out of range");
  PruningResult base = pruning(in);
  if (base.provisional.x[static_cast<std::size_t>(agent)] != Rat(1)) return std::nullopt;
  DivisibleInstance alt = in;
  alt.agents[static_cast<std::size_t>(agent)].cost = alt_cost;
  PruningResult moved = pruning(alt);
  if (moved.provisional.x[static_cast<std::size_t>(agent)] != Rat(1)) return std::nullopt;
  return base.r == moved.r && base.provisional.x == moved.provisional.x;
}

// Constants of the assignment stage for a pruning output. Degenerate markets
// (a single survivor, where v(S) = r*B and v(T) = 0 coincide) take q = 0.
inline AssignConstants assign_constants(const DivisibleInstance& in, const PruningResult& p) {
  std::vector<Rat> v = detail::linear_slopes(in);
  Rat vs(0);
  for (int id : p.s) vs += v[static_cast<std::size_t>(id)];
  const Rat& v_star = v[static_cast<std::size_t>(p.i_star)];
  Rat v_tail = vs - v_star;
  Rat rb = p.r * in.budget;

  AssignConstants k;
  Rat m = min(v_star, v_tail);
  if (vs == rb || m.is_zero())
    k.q = Rat(0);
  else
    k.q = (vs - rb) / (Rat(2) * m);
  if (k.q.is_negative() || k.q > Rat(1, 2))
    throw std::logic_error("assign_constants: q escaped [0, 1/2]");
  k.q_star = v_star <= v_tail ? Rat(1, 2) - k.q : Rat(1, 2);
  k.q_tail = Rat(1) - k.q_star - k.q;
  if (rb / Rat(2) != k.q_star * v_star + k.q_tail * v_tail)
    throw std::logic_error("assign_constants: budget split identity failed");
  return k;
}

// Prune-&-assign for linear valuations: fractional allocation
// x_i(z) = q_i + (v_i - r z) / (2 v_i) on [0, v_i/r], with the exact Myerson
// payment in closed form (the allocation is linear in the declared cost, so
// the payment integral is a quadratic polynomial).
inline Outcome prune_and_assign(const DivisibleInstance& in) {
  PruningResult p = pruning(in);
  AssignConstants k = assign_constants(in, p);
  std::vector<Rat> v = detail::linear_slopes(in);

  Outcome out;
  out.mechanism = "prune-assign";
  out.allocation.mode = AllocMode::Fraction;
  out.allocation.x.assign(in.agents.size(), Rat(0));
  out.payments.assign(in.agents.size(), Rat(0));
  out.value = Rat(0);

  for (int id : p.s) {
    const Rat& vi = v[static_cast<std::size_t>(id)];
    const Rat& ci = in.agents[id].cost;
    const Rat& qi = id == p.i_star ? k.q_star : k.q_tail;
    Rat xi = qi + (vi - p.r * ci) / (Rat(2) * vi);
    if (xi.is_negative() || xi > Rat(1))
      throw std::logic_error("prune_and_assign: allocation escaped [0, 1]");
    out.allocation.x[static_cast<std::size_t>(id)] = xi;
    out.value += vi * xi;

    Rat upper = vi / p.r;  // declaring above this rate-threshold gets pruned
    if (ci > upper) throw std::logic_error("prune_and_assign: winner above its rate threshold");
    auto antiderivative = [&](const Rat& z) {
      return (qi + Rat(1, 2)) * z - p.r * z * z / (Rat(4) * vi);
    };
    out.payments[static_cast<std::size_t>(id)] =
        ci * xi + antiderivative(upper) - antiderivative(ci);
  }

  out.diagnostics.i_star = p.i_star;
  out.diagnostics.r = p.r;
  out.diagnostics.q = k.q;
  out.diagnostics.q_star = k.q_star;
  out.diagnostics.q_tail = k.q_tail;
  out.diagnostics.winners_s = p.s;
  out.diagnostics.tail_t = p.t;
  return out;
}

// The n-level discretization of a divisible instance: level j of agent i is
// the value increment between fractions (j-1)/n and j/n at a per-level cost
// of c_i / n.
inline KLevelInstance chunk_instance(const DivisibleInstance& in) {
  validate_divisible(in);
  KLevelInstance j;
  j.budget = in.budget;
  j.k = in.n();
  j.regime = Regime::AllIn;
  const Rat n(in.n());
  for (const DivisibleAgent& a : in.agents) {
    KLevelAgent out;
    out.cost = a.cost / n;
    Rat prev(0);
    for (int step = 1; step <= in.n(); ++step) {
      Rat here = eval_valuation(a.valuation, Rat(step) / n);
      out.marginals.push_back(here - prev);
      prev = here;
    }
    j.agents.push_back(std::move(out));
  }
  return j;
}

// Chunk-&-solve for concave piecewise-linear valuations: runs the level
// mechanism on the n-level discretization and scales the hired levels back
// to fractions. Payments transfer from the level instance unchanged.
inline Outcome chunk_and_solve(const DivisibleInstance& in) {
  KLevelInstance j = chunk_instance(in);
  KLevelRule rule = KLevelRule::sort_reject();
  SortRejectResult run = rule.run(j);

  Outcome out;
  out.mechanism = "chunk-solve";
  out.allocation.mode = AllocMode::Fraction;
  out.allocation.x.reserve(in.agents.size());
  const Rat n(in.n());
  for (int i = 0; i < in.n(); ++i)
    out.allocation.x.push_back(Rat(run.x[static_cast<std::size_t>(i)]) / n);
  out.payments = mechanism_payments(rule, j, run);
  out.value = value_of_levels(j, run.x);
  out.diagnostics.if_branch = run.trace.took_if_branch;
  out.diagnostics.i_star = run.trace.i_star;
  out.diagnostics.alpha = run.trace.alpha;
  out.diagnostics.removals = run.trace.removals;
  out.diagnostics.final_ell = run.trace.final_ell;
  return out;
}

}  // namespace bfpd
