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

// Exact critical payments for the k-level mechanisms.
//
// For a monotone allocation rule, agent i's payment decomposes into one
// critical declared cost per hired level: p_ij = sup { z : x_i(z) >= j }.
// Everything here rests on reconstructing x_i as an exact step function of
// the declared cost z. The mechanism's decisions only flip where one of a
// small family of rational equations crosses:
//
//   (a) the global value-per-cost order changes: z = m_i(j) * c_l / m_l(j'),
//   (b) the greedy's budget exhaustion point moves past a prefix boundary:
//       z = (B - C) / t for a prefix with t levels of agent i and foreign
//       cost C,
//   (c) a one-shot branch test flips for some agent j: OPT_F^k of the
//       sub-instance without j crosses a constant threshold,
//   (d) the ratio argmax flips between agent i and some j, and
//   (e) the tail-rejection loop admits one more removal: OPT_F^k crosses
//       (v_s - m_s) / alpha for a removal state s.
//
// Between candidates of kinds (a) and (b) every greedy walk has a fixed
// structure, so each sub-instance optimum is piecewise of the form
// A, A - B*z, or A + B/z, and the equations in (c), (d), (e) have rational
// roots. The curve is built by recursive bisection over those candidate
// points, pruning any span whose two evaluated endpoints agree (the rule is
// monotone, so equal endpoints force a constant span).

#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bfpd/klevel_mech.hpp"
#include "bfpd/knapsack.hpp"
#include "bfpd/model.hpp"
#include "bfpd/rational.hpp"

namespace bfpd {

class NonMonotoneDetected : public std::logic_error {
 public:
  explicit NonMonotoneDetected(const std::string& what) : std::logic_error(what) {}
};

// A k-level allocation rule plus its payment domain.
class KLevelRule {
 public:
  enum class Kind { SortReject, BestIn };

  static KLevelRule sort_reject(SortRejectConfig cfg = {}) {
    KLevelRule r;
    r.kind_ = Kind::SortReject;
    r.sr_ = cfg;
    return r;
  }
  static KLevelRule best_in(BestInConfig cfg) {
    KLevelRule r;
    r.kind_ = Kind::BestIn;
    r.bi_ = cfg;
    return r;
  }

  Kind kind() const { return kind_; }
  const char* name() const { return kind_ == Kind::SortReject ? "sort-reject" : "best-in"; }
  Regime regime() const { return kind_ == Kind::SortReject ? Regime::AllIn : Regime::BestIn; }
  const Rat& alpha() const { return kind_ == Kind::SortReject ? sr_.alpha : bi_->alpha; }
  const Rat* beta() const { return kind_ == Kind::SortReject ? nullptr : &bi_->beta; }
  const SortRejectConfig& sort_reject_config() const { return sr_; }
  const BestInConfig& best_in_config() const { return *bi_; }

  // Highest cost an agent may declare and keep the instance valid.
  Rat cost_cap(const KLevelInstance& in) const {
    return kind_ == Kind::SortReject ? in.budget / Rat(in.k) : in.budget;
  }
  // Levels hired from the ratio winner by the if-branch.
  long star_levels(const KLevelInstance& in) const { return kind_ == Kind::SortReject ? in.k : 1; }
  // Bundle value entering the ratio: the full bundle, or the single best level.
  Rat bundle(const KLevelAgent& a) const {
    return kind_ == Kind::SortReject ? a.full_value() : a.value(1);
  }

  SortRejectResult run(const KLevelInstance& in) const {
    return kind_ == Kind::SortReject ? sort_and_reject(in, sr_) : greedy_best_in(in, *bi_);
  }

 private:
  Kind kind_ = Kind::SortReject;
  SortRejectConfig sr_{};
  std::optional<BestInConfig> bi_;
};

// Allocation level of one agent as a function of their declared cost on
// (0, cap]. level_open[t] holds on the open interval (z[t-1], z[t]) with
// z[-1] = 0; level_at[t] holds exactly at z[t]. z.back() == cap, and the
// level is 0 beyond the cap.
struct StepFunction {
  std::vector<Rat> z;
  std::vector<long> level_open;
  std::vector<long> level_at;
  Rat cap;

  long eval(const Rat& c) const {
    if (!c.is_positive() || c > cap) throw std::domain_error("StepFunction::eval: cost outside (0, cap]");
    std::size_t lo = 0, hi = z.size();
    while (lo < hi) {  // first t with z[t] >= c
      std::size_t mid = (lo + hi) / 2;
      if (z[mid] < c)
        lo = mid + 1;
      else
        hi = mid;
    }
    return z[lo] == c ? level_at[lo] : level_open[lo];
  }

  // Exact integral of the step function over [c, cap].
  Rat integral_from(const Rat& c) const {
    Rat total(0);
    Rat prev(0);
    for (std::size_t t = 0; t < z.size(); ++t) {
      const Rat& lo = prev < c ? c : prev;
      if (z[t] > lo && level_open[t] != 0) total += (z[t] - lo) * Rat(level_open[t]);
      prev = z[t];
    }
    return total;
  }
};

// Per-level critical costs of one agent, highest level last.
struct CriticalPayments {
  long level = 0;               // x_i at the true cost
  std::vector<Rat> thresholds;  // thresholds[j-1] = p_ij for j = 1..level
  Rat total;                    // sum of thresholds == the Myerson payment
};

namespace detail {

// Rebuilds the mechanism's decisions as agent i's declared cost varies,
// reusing the fixed sorted order of everyone else's levels.
class CurveBuilder {
 public:
  CurveBuilder(const KLevelRule& rule, const KLevelInstance& in, int agent)
      : rule_(rule), in_(in), i_(agent), cap_(rule.cost_cap(in)) {
    if (agent < 0 || agent >= in.n()) throw BadIndex("allocation_curve: agent index out of range");
    auto all = sorted_entries(in);
    for (const LevelEntry& e : all)
      if (e.agent != i_) others_.push_back(e);
    for (int j = 0; j < in.n(); ++j) bundles_.push_back(rule.bundle(in.agents[j]));
    star_levels_ = rule.star_levels(in);
    alpha_ = rule.alpha();
    d_self_ = others_only_value();
    merged_.reserve(static_cast<std::size_t>(in.n()) * static_cast<std::size_t>(in.k));
  }

  StepFunction build() {
    long x_cap = eval(cap_);
    std::vector<Rat> cands = order_candidates();
    refine(0, Rat(0), std::nullopt, cap_, x_cap, cands, 0, cands.size());
    return assemble();
  }

  // Allocation of agent i when declaring z; exact mechanism replay.
  long eval(const Rat& z) {
    auto it = memo_.find(z);
    if (it != memo_.end()) return it->second;
    long x = eval_uncached(z);
    memo_.emplace(z, x);
    return x;
  }

 private:
  struct MEntry {
    int agent;
    int level;
    const Rat* marginal;
  };

  // Greedy walk over others_ only (agent i absent), used for the constant
  // benchmark OPT_F^k(c_{-i}).
  Rat others_only_value() const {
    Rat value(0);
    Rat remaining = in_.budget;
    for (const LevelEntry& e : others_) {
      if (remaining.is_zero()) break;
      const Rat& c = in_.agents[e.agent].cost;
      if (c <= remaining) {
        value += e.marginal;
        remaining -= c;
      } else {
        value += e.marginal * (remaining / c);
        break;
      }
    }
    return value;
  }

  // Merge agent i's levels (at declared cost z) into the others' fixed
  // value-per-cost order: exactly the order a full re-sort would produce.
  void merge(const Rat& z) {
    merged_.clear();
    const auto& mi = in_.agents[i_].marginals;
    std::size_t oi = 0;
    int j = 0;
    auto i_first = [&](const LevelEntry& e) {
      // m_i(j)/z vs e.ratio, cross-multiplied; ties by agent id.
      Rat lhs = mi[j];
      Rat rhs = e.ratio * z;
      if (lhs != rhs) return lhs > rhs;
      return i_ < e.agent;
    };
    while (oi < others_.size() || j < in_.k) {
      if (j == in_.k) {
        merged_.push_back({others_[oi].agent, others_[oi].level, &others_[oi].marginal});
        ++oi;
      } else if (oi == others_.size() || i_first(others_[oi])) {
        merged_.push_back({i_, j + 1, &mi[j]});
        ++j;
      } else {
        merged_.push_back({others_[oi].agent, others_[oi].level, &others_[oi].marginal});
        ++oi;
      }
    }
  }

  struct WalkRecord {
    Rat value;           // sub-instance OPT_F^k at this z
    Rat full_value;      // value of the fully bought prefix
    Rat foreign_cost;    // cost of others' levels in that prefix
    long i_full = 0;     // agent i levels in that prefix
    int frac_agent = -1; // -1: none
    Rat frac_marginal;
    std::vector<const MEntry*> prefix;  // fully bought entries, in order
  };

  // Greedy walk over merged_ with agent i priced at z, skipping one agent.
  WalkRecord walk(const Rat& z, int skip, bool record_prefix) {
    WalkRecord r;
    r.value = Rat(0);
    r.full_value = Rat(0);
    r.foreign_cost = Rat(0);
    Rat remaining = in_.budget;
    for (const MEntry& e : merged_) {
      if (e.agent == skip) continue;
      if (remaining.is_zero()) break;
      const Rat& c = e.agent == i_ ? z : in_.agents[e.agent].cost;
      if (c <= remaining) {
        r.value += *e.marginal;
        r.full_value += *e.marginal;
        remaining -= c;
        if (e.agent == i_)
          ++r.i_full;
        else
          r.foreign_cost += c;
        if (record_prefix) r.prefix.push_back(&e);
      } else {
        r.value += *e.marginal * (remaining / c);
        r.frac_agent = e.agent;
        r.frac_marginal = *e.marginal;
        break;
      }
    }
    return r;
  }

  long eval_uncached(const Rat& z) {
    merge(z);
    WalkRecord g = walk(z, -1, /*record_prefix=*/true);

    // Ratio argmax with zero denominators comparing as +infinity; ties keep
    // the lowest agent id. Mirrors detail::ratio_argmax.
    int best = 0;
    Rat d_best = opt_minus(z, 0);
    for (int j = 1; j < in_.n(); ++j) {
      Rat d_j = opt_minus(z, j);
      if (bundles_[static_cast<std::size_t>(j)] * d_best >
          bundles_[static_cast<std::size_t>(best)] * d_j) {
        best = j;
        d_best = d_j;
      }
    }
    bool take_if;
    if (rule_.kind() == KLevelRule::Kind::SortReject)
      take_if = bundles_[static_cast<std::size_t>(best)] * (Rat(1) - alpha_) >= alpha_ * d_best;
    else
      take_if = bundles_[static_cast<std::size_t>(best)] >= *rule_.beta() * d_best;

    if (take_if) return best == i_ ? star_levels_ : 0;

    // Tail rejection: pop the bought order from the back while the remaining
    // value stays above alpha * OPT_F^k.
    Rat v = g.full_value;
    const Rat threshold = alpha_ * g.value;
    std::size_t tail = g.prefix.size();
    long i_level = g.i_full;
    while (tail > 0) {
      const MEntry& last = *g.prefix[tail - 1];
      if (v - *last.marginal >= threshold) {
        v -= *last.marginal;
        if (last.agent == i_) --i_level;
        --tail;
      } else {
        break;
      }
    }
    if (tail == 0) throw std::logic_error("allocation_curve: removal loop emptied the allocation");
    return i_level;
  }

  Rat opt_minus(const Rat& z, int skip) {
    if (skip == i_) return d_self_;
    return walk(z, skip, /*record_prefix=*/false).value;
  }

  // Kind (a): declared costs where agent i's ratios tie with a foreign level.
  std::vector<Rat> order_candidates() const {
    std::set<Rat> out;
    for (const LevelEntry& e : others_) {
      if (!e.ratio.is_positive()) continue;
      for (const Rat& m : in_.agents[i_].marginals) {
        if (!m.is_positive()) continue;
        Rat zc = m / e.ratio;
        if (zc.is_positive() && zc < cap_) out.insert(zc);
      }
    }
    return {out.begin(), out.end()};
  }

  // Kind (b): declared costs where some sub-instance walk exhausts the budget
  // exactly at a prefix boundary. Valid across (a, b) because the order is
  // fixed there.
  std::vector<Rat> budget_candidates(const Rat& a, const Rat& b) {
    Rat zm = (a + b) / Rat(2);
    merge(zm);
    std::set<Rat> out;
    for (int skip = -1; skip < in_.n(); ++skip) {
      if (skip == i_) continue;
      Rat foreign(0);
      long t = 0;
      for (const MEntry& e : merged_) {
        if (e.agent == skip) continue;
        if (e.agent == i_)
          ++t;
        else
          foreign += in_.agents[e.agent].cost;
        if (t >= 1) {
          Rat zc = (in_.budget - foreign) / Rat(t);
          if (zc > a && zc < b) out.insert(zc);
        }
      }
    }
    return {out.begin(), out.end()};
  }

  struct Piece {
    int kind;  // 0: A, 1: A - B*z, 2: A + B/z
    Rat a, b;

    std::optional<Rat> solve(const Rat& target) const {
      switch (kind) {
        case 1:
          if (b.is_zero()) return std::nullopt;
          return (a - target) / b;
        case 2: {
          if (target == a) return std::nullopt;
          Rat root = b / (target - a);
          if (!root.is_positive()) return std::nullopt;
          return root;
        }
        default:
          return std::nullopt;
      }
    }
  };

  Piece piece_of(const WalkRecord& r) const {
    if (r.frac_agent == -1) return {0, r.full_value, Rat(0)};
    if (r.frac_agent == i_)
      return {2, r.full_value - r.frac_marginal * Rat(r.i_full),
              r.frac_marginal * (in_.budget - r.foreign_cost)};
    const Rat& cl = in_.agents[r.frac_agent].cost;
    if (r.i_full == 0)
      return {0, r.full_value + r.frac_marginal * (in_.budget - r.foreign_cost) / cl, Rat(0)};
    return {1, r.full_value + r.frac_marginal * (in_.budget - r.foreign_cost) / cl,
            r.frac_marginal * Rat(r.i_full) / cl};
  }

  // Kinds (c), (d), (e): rational roots of the fixed-structure decision
  // equations inside (a, b).
  std::vector<Rat> decision_roots(const Rat& a, const Rat& b) {
    Rat zm = (a + b) / Rat(2);
    merge(zm);
    std::set<Rat> out;
    auto keep = [&](std::optional<Rat> root) {
      if (root && *root > a && *root < b) out.insert(*root);
    };

    WalkRecord full = walk(zm, -1, /*record_prefix=*/true);
    Piece f_n = piece_of(full);

    const bool sr = rule_.kind() == KLevelRule::Kind::SortReject;
    const Rat& vi = bundles_[static_cast<std::size_t>(i_)];
    for (int j = 0; j < in_.n(); ++j) {
      if (j == i_) continue;
      Piece f_j = piece_of(walk(zm, j, /*record_prefix=*/false));
      const Rat& vj = bundles_[static_cast<std::size_t>(j)];
      // (c) branch test for agent j: f_j crosses its constant threshold.
      if (sr)
        keep(f_j.solve(vj * (Rat(1) - alpha_) / alpha_));
      else if (rule_.beta()->is_positive())
        keep(f_j.solve(vj / *rule_.beta()));
      // (d) argmax flip between i and j.
      if (vi.is_positive()) keep(f_j.solve(vj * d_self_ / vi));
    }

    // (e) tail-rejection state thresholds against the full-instance optimum.
    Rat v_s = full.full_value;
    for (std::size_t s = 0; s < full.prefix.size(); ++s) {
      const Rat& m_s = *full.prefix[full.prefix.size() - 1 - s]->marginal;
      keep(f_n.solve((v_s - m_s) / alpha_));
      v_s -= m_s;
    }
    return {out.begin(), out.end()};
  }

  // Recursive bisection over candidate points. stage 0 walks the global order
  // candidates, stage 1 the per-span budget candidates, stage 2 the decision
  // roots; a span whose evaluated endpoints agree is constant by monotonicity.
  void refine(int stage, const Rat& a, std::optional<long> xa, const Rat& b, long xb,
              const std::vector<Rat>& cands, std::size_t lo, std::size_t hi) {
    if (xa && *xa == xb) {
      record_open(a, b, xb);
      record_point(b, xb);
      return;
    }
    if (lo == hi) {
      if (stage == 0) {
        std::vector<Rat> next = budget_candidates(a, b);
        refine(1, a, xa, b, xb, next, 0, next.size());
      } else if (stage == 1) {
        std::vector<Rat> next = decision_roots(a, b);
        refine(2, a, xa, b, xb, next, 0, next.size());
      } else {
        long open_level = eval((a + b) / Rat(2));
        record_open(a, b, open_level);
        record_point(b, xb);
      }
      return;
    }
    std::size_t mid = lo + (hi - lo) / 2;
    const Rat& zm = cands[mid];
    long xm = eval(zm);
    refine(stage, a, xa, zm, xm, cands, lo, mid);
    refine(stage, zm, xm, b, xb, cands, mid + 1, hi);
  }

  void record_open(const Rat& a, const Rat& b, long level) {
    opens_.emplace(a, std::make_pair(b, level));
  }
  void record_point(const Rat& zp, long level) { points_.emplace(zp, level); }

  StepFunction assemble() const {
    StepFunction f;
    f.cap = cap_;
    // Walk the recorded spans left to right, closing a block whenever the
    // open level changes or the boundary point disagrees with it.
    Rat cursor(0);
    std::vector<std::pair<Rat, long>> raw_z;  // (right endpoint, open level)
    std::vector<long> raw_at;
    while (true) {
      auto it = opens_.find(cursor);
      if (it == opens_.end())
        throw std::logic_error("allocation_curve: span coverage gap at z = " + cursor.str());
      const Rat& b = it->second.first;
      long open_level = it->second.second;
      auto pt = points_.find(b);
      if (pt == points_.end())
        throw std::logic_error("allocation_curve: missing level at z = " + b.str());
      raw_z.emplace_back(b, open_level);
      raw_at.push_back(pt->second);
      if (b == cap_) break;
      cursor = b;
    }
    for (std::size_t t = 0; t < raw_z.size(); ++t) {
      bool merge_with_next = t + 1 < raw_z.size() && raw_z[t + 1].second == raw_z[t].second &&
                             raw_at[t] == raw_z[t].second;
      if (merge_with_next) continue;
      f.z.push_back(raw_z[t].first);
      f.level_open.push_back(raw_z[t].second);
      f.level_at.push_back(raw_at[t]);
    }
    for (std::size_t t = 0; t < f.z.size(); ++t) {
      if (t + 1 < f.z.size()) {
        if (f.level_open[t] < f.level_open[t + 1] || f.level_at[t] < f.level_open[t + 1])
          throw NonMonotoneDetected("allocation_curve: level increases at z = " + f.z[t].str());
      }
      if (f.level_at[t] > f.level_open[t])
        throw NonMonotoneDetected("allocation_curve: level spikes at z = " + f.z[t].str());
    }
    return f;
  }

  const KLevelRule& rule_;
  const KLevelInstance& in_;
  int i_;
  Rat cap_;
  std::vector<LevelEntry> others_;
  std::vector<Rat> bundles_;
  long star_levels_ = 0;
  Rat alpha_;
  Rat d_self_;
  std::vector<MEntry> merged_;
  std::map<Rat, long> memo_;
  std::map<Rat, std::pair<Rat, long>> opens_;
  std::map<Rat, long> points_;
};

}  // namespace detail

// Exact allocation curve of one agent under the given rule, on (0, cap].
inline StepFunction allocation_curve(const KLevelRule& rule, const KLevelInstance& in, int agent) {
  validate_klevel(in);
  if (in.regime != rule.regime())
    throw RegimeMismatch("allocation_curve: instance regime does not match the rule");
  detail::CurveBuilder builder(rule, in, agent);
  return builder.build();
}

// Critical payments read off a step function. The total provably equals the
// direct payment integral c * x(c) + int_c^cap x(z) dz; both are computed and
// compared exactly.
inline CriticalPayments critical_payments(const StepFunction& curve, const Rat& true_cost) {
  CriticalPayments out;
  out.level = curve.eval(true_cost);
  out.total = Rat(0);
  for (long j = 1; j <= out.level; ++j) {
    Rat p(-1);
    for (std::size_t t = curve.z.size(); t-- > 0;) {
      if (curve.level_open[t] >= j) {
        p = curve.z[t];
        break;
      }
    }
    if (p.is_negative())
      throw std::logic_error("critical_payments: no interval supports a hired level");
    out.thresholds.push_back(p);
    out.total += p;
  }
  Rat myerson = true_cost * Rat(out.level) + curve.integral_from(true_cost);
  if (myerson != out.total)
    throw std::logic_error("critical_payments: threshold sum disagrees with the payment integral");
  return out;
}

// Payments for every agent under the rule's allocation. Losers are paid 0;
// each winner's curve must reproduce the mechanism's allocation at the true
// cost.
inline std::vector<Rat> mechanism_payments(const KLevelRule& rule, const KLevelInstance& in,
                                           const SortRejectResult& run) {
  std::vector<Rat> pay(in.agents.size(), Rat(0));
  for (int i = 0; i < in.n(); ++i) {
    if (run.x[static_cast<std::size_t>(i)] == 0) continue;
    StepFunction curve = allocation_curve(rule, in, i);
    if (curve.eval(in.agents[i].cost) != run.x[static_cast<std::size_t>(i)])
      throw std::logic_error("mechanism_payments: curve disagrees with the mechanism run");
    pay[static_cast<std::size_t>(i)] = critical_payments(curve, in.agents[i].cost).total;
  }
  return pay;
}

// One-call mechanism execution with exact payments and diagnostics.
inline Outcome solve_klevel(const KLevelInstance& in, const KLevelRule& rule) {
  SortRejectResult run = rule.run(in);
  Outcome out;
  out.mechanism = rule.name();
  out.allocation = Allocation::from_levels(run.x);
  out.payments = mechanism_payments(rule, in, run);
  out.value = value_of_levels(in, run.x);
  out.diagnostics.if_branch = run.trace.took_if_branch;
  out.diagnostics.i_star = run.trace.i_star;
  out.diagnostics.alpha = run.trace.alpha;
  out.diagnostics.beta = run.trace.beta;
  out.diagnostics.removals = run.trace.removals;
  out.diagnostics.final_ell = run.trace.final_ell;
  return out;
}

// Test oracle: brackets p_ij between two mechanism replays at most tol apart.
// Independent of the step-function engine; replays the public mechanism on a
// modified instance at every probe. Returns nullopt when level j is not hired
// at the true cost.
inline std::optional<std::pair<Rat, Rat>> bisect_threshold_oracle(
    const KLevelRule& rule, const KLevelInstance& in, int agent, long level,
    const Rat& tol = Rat(1, 1048576)) {
  if (agent < 0 || agent >= in.n()) throw BadIndex("bisect_threshold_oracle: agent out of range");
  if (level < 1) throw BadIndex("bisect_threshold_oracle: level must be >= 1");
  KLevelInstance probe = in;
  auto x_at = [&](const Rat& z) {
    probe.agents[static_cast<std::size_t>(agent)].cost = z;
    return rule.run(probe).x[static_cast<std::size_t>(agent)];
  };
  if (x_at(in.agents[static_cast<std::size_t>(agent)].cost) < level) return std::nullopt;
  Rat cap = rule.cost_cap(in);
  if (x_at(cap) >= level) return std::make_pair(cap, cap);
  Rat lo = in.agents[static_cast<std::size_t>(agent)].cost, hi = cap;
  while (hi - lo > tol) {
    Rat mid = (lo + hi) / Rat(2);
    if (x_at(mid) >= level)
      lo = mid;
    else
      hi = mid;
  }
  return std::make_pair(lo, hi);
}

}  // namespace bfpd
