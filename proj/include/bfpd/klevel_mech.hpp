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

#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "bfpd/knapsack.hpp"
#include "bfpd/model.hpp"
#include "bfpd/rational.hpp"

namespace bfpd {

class InvalidAlpha : public std::invalid_argument {
 public:
  explicit InvalidAlpha(const std::string& what) : std::invalid_argument(what) {}
};

class InvalidAlphaBeta : public std::invalid_argument {
 public:
  explicit InvalidAlphaBeta(const std::string& what) : std::invalid_argument(what) {}
};

class RegimeMismatch : public std::invalid_argument {
 public:
  explicit RegimeMismatch(const std::string& what) : std::invalid_argument(what) {}
};

class BadTheta : public std::invalid_argument {
 public:
  explicit BadTheta(const std::string& what) : std::invalid_argument(what) {}
};

// Sort-&-Reject rejection rate. The removal loop is value-preserving only for
// alpha below (3 - sqrt(5))/2, certified rationally as alpha^2 - 3*alpha + 1 > 0;
// construction enforces that bound. Budget-feasibility on unrestricted
// instances additionally needs alpha <= 1/(2 + sqrt(3)), certified as
// alpha^2 - 4*alpha + 1 >= 0; large-market rates may exceed it deliberately,
// so that bound is a queryable predicate rather than a constructor error.
struct SortRejectConfig {
  Rat alpha;

  SortRejectConfig() : SortRejectConfig(Rat(267949, 1000000)) {}
  explicit SortRejectConfig(Rat a) : alpha(std::move(a)) {
    if (!alpha.is_positive())
      throw InvalidAlpha("SortRejectConfig: alpha must be positive");
    if (!(alpha * alpha - Rat(3) * alpha + Rat(1)).is_positive())
      throw InvalidAlpha("SortRejectConfig: alpha must be below (3 - sqrt(5))/2");
  }

  bool in_unrestricted_budget_regime() const {
    return (alpha * alpha - Rat(4) * alpha + Rat(1)).sign() >= 0;
  }
};

// Largest rational below the positive root of (1 - a)^2 - a - theta = 0,
// i.e. the large-market rate (3 - sqrt(5 + 4*theta))/2, found by bisection.
// The result satisfies theta + a <= (1 - a)^2 exactly and sits within 1e-7 of
// the irrational optimum. theta = 1 admits no positive rate.
inline Rat large_market_alpha(const Rat& theta) {
  if (!theta.is_positive() || theta > Rat(1))
    throw BadTheta("large_market_alpha: theta must lie in (0, 1]");
  if (theta == Rat(1))
    throw BadTheta("large_market_alpha: no positive alpha exists at theta = 1");
  auto certified = [&](const Rat& a) {
    return ((Rat(1) - a) * (Rat(1) - a) - a - theta).sign() >= 0;
  };
  Rat lo(0), hi(1, 2);
  const Rat width_goal(1, 10000000);
  for (int iter = 0; iter < 80; ++iter) {
    if (lo.is_positive() && hi - lo <= width_goal) break;
    Rat mid = (lo + hi) / Rat(2);
    if (certified(mid))
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

inline SortRejectConfig large_market_config(const Rat& theta) {
  return SortRejectConfig(large_market_alpha(theta));
}

// Greedy-Best-In rates. alpha must satisfy the exact certificate
// alpha^2 * k - (3 + k) * alpha + 1 >= 0 on the small-root side; beta is then
// pinned to (1 - 2*alpha) / (alpha * k + 1), which makes the budget identity
// (alpha * (1 + beta * k) + beta) / (1 - alpha) = 1 hold exactly.
struct BestInConfig {
  int k = 1;
  Rat alpha;
  Rat beta;

  static BestInConfig with_alpha(int k, const Rat& alpha) {
    if (k < 1) throw InvalidAlphaBeta("BestInConfig: k must be >= 1");
    if (!alpha.is_positive()) throw InvalidAlphaBeta("BestInConfig: alpha must be positive");
    Rat cert = alpha * alpha * Rat(k) - Rat(3 + k) * alpha + Rat(1);
    if (cert.is_negative())
      throw InvalidAlphaBeta("BestInConfig: alpha above the best-in feasibility root");
    if (Rat(2 * k) * alpha > Rat(3 + k))
      throw InvalidAlphaBeta("BestInConfig: alpha on the wrong side of the certificate");
    BestInConfig cfg;
    cfg.k = k;
    cfg.alpha = alpha;
    cfg.beta = (Rat(1) - Rat(2) * alpha) / (alpha * Rat(k) + Rat(1));
    return cfg;
  }

  // Default rate: largest certified rational below the exact root
  // (3 + k - sqrt(k^2 + 2k + 9)) / (2k), found by bisection.
  static BestInConfig make(int k) {
    if (k < 1) throw InvalidAlphaBeta("BestInConfig: k must be >= 1");
    auto certified = [&](const Rat& a) {
      return (a * a * Rat(k) - Rat(3 + k) * a + Rat(1)).sign() >= 0;
    };
    Rat lo(0), hi(1, 2);
    const Rat width_goal(1, 10000000);
    for (int iter = 0; iter < 80; ++iter) {
      if (lo.is_positive() && hi - lo <= width_goal) break;
      Rat mid = (lo + hi) / Rat(2);
      if (certified(mid))
        lo = mid;
      else
        hi = mid;
    }
    return with_alpha(k, lo);
  }
};

// Run details for the two k-level mechanisms. For the if-branch, floor,
// removals and final_ell stay empty.
struct SortRejectTrace {
  bool took_if_branch = false;
  int i_star = -1;
  Rat alpha;
  std::optional<Rat> beta;               // best-in runs only
  std::vector<long> initial_floor;       // else branch: floor of the greedy relaxation
  std::vector<std::pair<int, int>> removals;  // (agent, level) in removal order
  std::optional<int> final_ell;
  Rat opt_f;                 // OPT_F^k(c)
  std::vector<Rat> d_minus;  // OPT_F^k(c_{-i}) for every agent
};

struct SortRejectResult {
  std::vector<long> x;
  SortRejectTrace trace;
};

namespace detail {

struct WalkOut {
  Rat value;
  std::vector<Rat> x;
  std::optional<int> fractional_agent;
  int full_prefix_len = 0;
};

// Same walk as greedy_fractional, over a prebuilt order, without copying the
// entry list. full_prefix_len counts the entries bought whole: they form a
// prefix of the order restricted to non-excluded entries.
inline WalkOut walk(const KLevelInstance& in, const std::vector<LevelEntry>& entries, int excluded) {
  WalkOut out;
  out.x.assign(in.agents.size(), Rat(0));
  out.value = Rat(0);
  Rat remaining = in.budget;
  for (const LevelEntry& e : entries) {
    if (e.agent == excluded) continue;
    if (remaining.is_zero()) break;
    const Rat& c = in.agents[e.agent].cost;
    if (c <= remaining) {
      out.x[e.agent] += Rat(1);
      out.value += e.marginal;
      remaining -= c;
      ++out.full_prefix_len;
    } else {
      Rat frac = remaining / c;
      out.x[e.agent] += frac;
      out.value += e.marginal * frac;
      remaining = Rat(0);
      out.fractional_agent = e.agent;
      break;
    }
  }
  return out;
}

// argmax_i bundle_i / d_i under the cross-multiplication order, where a zero
// denominator with a positive numerator compares as +infinity. Ties keep the
// lowest agent id.
inline int ratio_argmax(const std::vector<Rat>& bundle, const std::vector<Rat>& d) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(bundle.size()); ++i)
    if (bundle[i] * d[best] > bundle[best] * d[i]) best = i;
  return best;
}

// Shared else-branch: floor the greedy relaxation, then pop levels from the
// tail of the bought order while the remaining value stays above
// alpha * OPT_F^k. The loop provably stops before emptying the allocation;
// that is asserted, not relied on.
inline void reject_tail(const KLevelInstance& in, const std::vector<LevelEntry>& entries,
                        const WalkOut& g, const Rat& alpha, std::vector<long>& x,
                        SortRejectTrace& trace) {
  x.assign(in.agents.size(), 0);
  for (int i = 0; i < in.n(); ++i) x[i] = g.x[i].floor_long();
  trace.initial_floor = x;

  // Entry indices bought whole, skipping nothing: the first full_prefix_len
  // positions of `entries`.
  int tail = g.full_prefix_len;
  Rat v = value_of_levels(in, x);
  const Rat threshold = alpha * g.value;
  while (tail > 0) {
    const LevelEntry& last = entries[static_cast<std::size_t>(tail - 1)];
    if (v - last.marginal >= threshold) {
      --x[last.agent];
      v -= last.marginal;
      trace.removals.emplace_back(last.agent, last.level);
      --tail;
    } else {
      break;
    }
  }
  if (tail == 0) throw std::logic_error("reject_tail: removal loop emptied the allocation");
  trace.final_ell = entries[static_cast<std::size_t>(tail - 1)].agent;
}

inline std::vector<Rat> all_opt_minus(const KLevelInstance& in,
                                      const std::vector<LevelEntry>& entries) {
  std::vector<Rat> d(static_cast<std::size_t>(in.n()));
  for (int i = 0; i < in.n(); ++i) d[static_cast<std::size_t>(i)] = walk(in, entries, i).value;
  return d;
}

}  // namespace detail

// Sort-&-Reject mechanism for the all-in regime. Hires either the full bundle
// of the agent with the best value-per-benchmark ratio, or the tail-rejected
// floor of the greedy relaxation.
inline SortRejectResult sort_and_reject(const KLevelInstance& in, const SortRejectConfig& cfg = {}) {
  validate_klevel(in);
  if (in.regime != Regime::AllIn)
    throw RegimeMismatch("sort_and_reject: requires an all-in instance");

  auto entries = detail::sorted_entries(in);
  auto g = detail::walk(in, entries, -1);

  SortRejectResult out;
  out.trace.alpha = cfg.alpha;
  out.trace.opt_f = g.value;
  out.trace.d_minus = detail::all_opt_minus(in, entries);

  std::vector<Rat> bundle(static_cast<std::size_t>(in.n()));
  for (int i = 0; i < in.n(); ++i) bundle[static_cast<std::size_t>(i)] = in.agents[i].full_value();
  int i_star = detail::ratio_argmax(bundle, out.trace.d_minus);
  out.trace.i_star = i_star;

  const Rat& d_star = out.trace.d_minus[static_cast<std::size_t>(i_star)];
  if (bundle[static_cast<std::size_t>(i_star)] * (Rat(1) - cfg.alpha) >= cfg.alpha * d_star) {
    out.trace.took_if_branch = true;
    out.x.assign(in.agents.size(), 0);
    out.x[static_cast<std::size_t>(i_star)] = in.k;
  } else {
    out.trace.took_if_branch = false;
    detail::reject_tail(in, entries, g, cfg.alpha, out.x, out.trace);
  }
  return out;
}

// Greedy-Best-In mechanism for the best-in regime. The if-branch hires a
// single level of the ratio argmax (against the beta threshold); the else
// branch coincides with Sort-&-Reject's tail rejection at rate alpha.
inline SortRejectResult greedy_best_in(const KLevelInstance& in, const BestInConfig& cfg) {
  validate_klevel(in);
  if (in.regime != Regime::BestIn)
    throw RegimeMismatch("greedy_best_in: requires a best-in instance");
  if (cfg.k != in.k)
    throw InvalidAlphaBeta("greedy_best_in: config was built for a different k");

  auto entries = detail::sorted_entries(in);
  auto g = detail::walk(in, entries, -1);

  SortRejectResult out;
  out.trace.alpha = cfg.alpha;
  out.trace.beta = cfg.beta;
  out.trace.opt_f = g.value;
  out.trace.d_minus = detail::all_opt_minus(in, entries);

  std::vector<Rat> bundle(static_cast<std::size_t>(in.n()));
  for (int i = 0; i < in.n(); ++i) bundle[static_cast<std::size_t>(i)] = in.agents[i].value(1);
  int i_star = detail::ratio_argmax(bundle, out.trace.d_minus);
  out.trace.i_star = i_star;

  const Rat& d_star = out.trace.d_minus[static_cast<std::size_t>(i_star)];
  if (bundle[static_cast<std::size_t>(i_star)] >= cfg.beta * d_star) {
    out.trace.took_if_branch = true;
    out.x.assign(in.agents.size(), 0);
    out.x[static_cast<std::size_t>(i_star)] = 1;
  } else {
    out.trace.took_if_branch = false;
    detail::reject_tail(in, entries, g, cfg.alpha, out.x, out.trace);
  }
  return out;
}

inline SortRejectResult greedy_best_in(const KLevelInstance& in) {
  return greedy_best_in(in, BestInConfig::make(in.k));
}

// Market largeness: the largest single first level relative to the integral
// optimum. Supply opt_i when the enumeration benchmark is out of reach.
inline Rat largeness(const KLevelInstance& in, std::optional<Rat> opt_i = std::nullopt,
                     long cap = kDefaultEnumCap) {
  validate_klevel(in);
  Rat opt = opt_i ? *opt_i : brute_opt_integral(in, cap).value;
  Rat top(0);
  for (const KLevelAgent& a : in.agents) top = max(top, a.marginals[0]);
  if (!opt.is_positive() || !top.is_positive())
    throw BadTheta("largeness: undefined for zero-value instances");
  return top / opt;
}

}  // namespace bfpd
