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
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bfpd/rational.hpp"

namespace bfpd {

// ---------------------------------------------------------------------------
// k-level procurement instances
// ---------------------------------------------------------------------------

// Cost regime an instance promises to satisfy. AllIn bounds every agent's
// full bundle (k * cost <= budget); BestIn only bounds a single level
// (cost <= budget).
enum class Regime { AllIn, BestIn };

inline const char* regime_name(Regime r) { return r == Regime::AllIn ? "all-in" : "best-in"; }

// An agent offering up to k levels of service at a per-level cost. marginals[j]
// is the value added by level j+1; the sequence must be non-negative and
// non-increasing (concave cumulative value). An agent that can serve fewer
// than k useful levels carries trailing zero marginals.
struct KLevelAgent {
  Rat cost;
  std::vector<Rat> marginals;

  // Cumulative value of the first j levels.
  Rat value(long j) const {
    Rat v(0);
    for (long t = 0; t < j && t < static_cast<long>(marginals.size()); ++t) v += marginals[t];
    return v;
  }
  Rat full_value() const { return value(static_cast<long>(marginals.size())); }
};

struct KLevelInstance {
  Rat budget;
  int k = 1;
  Regime regime = Regime::AllIn;
  std::vector<KLevelAgent> agents;

  int n() const { return static_cast<int>(agents.size()); }
};

// ---------------------------------------------------------------------------
// Divisible procurement instances
// ---------------------------------------------------------------------------

class OutOfDomain : public std::runtime_error {
 public:
  explicit OutOfDomain(const std::string& what) : std::runtime_error(what) {}
};

// Piecewise-linear concave valuation on [0, 1] with v(0) = 0, stored as
// breakpoints (x, v(x)). Segment slopes are non-negative and non-increasing.
struct PiecewiseValuation {
  std::vector<std::pair<Rat, Rat>> points;

  static PiecewiseValuation linear(const Rat& slope) {
    return PiecewiseValuation{{{Rat(0), Rat(0)}, {Rat(1), slope}}};
  }

  struct Segment {
    Rat x0, x1, slope;
  };
  std::vector<Segment> segments() const {
    std::vector<Segment> out;
    for (std::size_t t = 0; t + 1 < points.size(); ++t) {
      const Rat dx = points[t + 1].first - points[t].first;
      out.push_back({points[t].first, points[t + 1].first,
                     (points[t + 1].second - points[t].second) / dx});
    }
    return out;
  }

  bool is_linear() const {
    auto segs = segments();
    for (std::size_t t = 1; t < segs.size(); ++t)
      if (segs[t].slope != segs[0].slope) return false;
    return true;
  }
};

struct DivisibleAgent {
  Rat cost;  // cost of the full unit; a fraction x costs cost * x
  PiecewiseValuation valuation;
};

struct DivisibleInstance {
  Rat budget;
  std::vector<DivisibleAgent> agents;

  int n() const { return static_cast<int>(agents.size()); }
};

// Exact value of a piecewise-linear valuation at x in [0, 1].
inline Rat eval_valuation(const PiecewiseValuation& val, const Rat& x) {
  if (val.points.size() < 2) throw OutOfDomain("eval_valuation: valuation has no segments");
  if (x < val.points.front().first || x > val.points.back().first)
    throw OutOfDomain("eval_valuation: x outside [0, 1]");
  std::size_t lo = 0, hi = val.points.size() - 1;
  while (hi - lo > 1) {
    std::size_t mid = (lo + hi) / 2;
    if (val.points[mid].first <= x)
      lo = mid;
    else
      hi = mid;
  }
  const auto& [x0, v0] = val.points[lo];
  const auto& [x1, v1] = val.points[hi];
  if (x == x0) return v0;
  return v0 + (v1 - v0) * (x - x0) / (x1 - x0);
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

// One violated invariant. agent is -1 for instance-level rules.
struct Violation {
  int agent;
  std::string rule;
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<Violation> violations)
      : std::runtime_error(describe(violations)), violations_(std::move(violations)) {}
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  static std::string describe(const std::vector<Violation>& vs) {
    std::string out = "invalid instance:";
    for (const auto& v : vs) {
      out += "\n  ";
      if (v.agent >= 0) out += "agent " + std::to_string(v.agent) + ": ";
      out += v.rule;
    }
    return out;
  }
  std::vector<Violation> violations_;
};

inline std::vector<Violation> check_klevel(const KLevelInstance& in) {
  std::vector<Violation> out;
  if (in.agents.empty()) out.push_back({-1, "EmptyInstance: no agents"});
  if (in.k < 1) out.push_back({-1, "NonPositive: k < 1"});
  if (!in.budget.is_positive()) out.push_back({-1, "NonPositive: budget <= 0"});
  for (int i = 0; i < in.n(); ++i) {
    const KLevelAgent& a = in.agents[i];
    if (!a.cost.is_positive()) out.push_back({i, "NonPositive: cost <= 0"});
    if (static_cast<int>(a.marginals.size()) != in.k)
      out.push_back({i, "NonConcave: expected exactly k marginal values"});
    for (std::size_t j = 0; j < a.marginals.size(); ++j) {
      if (a.marginals[j].is_negative())
        out.push_back({i, "NonPositive: marginal " + std::to_string(j + 1) + " < 0"});
      if (j > 0 && a.marginals[j] > a.marginals[j - 1])
        out.push_back({i, "NonConcave: marginal " + std::to_string(j + 1) +
                              " exceeds marginal " + std::to_string(j)});
    }
    if (a.cost.is_positive() && in.budget.is_positive()) {
      if (in.regime == Regime::AllIn) {
        if (Rat(in.k) * a.cost > in.budget)
          out.push_back({i, "CostTooHigh: k * cost exceeds budget (all-in regime)"});
      } else if (a.cost > in.budget) {
        out.push_back({i, "CostTooHigh: cost exceeds budget (best-in regime)"});
      }
    }
  }
  return out;
}

// Returns the instance unchanged when every type invariant holds; otherwise
// throws a ValidationError listing all violations.
inline const KLevelInstance& validate_klevel(const KLevelInstance& in) {
  auto v = check_klevel(in);
  if (!v.empty()) throw ValidationError(std::move(v));
  return in;
}

inline std::vector<Violation> check_divisible(const DivisibleInstance& in) {
  std::vector<Violation> out;
  if (in.agents.empty()) out.push_back({-1, "EmptyInstance: no agents"});
  if (!in.budget.is_positive()) out.push_back({-1, "NonPositive: budget <= 0"});
  for (int i = 0; i < in.n(); ++i) {
    const DivisibleAgent& a = in.agents[i];
    if (!a.cost.is_positive()) out.push_back({i, "NonPositive: cost <= 0"});
    if (a.cost.is_positive() && in.budget.is_positive() && a.cost > in.budget)
      out.push_back({i, "CostTooHigh: cost exceeds budget"});
    const auto& pts = a.valuation.points;
    if (pts.size() < 2) {
      out.push_back({i, "BadBreakpoints: fewer than two breakpoints"});
      continue;
    }
    if (!(pts.front().first.is_zero() && pts.front().second.is_zero()))
      out.push_back({i, "BadBreakpoints: first breakpoint must be (0, 0)"});
    if (pts.back().first != Rat(1))
      out.push_back({i, "BadBreakpoints: last breakpoint must be at x = 1"});
    bool xs_ok = true;
    for (std::size_t t = 1; t < pts.size(); ++t)
      if (pts[t].first <= pts[t - 1].first) xs_ok = false;
    if (!xs_ok) {
      out.push_back({i, "BadBreakpoints: x coordinates must be strictly increasing"});
      continue;
    }
    auto segs = a.valuation.segments();
    for (std::size_t t = 0; t < segs.size(); ++t) {
      if (segs[t].slope.is_negative())
        out.push_back({i, "NonPositive: segment " + std::to_string(t + 1) + " has negative slope"});
      if (t > 0 && segs[t].slope > segs[t - 1].slope)
        out.push_back({i, "NonConcave: segment " + std::to_string(t + 1) + " steeper than segment " +
                              std::to_string(t)});
    }
  }
  return out;
}

inline const DivisibleInstance& validate_divisible(const DivisibleInstance& in) {
  auto v = check_divisible(in);
  if (!v.empty()) throw ValidationError(std::move(v));
  return in;
}

// ---------------------------------------------------------------------------
// Allocations and outcomes
// ---------------------------------------------------------------------------

enum class AllocMode { Levels, Fraction };

struct Allocation {
  AllocMode mode = AllocMode::Levels;
  std::vector<Rat> x;

  static Allocation from_levels(const std::vector<long>& levels) {
    Allocation a;
    a.mode = AllocMode::Levels;
    a.x.reserve(levels.size());
    for (long v : levels) a.x.emplace_back(v);
    return a;
  }
  std::vector<long> levels() const {
    std::vector<long> out;
    out.reserve(x.size());
    for (const Rat& v : x) out.push_back(v.floor_long());
    return out;
  }
};

inline Rat value_of_levels(const KLevelInstance& in, const std::vector<long>& levels) {
  Rat v(0);
  for (int i = 0; i < in.n(); ++i) v += in.agents[i].value(levels[i]);
  return v;
}

inline Rat cost_of_levels(const KLevelInstance& in, const std::vector<long>& levels) {
  Rat c(0);
  for (int i = 0; i < in.n(); ++i) c += in.agents[i].cost * Rat(levels[i]);
  return c;
}

// Mechanism-specific run details, kept flat so every mechanism can fill the
// fields it has. Serialized verbatim into outcome reports.
struct Diagnostics {
  std::optional<bool> if_branch;
  std::optional<int> i_star;
  std::optional<Rat> alpha, beta, r, q, q_star, q_tail;
  std::vector<std::pair<int, int>> removals;  // (agent, level) in removal order
  std::optional<int> final_ell;
  std::vector<int> winners_s, tail_t;  // divisible mechanisms: S and T = S \ {i*}
};

struct Outcome {
  std::string mechanism;
  Allocation allocation;
  std::vector<Rat> payments;
  Rat value;
  Diagnostics diagnostics;

  Rat total_payment() const {
    Rat t(0);
    for (const Rat& p : payments) t += p;
    return t;
  }
};

}  // namespace bfpd
