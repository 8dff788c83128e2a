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
#include <vector>

#include "bfpd/model.hpp"
#include "bfpd/rational.hpp"

namespace bfpd {

class TooLarge : public std::runtime_error {
 public:
  explicit TooLarge(const std::string& what) : std::runtime_error(what) {}
};

class BadIndex : public std::out_of_range {
 public:
  explicit BadIndex(const std::string& what) : std::out_of_range(what) {}
};

inline constexpr long kDefaultEnumCap = 10'000'000;

// One service level in the global value-per-cost order. level is 1-based.
struct LevelEntry {
  int agent;
  int level;
  Rat marginal;
  Rat ratio;  // marginal / cost, precomputed so comparisons never divide
};

// Greedy solution of the fractional relaxation. allocation is Fraction-mode
// with x_i in [0, k]; at most one coordinate is non-integral.
struct GreedySolution {
  Allocation allocation;
  Rat value;
  Rat spent;
  std::vector<LevelEntry> sorted_list;
  std::optional<int> fractional_agent;

  long floor_level(int i) const { return allocation.x[i].floor_long(); }
};

namespace detail {

inline bool entry_before(const LevelEntry& a, const LevelEntry& b) {
  int c = a.ratio < b.ratio ? -1 : (a.ratio == b.ratio ? 0 : 1);
  if (c != 0) return c > 0;
  if (a.agent != b.agent) return a.agent < b.agent;
  return a.level < b.level;
}

inline std::vector<LevelEntry> sorted_entries(const KLevelInstance& in) {
  std::vector<LevelEntry> entries;
  entries.reserve(static_cast<std::size_t>(in.n()) * static_cast<std::size_t>(in.k));
  for (int i = 0; i < in.n(); ++i) {
    const KLevelAgent& a = in.agents[i];
    for (int j = 0; j < in.k; ++j)
      entries.push_back({i, j + 1, a.marginals[j], a.marginals[j] / a.cost});
  }
  std::sort(entries.begin(), entries.end(), entry_before);
  return entries;
}

// Walks a value-per-cost ordered list, buying levels until the budget runs
// out. excluded == -1 keeps every agent.
inline GreedySolution greedy_walk(const KLevelInstance& in, std::vector<LevelEntry> entries,
                                  int excluded) {
  GreedySolution sol;
  sol.allocation.mode = AllocMode::Fraction;
  sol.allocation.x.assign(in.agents.size(), Rat(0));
  sol.value = Rat(0);
  sol.spent = Rat(0);
  Rat remaining = in.budget;
  for (const LevelEntry& e : entries) {
    if (e.agent == excluded) continue;
    if (remaining.is_zero()) break;
    const Rat& c = in.agents[e.agent].cost;
    if (c <= remaining) {
      sol.allocation.x[e.agent] += Rat(1);
      sol.value += e.marginal;
      sol.spent += c;
      remaining -= c;
    } else {
      Rat frac = remaining / c;
      sol.allocation.x[e.agent] += frac;
      sol.value += e.marginal * frac;
      sol.spent += remaining;
      remaining = Rat(0);
      sol.fractional_agent = e.agent;
      break;
    }
  }
  sol.sorted_list = std::move(entries);
  return sol;
}

}  // namespace detail

// Fractional-relaxation optimum OPT_F^k: sort all n*k marginals by value per
// cost (ties broken by agent id, then level) and buy greedily until the
// budget is exhausted.
inline GreedySolution greedy_fractional(const KLevelInstance& in) {
  return detail::greedy_walk(in, detail::sorted_entries(in), -1);
}

// OPT_F^k with one agent removed. The removed agent's entries are skipped but
// the instance (and budget) is otherwise unchanged.
inline Rat opt_f_minus(const KLevelInstance& in, int excluded) {
  if (excluded < 0 || excluded >= in.n()) throw BadIndex("opt_f_minus: agent index out of range");
  if (in.n() == 1) return Rat(0);
  return detail::greedy_walk(in, detail::sorted_entries(in), excluded).value;
}

struct BruteForceResult {
  Rat value;
  std::vector<long> x;
};

namespace detail {

inline void brute_rec(const KLevelInstance& in, int i, Rat cost, Rat value, std::vector<long>& x,
                      BruteForceResult& best) {
  if (i == in.n()) {
    if (value > best.value) best = {value, x};
    return;
  }
  const KLevelAgent& a = in.agents[i];
  Rat v_add(0);
  for (long j = 0; j <= in.k; ++j) {
    if (j > 0) {
      cost += a.cost;
      if (cost > in.budget) break;
      v_add += a.marginals[j - 1];
    }
    x[i] = j;
    brute_rec(in, i + 1, cost, value + v_add, x, best);
  }
  x[i] = 0;
}

}  // namespace detail

// Exact integral optimum OPT_I^k by bounded enumeration of level profiles.
// Throws TooLarge when (k+1)^n exceeds the cap.
inline BruteForceResult brute_opt_integral(const KLevelInstance& in, long cap = kDefaultEnumCap) {
  unsigned long long profiles = 1;
  for (int i = 0; i < in.n(); ++i) {
    profiles *= static_cast<unsigned long long>(in.k) + 1;
    if (profiles > static_cast<unsigned long long>(cap))
      throw TooLarge("brute_opt_integral: profile space exceeds enumeration cap");
  }
  BruteForceResult best{Rat(0), std::vector<long>(in.agents.size(), 0)};
  std::vector<long> x(in.agents.size(), 0);
  detail::brute_rec(in, 0, Rat(0), Rat(0), x, best);
  return best;
}

struct GridOptResult {
  Rat value;
  std::vector<Rat> x;
};

namespace detail {

inline void grid_rec(const DivisibleInstance& in, const std::vector<std::vector<Rat>>& vals,
                     long grid, int i, const Rat& cost, const Rat& value, std::vector<long>& t,
                     GridOptResult& best) {
  if (i == in.n()) {
    if (value > best.value) {
      best.value = value;
      for (int a = 0; a < in.n(); ++a) best.x[a] = Rat(t[a], grid);
    }
    return;
  }
  const Rat unit = in.agents[i].cost / Rat(grid);
  Rat c = cost;
  for (long j = 0; j <= grid; ++j) {
    if (j > 0) {
      c += unit;
      if (c > in.budget) break;
    }
    t[i] = j;
    grid_rec(in, vals, grid, i + 1, c, value + vals[i][j], t, best);
  }
  t[i] = 0;
}

}  // namespace detail

// Brute-force benchmark for divisible instances on the uniform grid
// {0, 1/grid, ..., 1}. Exact over the grid; equals OPT_F when the optimum
// happens to lie on the grid. Throws TooLarge when (grid+1)^n exceeds cap.
inline GridOptResult grid_opt_fractional_divisible(const DivisibleInstance& in, long grid,
                                                   long cap = kDefaultEnumCap) {
  if (grid < 1) throw std::invalid_argument("grid_opt_fractional_divisible: grid must be >= 1");
  unsigned long long profiles = 1;
  for (int i = 0; i < in.n(); ++i) {
    profiles *= static_cast<unsigned long long>(grid) + 1;
    if (profiles > static_cast<unsigned long long>(cap))
      throw TooLarge("grid_opt_fractional_divisible: grid space exceeds enumeration cap");
  }
  std::vector<std::vector<Rat>> vals(static_cast<std::size_t>(in.n()));
  for (int i = 0; i < in.n(); ++i) {
    vals[i].reserve(static_cast<std::size_t>(grid) + 1);
    for (long j = 0; j <= grid; ++j) vals[i].push_back(eval_valuation(in.agents[i].valuation, Rat(j, grid)));
  }
  GridOptResult best{Rat(0), std::vector<Rat>(in.agents.size(), Rat(0))};
  std::vector<long> t(in.agents.size(), 0);
  detail::grid_rec(in, vals, grid, 0, Rat(0), Rat(0), t, best);
  return best;
}

// Exact fractional optimum OPT_F for divisible instances: greedily buy
// valuation segments in value-per-cost order. Exact for piecewise-linear
// concave valuations; the reference the grid benchmark is checked against.
inline GridOptResult divisible_opt_f_exact(const DivisibleInstance& in, int excluded = -1) {
  struct Seg {
    int agent;
    int index;
    Rat width, slope, ratio;
  };
  std::vector<Seg> segs;
  for (int i = 0; i < in.n(); ++i) {
    if (i == excluded) continue;
    auto ss = in.agents[i].valuation.segments();
    for (std::size_t t = 0; t < ss.size(); ++t)
      segs.push_back({i, static_cast<int>(t), ss[t].x1 - ss[t].x0, ss[t].slope,
                      ss[t].slope / in.agents[i].cost});
  }
  std::sort(segs.begin(), segs.end(), [](const Seg& a, const Seg& b) {
    int c = a.ratio < b.ratio ? -1 : (a.ratio == b.ratio ? 0 : 1);
    if (c != 0) return c > 0;
    if (a.agent != b.agent) return a.agent < b.agent;
    return a.index < b.index;
  });
  GridOptResult out{Rat(0), std::vector<Rat>(in.agents.size(), Rat(0))};
  Rat remaining = in.budget;
  for (const Seg& s : segs) {
    if (remaining.is_zero()) break;
    Rat seg_cost = in.agents[s.agent].cost * s.width;
    if (seg_cost <= remaining) {
      out.x[s.agent] += s.width;
      out.value += s.slope * s.width;
      remaining -= seg_cost;
    } else {
      Rat dx = remaining / in.agents[s.agent].cost;
      out.x[s.agent] += dx;
      out.value += s.slope * dx;
      remaining = Rat(0);
      break;
    }
  }
  return out;
}

}  // namespace bfpd
