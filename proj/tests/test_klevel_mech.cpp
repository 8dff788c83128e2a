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

#include "bfpd/klevel_mech.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "bfpd/knapsack.hpp"
#include "test_support.hpp"

using namespace bfpd;
using test::random_klevel;
using test::symmetric_unit;
using test::two_agent_k2;

TEST_CASE("alpha certificates gate the config", "[klevel_mech]") {
  CHECK(SortRejectConfig().alpha == Rat(267949, 1000000));
  CHECK(SortRejectConfig().in_unrestricted_budget_regime());
  CHECK_NOTHROW(SortRejectConfig(Rat(38, 100)));
  CHECK_FALSE(SortRejectConfig(Rat(38, 100)).in_unrestricted_budget_regime());
  CHECK_THROWS_AS(SortRejectConfig(Rat(2, 5)), InvalidAlpha);
  CHECK_THROWS_AS(SortRejectConfig(Rat(0)), InvalidAlpha);
  CHECK_THROWS_AS(SortRejectConfig(Rat(-1, 10)), InvalidAlpha);
  CHECK_THROWS_AS(SortRejectConfig(Rat(1)), InvalidAlpha);
}

TEST_CASE("sort-and-reject takes the if-branch on a dominant bundle", "[klevel_mech]") {
  SortRejectResult r = sort_and_reject(two_agent_k2());
  CHECK(r.trace.took_if_branch);
  CHECK(r.trace.i_star == 0);
  CHECK(r.x == std::vector<long>{2, 0});
  CHECK(value_of_levels(two_agent_k2(), r.x) == Rat(6));
  CHECK(r.trace.opt_f == Rat(8));
  CHECK(r.trace.d_minus == std::vector<Rat>{Rat(4), Rat(6)});
  CHECK(r.trace.removals.empty());
  CHECK_FALSE(r.trace.final_ell.has_value());
}

TEST_CASE("sort-and-reject rejects the tail on a symmetric market", "[klevel_mech]") {
  SortRejectResult r = sort_and_reject(symmetric_unit(5, Rat(4)));
  CHECK_FALSE(r.trace.took_if_branch);
  CHECK(r.trace.i_star == 0);
  CHECK(r.x == std::vector<long>{1, 1, 0, 0, 0});
  CHECK(r.trace.initial_floor == std::vector<long>{1, 1, 1, 1, 0});
  REQUIRE(r.trace.removals.size() == 2);
  CHECK(r.trace.removals[0] == std::make_pair(3, 1));
  CHECK(r.trace.removals[1] == std::make_pair(2, 1));
  REQUIRE(r.trace.final_ell.has_value());
  CHECK(*r.trace.final_ell == 1);
  CHECK(r.trace.opt_f == Rat(4));
}

TEST_CASE("single-agent all-in instances always take the if-branch", "[klevel_mech]") {
  KLevelInstance in;
  in.budget = Rat(3);
  in.k = 3;
  in.regime = Regime::AllIn;
  in.agents = {{Rat(1), {Rat(1), Rat(1), Rat(1)}}};
  SortRejectResult r = sort_and_reject(in);
  CHECK(r.trace.took_if_branch);
  CHECK(r.x == std::vector<long>{3});
  CHECK(r.trace.d_minus == std::vector<Rat>{Rat(0)});
}

TEST_CASE("mechanisms reject instances from the wrong regime", "[klevel_mech]") {
  KLevelInstance in = two_agent_k2();
  in.regime = Regime::BestIn;
  in.agents[0].cost = Rat(9, 10);
  CHECK_THROWS_AS(sort_and_reject(in), RegimeMismatch);
  in.regime = Regime::AllIn;
  in.agents[0].cost = Rat(1);
  CHECK_THROWS_AS(greedy_best_in(in), RegimeMismatch);
}

TEST_CASE("best-in config pins beta to alpha and k", "[klevel_mech]") {
  BestInConfig c1 = BestInConfig::make(1);
  CHECK(std::abs(c1.alpha.to_double() - (2.0 - std::sqrt(3.0))) <= 1e-6);
  CHECK(std::abs(c1.beta.to_double() - (std::sqrt(3.0) - 1.0) / 2.0) <= 1e-6);
  // Exact certificate and exact budget identity, for any k.
  for (int k = 1; k <= 6; ++k) {
    BestInConfig c = BestInConfig::make(k);
    CHECK((c.alpha * c.alpha * Rat(k) - Rat(3 + k) * c.alpha + Rat(1)).sign() >= 0);
    Rat identity = (c.alpha * (Rat(1) + c.beta * Rat(k)) + c.beta) / (Rat(1) - c.alpha);
    CHECK(identity == Rat(1));
  }
  BestInConfig c4 = BestInConfig::make(4);
  CHECK(std::abs(c4.alpha.to_double() - (7.0 - std::sqrt(33.0)) / 8.0) <= 1e-6);

  BestInConfig custom = BestInConfig::with_alpha(1, Rat(1, 4));
  CHECK(custom.beta == Rat(2, 5));
  CHECK_THROWS_AS(BestInConfig::with_alpha(1, Rat(3, 10)), InvalidAlphaBeta);
  CHECK_THROWS_AS(BestInConfig::with_alpha(2, Rat(0)), InvalidAlphaBeta);
  CHECK_THROWS_AS(BestInConfig::make(0), InvalidAlphaBeta);
}

TEST_CASE("greedy-best-in hires one level of the ratio winner", "[klevel_mech]") {
  KLevelInstance in;
  in.budget = Rat(1);
  in.k = 2;
  in.regime = Regime::BestIn;
  in.agents = {{Rat(9, 10), {Rat(5), Rat(2)}}, {Rat(1, 10), {Rat(1), Rat(1)}}};
  SortRejectResult r = greedy_best_in(in);
  CHECK(r.trace.took_if_branch);
  CHECK(r.trace.i_star == 0);
  CHECK(r.x == std::vector<long>{1, 0});
  CHECK(value_of_levels(in, r.x) == Rat(5));
  CHECK(r.trace.d_minus[0] == Rat(2));
  CHECK(r.trace.d_minus[1] == Rat(47, 9));
  CHECK(brute_opt_integral(in).value == Rat(6));
}

TEST_CASE("greedy-best-in falls back to tail rejection", "[klevel_mech]") {
  SortRejectResult r = greedy_best_in(symmetric_unit(5, Rat(4), Regime::BestIn));
  CHECK_FALSE(r.trace.took_if_branch);
  CHECK(r.x == std::vector<long>{1, 1, 0, 0, 0});
  REQUIRE(r.trace.removals.size() == 2);
  CHECK(r.trace.removals[0] == std::make_pair(3, 1));
  CHECK(r.trace.removals[1] == std::make_pair(2, 1));
}

TEST_CASE("single affordable level forces the best-in if-branch", "[klevel_mech]") {
  KLevelInstance in;
  in.budget = Rat(1);
  in.k = 2;
  in.regime = Regime::BestIn;
  in.agents = {{Rat(1), {Rat(1), Rat(0)}}};
  SortRejectResult r = greedy_best_in(in);
  CHECK(r.trace.took_if_branch);
  CHECK(r.x == std::vector<long>{1});
}

TEST_CASE("largeness measures the top first level against OPT_I", "[klevel_mech]") {
  CHECK(largeness(two_agent_k2()) == Rat(4, 7));
  CHECK(largeness(two_agent_k2(), Rat(7)) == Rat(4, 7));
  CHECK(largeness(symmetric_unit(5, Rat(4))) == Rat(1, 4));

  KLevelInstance solo;
  solo.budget = Rat(2);
  solo.k = 2;
  solo.regime = Regime::AllIn;
  solo.agents = {{Rat(1), {Rat(2), Rat(1)}}};
  CHECK(largeness(solo) == Rat(2, 3));

  KLevelInstance zero = symmetric_unit(2, Rat(1));
  zero.agents[0].marginals = {Rat(0)};
  zero.agents[1].marginals = {Rat(0)};
  CHECK_THROWS_AS(largeness(zero), BadTheta);
}

TEST_CASE("large-market alpha is certified and tight", "[klevel_mech]") {
  CHECK_THROWS_AS(large_market_alpha(Rat(0)), BadTheta);
  CHECK_THROWS_AS(large_market_alpha(Rat(-1, 2)), BadTheta);
  CHECK_THROWS_AS(large_market_alpha(Rat(1)), BadTheta);
  CHECK_THROWS_AS(large_market_alpha(Rat(11, 10)), BadTheta);

  for (const Rat& theta : {Rat(1, 4), Rat(1, 25), Rat(1, 10), Rat(1, 5), Rat(1, 1000000000)}) {
    Rat a = large_market_alpha(theta);
    REQUIRE(a.is_positive());
    // Exact certificate theta + a <= (1 - a)^2.
    CHECK(theta + a <= (Rat(1) - a) * (Rat(1) - a));
    // Within 1e-6 below the irrational root (3 - sqrt(5 + 4 theta)) / 2.
    double root = (3.0 - std::sqrt(5.0 + 4.0 * theta.to_double())) / 2.0;
    CHECK(a.to_double() <= root + 1e-12);
    CHECK(root - a.to_double() <= 1e-6);
    // Also satisfies the Sort-&-Reject construction bound.
    CHECK_NOTHROW(SortRejectConfig(a));
  }
  CHECK(std::abs(large_market_alpha(Rat(1, 4)).to_double() - 0.2752551286) <= 1e-6);
  double tiny = large_market_alpha(Rat(1, 1000000000)).to_double();
  CHECK(tiny > 0.381965);
  CHECK(tiny < 0.381967);
  // Rational root: theta = 5/16 makes the optimum exactly 1/4.
  CHECK(large_market_alpha(Rat(5, 16)) == Rat(1, 4));
}

TEST_CASE("allocation monotonicity: lowering a cost never lowers the level", "[klevel_mech][prop]") {
  std::mt19937_64 rng(424242);
  int else_runs = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    bool best_in = (trial % 2) == 1;
    KLevelInstance in = random_klevel(rng, 5, 3, best_in ? Regime::BestIn : Regime::AllIn);
    BestInConfig bcfg = BestInConfig::make(in.k);
    SortRejectResult base = best_in ? greedy_best_in(in, bcfg) : sort_and_reject(in);
    if (!base.trace.took_if_branch) ++else_runs;

    int who = static_cast<int>(rng() % static_cast<unsigned>(in.n()));
    KLevelInstance lowered = in;
    long den = 2 + static_cast<long>(rng() % 7);
    lowered.agents[who].cost = in.agents[who].cost * Rat(den - 1, den);
    SortRejectResult after = best_in ? greedy_best_in(lowered, bcfg) : sort_and_reject(lowered);
    CHECK(after.x[who] >= base.x[who]);
  }
  CHECK(else_runs > 100);  // both branches must actually be exercised
}

TEST_CASE("mechanism outputs respect the structural invariants", "[klevel_mech][prop]") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 400; ++trial) {
    bool best_in = (trial % 2) == 1;
    KLevelInstance in = random_klevel(rng, 5, 4, best_in ? Regime::BestIn : Regime::AllIn);
    SortRejectResult r = best_in ? greedy_best_in(in) : sort_and_reject(in);

    Rat spent = cost_of_levels(in, r.x);
    CHECK(spent <= in.budget);
    if (r.trace.took_if_branch) {
      for (int i = 0; i < in.n(); ++i) {
        if (i == r.trace.i_star)
          CHECK(r.x[i] == (best_in ? 1 : in.k));
        else
          CHECK(r.x[i] == 0);
      }
    } else {
      // The else-branch stays under the floor of the greedy relaxation and
      // keeps at least alpha * OPT_F^k of value.
      GreedySolution g = greedy_fractional(in);
      for (int i = 0; i < in.n(); ++i) {
        CHECK(r.x[i] <= g.floor_level(i));
        CHECK(r.x[i] >= 0);
      }
      CHECK(value_of_levels(in, r.x) >= r.trace.alpha * g.value);
      // Replaying the removals from the floor reproduces x.
      std::vector<long> replay = r.trace.initial_floor;
      for (auto [agent, level] : r.trace.removals) {
        CHECK(replay[agent] == level);
        --replay[agent];
      }
      CHECK(replay == r.x);
    }
    // The if-branch guarantee transfers to the full benchmark too.
    CHECK(value_of_levels(in, r.x) >= r.trace.alpha * r.trace.opt_f);
  }
}
