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

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "bfpd/model.hpp"

namespace bfpd {

// Insertion-ordered documents keep serialized output byte-stable.
using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Scalars
// ---------------------------------------------------------------------------

// Rationals travel as strings ("3", "5/4", and on input also "1.25"); JSON
// numbers are never used for exact quantities.
inline Json scalar_json(const Rat& v) { return Json(v.str()); }

inline Rat scalar_from_json(const Json& j, const std::string& where) {
  if (j.is_string()) return Rat::parse(j.get<std::string>());
  if (j.is_number_integer()) return Rat(j.get<long>());
  throw ParseError(where + ": expected a rational encoded as a string");
}

// ---------------------------------------------------------------------------
// Instances
// ---------------------------------------------------------------------------

inline Json to_json(const KLevelInstance& in) {
  Json agents = Json::array();
  for (const KLevelAgent& a : in.agents) {
    Json marginals = Json::array();
    for (const Rat& m : a.marginals) marginals.push_back(scalar_json(m));
    agents.push_back({{"cost", scalar_json(a.cost)}, {"marginals", std::move(marginals)}});
  }
  return Json{{"model", "k-level"},
              {"budget", scalar_json(in.budget)},
              {"k", in.k},
              {"regime", regime_name(in.regime)},
              {"agents", std::move(agents)}};
}

inline Json to_json(const DivisibleInstance& in) {
  Json agents = Json::array();
  for (const DivisibleAgent& a : in.agents) {
    Json val;
    if (a.valuation.is_linear()) {
      val = Json{{"type", "linear"}, {"slope", scalar_json(a.valuation.points.back().second)}};
    } else {
      Json pts = Json::array();
      for (const auto& [x, v] : a.valuation.points)
        pts.push_back(Json::array({scalar_json(x), scalar_json(v)}));
      val = Json{{"type", "piecewise"}, {"breakpoints", std::move(pts)}};
    }
    agents.push_back({{"cost", scalar_json(a.cost)}, {"valuation", std::move(val)}});
  }
  return Json{{"model", "divisible"}, {"budget", scalar_json(in.budget)}, {"agents", std::move(agents)}};
}

using ParsedInstance = std::variant<KLevelInstance, DivisibleInstance>;

namespace detail {

inline const Json& field(const Json& j, const char* name, const std::string& where) {
  auto it = j.find(name);
  if (it == j.end()) throw ParseError(where + ": missing field '" + name + "'");
  return *it;
}

inline KLevelInstance klevel_from_json(const Json& j) {
  KLevelInstance in;
  in.budget = scalar_from_json(field(j, "budget", "instance"), "budget");
  const Json& k = field(j, "k", "k-level instance");
  if (!k.is_number_integer()) throw ParseError("k: expected an integer");
  in.k = k.get<int>();
  std::string regime = field(j, "regime", "k-level instance").get<std::string>();
  if (regime == "all-in") {
    in.regime = Regime::AllIn;
  } else if (regime == "best-in") {
    in.regime = Regime::BestIn;
  } else {
    throw ParseError("regime: expected \"all-in\" or \"best-in\", got \"" + regime + "\"");
  }
  const Json& agents = field(j, "agents", "instance");
  if (!agents.is_array()) throw ParseError("agents: expected an array");
  for (const Json& a : agents) {
    KLevelAgent agent;
    agent.cost = scalar_from_json(field(a, "cost", "agent"), "agent cost");
    const Json& ms = field(a, "marginals", "k-level agent");
    if (!ms.is_array()) throw ParseError("marginals: expected an array");
    for (const Json& m : ms) agent.marginals.push_back(scalar_from_json(m, "marginal"));
    in.agents.push_back(std::move(agent));
  }
  return in;
}

inline DivisibleInstance divisible_from_json(const Json& j) {
  DivisibleInstance in;
  in.budget = scalar_from_json(field(j, "budget", "instance"), "budget");
  const Json& agents = field(j, "agents", "instance");
  if (!agents.is_array()) throw ParseError("agents: expected an array");
  for (const Json& a : agents) {
    DivisibleAgent agent;
    agent.cost = scalar_from_json(field(a, "cost", "agent"), "agent cost");
    const Json& val = field(a, "valuation", "divisible agent");
    std::string type = field(val, "type", "valuation").get<std::string>();
    if (type == "linear") {
      agent.valuation =
          PiecewiseValuation::linear(scalar_from_json(field(val, "slope", "valuation"), "slope"));
    } else if (type == "piecewise") {
      const Json& pts = field(val, "breakpoints", "valuation");
      if (!pts.is_array()) throw ParseError("breakpoints: expected an array");
      for (const Json& p : pts) {
        if (!p.is_array() || p.size() != 2)
          throw ParseError("breakpoints: expected [x, value] pairs");
        agent.valuation.points.emplace_back(scalar_from_json(p[0], "breakpoint x"),
                                            scalar_from_json(p[1], "breakpoint value"));
      }
    } else {
      throw ParseError("valuation type: expected \"linear\" or \"piecewise\", got \"" + type + "\"");
    }
    in.agents.push_back(std::move(agent));
  }
  return in;
}

}  // namespace detail

// Parses and validates an instance document. Malformed documents raise
// ParseError; well-formed documents with broken invariants raise
// ValidationError listing every violated rule.
inline ParsedInstance parse_instance(const Json& j) {
  if (!j.is_object()) throw ParseError("instance: expected a JSON object");
  std::string model = detail::field(j, "model", "instance").get<std::string>();
  if (model == "k-level") {
    KLevelInstance in = detail::klevel_from_json(j);
    validate_klevel(in);
    return in;
  }
  if (model == "divisible") {
    DivisibleInstance in = detail::divisible_from_json(j);
    validate_divisible(in);
    return in;
  }
  throw ParseError("model: expected \"k-level\" or \"divisible\", got \"" + model + "\"");
}

// ---------------------------------------------------------------------------
// Outcomes
// ---------------------------------------------------------------------------

inline Json to_json(const Outcome& out) {
  Json x = Json::array();
  for (const Rat& v : out.allocation.x) x.push_back(scalar_json(v));
  Json payments = Json::array();
  for (const Rat& p : out.payments) payments.push_back(scalar_json(p));

  Json diag = Json::object();
  const Diagnostics& d = out.diagnostics;
  if (d.if_branch) diag["if_branch"] = *d.if_branch;
  if (d.i_star) diag["i_star"] = *d.i_star;
  if (d.alpha) diag["alpha"] = scalar_json(*d.alpha);
  if (d.beta) diag["beta"] = scalar_json(*d.beta);
  if (d.r) diag["r"] = scalar_json(*d.r);
  if (d.q) diag["q"] = scalar_json(*d.q);
  if (d.q_star) diag["q_star"] = scalar_json(*d.q_star);
  if (d.q_tail) diag["q_tail"] = scalar_json(*d.q_tail);
  if (!d.removals.empty()) {
    Json removals = Json::array();
    for (const auto& [agent, level] : d.removals) removals.push_back(Json::array({agent, level}));
    diag["removals"] = std::move(removals);
  }
  if (d.final_ell) diag["final_ell"] = *d.final_ell;
  if (!d.winners_s.empty()) diag["winners_s"] = d.winners_s;
  if (!d.tail_t.empty()) diag["tail_t"] = d.tail_t;

  return Json{{"mechanism", out.mechanism},
              {"allocation",
               Json{{"mode", out.allocation.mode == AllocMode::Levels ? "levels" : "fraction"},
                    {"x", std::move(x)}}},
              {"payments", std::move(payments)},
              {"value", scalar_json(out.value)},
              {"total_payment", scalar_json(out.total_payment())},
              {"diagnostics", std::move(diag)}};
}

// ---------------------------------------------------------------------------
// Files and digests
// ---------------------------------------------------------------------------

inline Json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path);
  try {
    return Json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline void save_text(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw ParseError("cannot write " + path);
  f << content;
}

// Pretty serialization used for files; a trailing newline keeps diffs clean.
inline std::string dump_pretty(const Json& j) { return j.dump(2) + "\n"; }

// FNV-1a, fixed across platforms so digests are stable in golden files.
inline std::string digest64(const std::string& bytes) {
  unsigned long long h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex;
  for (int shift = 60; shift >= 0; shift -= 4) out << ((h >> shift) & 0xf);
  return out.str();
}

}  // namespace bfpd
