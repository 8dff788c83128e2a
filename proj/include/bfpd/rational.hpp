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

#include <gmpxx.h>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace bfpd {

class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

// Exact rational scalar backed by GMP. Always kept in canonical form:
// gcd(numerator, denominator) == 1 and denominator > 0. All arithmetic and
// comparisons are exact; doubles appear only in lossy display helpers.
class Rat {
 public:
  Rat() : q_(0) {}
  Rat(long n) : q_(static_cast<signed long>(n)) {}  // NOLINT: implicit by design
  Rat(long n, long d) {
    if (d == 0) throw std::domain_error("Rat: zero denominator");
    q_ = mpq_class(n, d);
    q_.canonicalize();
  }
  explicit Rat(mpq_class v) : q_(std::move(v)) { q_.canonicalize(); }

  // Accepts "p", "p/q" (q > 0) and decimal strings like "1.25" or "-0.5",
  // with optional surrounding ASCII whitespace. Everything else throws
  // ParseError; in particular exponents and negative denominators are
  // rejected so that parse(str()) round-trips through a single format.
  static Rat parse(std::string_view s);
  static std::optional<Rat> try_parse(std::string_view s) noexcept;

  // Canonical serialization: "p" when the denominator is 1, else "p/q".
  std::string str() const;
  // Decimal rendering with the given number of significant digits. Lossy;
  // used only for human-facing columns, never parsed back.
  std::string decimal(int sig_digits = 12) const;
  double to_double() const { return q_.get_d(); }

  bool is_zero() const { return mpq_sgn(q_.get_mpq_t()) == 0; }
  bool is_positive() const { return mpq_sgn(q_.get_mpq_t()) > 0; }
  bool is_negative() const { return mpq_sgn(q_.get_mpq_t()) < 0; }
  int sign() const { return mpq_sgn(q_.get_mpq_t()); }
  bool is_integer() const { return q_.get_den() == 1; }

  Rat abs() const {
    Rat r;
    mpq_abs(r.q_.get_mpq_t(), q_.get_mpq_t());
    return r;
  }
  // Largest integer <= value, as a Rat.
  Rat floor() const {
    mpz_class f;
    mpz_fdiv_q(f.get_mpz_t(), q_.get_num_mpz_t(), q_.get_den_mpz_t());
    return Rat(mpq_class(f));
  }
  Rat ceil() const {
    mpz_class c;
    mpz_cdiv_q(c.get_mpz_t(), q_.get_num_mpz_t(), q_.get_den_mpz_t());
    return Rat(mpq_class(c));
  }
  // floor() as a machine integer; throws std::overflow_error if it does not fit.
  long floor_long() const {
    mpz_class f;
    mpz_fdiv_q(f.get_mpz_t(), q_.get_num_mpz_t(), q_.get_den_mpz_t());
    if (!f.fits_slong_p()) throw std::overflow_error("Rat::floor_long: out of range");
    return f.get_si();
  }

  std::string num_str() const { return q_.get_num().get_str(); }
  std::string den_str() const { return q_.get_den().get_str(); }

  friend Rat operator+(const Rat& a, const Rat& b) { return Rat(mpq_class(a.q_ + b.q_)); }
  friend Rat operator-(const Rat& a, const Rat& b) { return Rat(mpq_class(a.q_ - b.q_)); }
  friend Rat operator*(const Rat& a, const Rat& b) { return Rat(mpq_class(a.q_ * b.q_)); }
  friend Rat operator/(const Rat& a, const Rat& b) {
    if (b.is_zero()) throw std::domain_error("Rat: division by zero");
    return Rat(mpq_class(a.q_ / b.q_));
  }
  Rat operator-() const { return Rat(mpq_class(-q_)); }
  Rat& operator+=(const Rat& o) { q_ += o.q_; return *this; }
  Rat& operator-=(const Rat& o) { q_ -= o.q_; return *this; }
  Rat& operator*=(const Rat& o) { q_ *= o.q_; return *this; }
  Rat& operator/=(const Rat& o) {
    if (o.is_zero()) throw std::domain_error("Rat: division by zero");
    q_ /= o.q_;
    return *this;
  }

  friend bool operator==(const Rat& a, const Rat& b) { return mpq_equal(a.q_.get_mpq_t(), b.q_.get_mpq_t()) != 0; }
  friend bool operator!=(const Rat& a, const Rat& b) { return !(a == b); }
  friend bool operator<(const Rat& a, const Rat& b) { return cmp(a.q_, b.q_) < 0; }
  friend bool operator<=(const Rat& a, const Rat& b) { return cmp(a.q_, b.q_) <= 0; }
  friend bool operator>(const Rat& a, const Rat& b) { return cmp(a.q_, b.q_) > 0; }
  friend bool operator>=(const Rat& a, const Rat& b) { return cmp(a.q_, b.q_) >= 0; }

  const mpq_class& raw() const { return q_; }

 private:
  mpq_class q_;
};

inline const Rat& min(const Rat& a, const Rat& b) { return b < a ? b : a; }
inline const Rat& max(const Rat& a, const Rat& b) { return a < b ? b : a; }

namespace detail {

inline bool all_digits(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return true;
}

}  // namespace detail

inline Rat Rat::parse(std::string_view s) {
  auto fail = [&] { throw ParseError("Rat::parse: bad rational literal '" + std::string(s) + "'"); };

  std::string_view t = s;
  while (!t.empty() && (t.front() == ' ' || t.front() == '\t' || t.front() == '\n' || t.front() == '\r')) t.remove_prefix(1);
  while (!t.empty() && (t.back() == ' ' || t.back() == '\t' || t.back() == '\n' || t.back() == '\r')) t.remove_suffix(1);
  if (t.empty()) fail();

  bool neg = false;
  if (t.front() == '+' || t.front() == '-') {
    neg = t.front() == '-';
    t.remove_prefix(1);
    if (t.empty()) fail();
  }

  auto slash = t.find('/');
  auto dot = t.find('.');
  mpq_class out;
  if (slash != std::string_view::npos) {
    if (dot != std::string_view::npos) fail();
    std::string_view num = t.substr(0, slash), den = t.substr(slash + 1);
    if (!detail::all_digits(num) || !detail::all_digits(den)) fail();
    mpz_class n(std::string(num), 10), d(std::string(den), 10);
    if (d == 0) fail();
    out = mpq_class(n) / mpq_class(d);
  } else if (dot != std::string_view::npos) {
    std::string_view ip = t.substr(0, dot), fp = t.substr(dot + 1);
    if (ip.empty() && fp.empty()) fail();
    if (!ip.empty() && !detail::all_digits(ip)) fail();
    if (!fp.empty() && !detail::all_digits(fp)) fail();
    mpz_class n = ip.empty() ? mpz_class(0) : mpz_class(std::string(ip), 10);
    mpz_class scale = 1;
    for (std::size_t i = 0; i < fp.size(); ++i) scale *= 10;
    mpz_class frac = fp.empty() ? mpz_class(0) : mpz_class(std::string(fp), 10);
    out = mpq_class(n * scale + frac) / mpq_class(scale);
  } else {
    if (!detail::all_digits(t)) fail();
    out = mpq_class(mpz_class(std::string(t), 10));
  }
  if (neg) out = -out;
  out.canonicalize();
  return Rat(std::move(out));
}

inline std::optional<Rat> Rat::try_parse(std::string_view s) noexcept {
  try {
    return parse(s);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline std::string Rat::str() const {
  if (q_.get_den() == 1) return q_.get_num().get_str();
  return q_.get_num().get_str() + "/" + q_.get_den().get_str();
}

inline std::string Rat::decimal(int sig_digits) const {
  if (sig_digits < 1) sig_digits = 1;
  if (is_zero()) return "0";
  mpz_class n = ::abs(q_.get_num());
  const mpz_class& d = q_.get_den();

  // Decimal exponent e with 10^e <= |value| < 10^(e+1).
  long e = static_cast<long>(mpz_sizeinbase(n.get_mpz_t(), 10)) -
           static_cast<long>(mpz_sizeinbase(d.get_mpz_t(), 10)) + 1;
  auto pow10 = [](long p) {
    mpz_class r;
    mpz_ui_pow_ui(r.get_mpz_t(), 10, static_cast<unsigned long>(p));
    return r;
  };
  auto less_than_pow10 = [&](long p) {
    // |value| < 10^p ?
    return p >= 0 ? n < d * pow10(p) : n * pow10(-p) < d;
  };
  while (!less_than_pow10(e + 1)) ++e;
  while (less_than_pow10(e)) --e;

  // Round to sig_digits digits: m = round(|value| * 10^(sig_digits-1-e)).
  long shift = sig_digits - 1 - e;
  mpz_class num = n, den = d;
  if (shift >= 0)
    num *= pow10(shift);
  else
    den *= pow10(-shift);
  mpz_class m, r;
  mpz_fdiv_qr(m.get_mpz_t(), r.get_mpz_t(), num.get_mpz_t(), den.get_mpz_t());
  if (2 * r >= den) ++m;
  std::string digits = m.get_str();
  if (static_cast<int>(digits.size()) > sig_digits) {
    // Rounding carried into an extra digit (e.g. 9.99 -> 10.0).
    ++e;
    digits.pop_back();
  }
  while (digits.size() > 1 && digits.back() == '0') digits.pop_back();

  std::string out = is_negative() ? "-" : "";
  if (e >= 0 && e <= 15) {
    if (static_cast<long>(digits.size()) <= e) {
      out += digits;
      out.append(static_cast<std::size_t>(e + 1 - static_cast<long>(digits.size())), '0');
    } else {
      out += digits.substr(0, static_cast<std::size_t>(e + 1));
      std::string rest = digits.substr(static_cast<std::size_t>(e + 1));
      if (!rest.empty()) {
        out += ".";
        out += rest;
      }
    }
  } else if (e < 0 && e >= -4) {
    out += "0.";
    out.append(static_cast<std::size_t>(-e - 1), '0');
    out += digits;
  } else {
    out += digits.substr(0, 1);
    if (digits.size() > 1) {
      out += ".";
      out += digits.substr(1);
    }
    out += "e";
    out += std::to_string(e);
  }
  return out;
}

}  // namespace bfpd
