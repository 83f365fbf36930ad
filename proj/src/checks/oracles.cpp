// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

namespace qlab::oracle {
namespace {

mpq_class pow2(int e) {
  mpq_class r(1);
  if (e >= 0) {
    mpz_mul_2exp(r.get_num_mpz_t(), r.get_num_mpz_t(), static_cast<mp_bitcnt_t>(e));
  } else {
    mpz_mul_2exp(r.get_den_mpz_t(), r.get_den_mpz_t(), static_cast<mp_bitcnt_t>(-e));
  }
  r.canonicalize();
  return r;
}

// Field value of a format without the sign: (e == 0 ? m : 2^mbits + m) * 2^(...)
mpq_class field_value(std::uint32_t e, std::uint32_t m, int mbits, int bias) {
  if (e == 0) return mpq_class(m) * pow2(1 - bias - mbits);
  return mpq_class((1u << mbits) + m) * pow2(static_cast<int>(e) - bias - mbits);
}

const mpq_class& threshold() {
  static const mpq_class t = mpq_class(7) * pow2(-9);
  return t;
}

// Index of the nearest entry of an ascending table, ties to the even index.
// Entry i is the magnitude of code i, so index parity is code parity.
std::size_t nearest_index(const std::vector<mpq_class>& table, const mpq_class& mag) {
  auto it = std::lower_bound(table.begin(), table.end(), mag);
  if (it == table.end()) return table.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - table.begin());
  if (*it == mag || hi == 0) return hi;
  const std::size_t lo = hi - 1;
  const mpq_class dlo = mag - table[lo];
  const mpq_class dhi = table[hi] - mag;
  if (dlo < dhi) return lo;
  if (dhi < dlo) return hi;
  return (lo % 2 == 0) ? lo : hi;
}

struct IeeeTable {
  std::vector<mpq_class> magnitudes;  // codes 0 .. largest finite
};

const IeeeTable& ieee_table(int ebits, int mbits) {
  static std::map<std::pair<int, int>, IeeeTable> cache;
  auto [it, inserted] = cache.try_emplace({ebits, mbits});
  if (inserted) {
    const int bias = (1 << (ebits - 1)) - 1;
    const std::uint32_t exp_all = (1u << ebits) - 1u;
    for (std::uint32_t e = 0; e < exp_all; ++e) {
      for (std::uint32_t m = 0; m < (1u << mbits); ++m) {
        it->second.magnitudes.push_back(field_value(e, m, mbits, bias));
      }
    }
  }
  return it->second;
}

}  // namespace

mpq_class exact(double x) { return mpq_class(x); }

const std::vector<mpq_class>& e4m3_magnitudes() {
  static const std::vector<mpq_class> table = [] {
    std::vector<mpq_class> t;
    for (std::uint32_t code = 0; code < 0x7F; ++code) {
      t.push_back(field_value(code >> 3, code & 7u, 3, 7));
    }
    return t;
  }();
  return table;
}

double e4m3_value(std::uint8_t code) {
  if ((code & 0x7F) == 0x7F) return std::numeric_limits<double>::quiet_NaN();
  const double v = e4m3_magnitudes()[code & 0x7F].get_d();
  return (code & 0x80) ? -v : v;
}

std::uint8_t e4m3_nearest(const mpq_class& x, bool negative_zero) {
  const auto& table = e4m3_magnitudes();
  const mpq_class mag = abs(x);
  std::size_t best = 0;
  mpq_class best_d = mag - table[0];
  for (std::size_t i = 1; i < table.size(); ++i) {
    const mpq_class d = abs(mag - table[i]);
    if (d < best_d || (d == best_d && i % 2 == 0)) {
      best = i;
      best_d = d;
    }
  }
  if (mag > table.back()) best = table.size() - 1;
  const bool neg = sgn(x) < 0 || (sgn(x) == 0 && negative_zero);
  return static_cast<std::uint8_t>(best | (neg ? 0x80u : 0u));
}

std::uint8_t e4m3_toward_zero(const mpq_class& x) {
  const auto& table = e4m3_magnitudes();
  const mpq_class mag = abs(x);
  std::size_t best = 0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i] <= mag) best = i;
  }
  return static_cast<std::uint8_t>(best | (sgn(x) < 0 ? 0x80u : 0u));
}

std::uint32_t ieee_nearest(const mpq_class& x, int ebits, int mbits) {
  const auto& t = ieee_table(ebits, mbits).magnitudes;
  const auto idx = static_cast<std::uint32_t>(nearest_index(t, abs(x)));
  return idx | (sgn(x) < 0 ? (1u << (ebits + mbits)) : 0u);
}

double ieee_value(std::uint32_t code, int ebits, int mbits) {
  const std::uint32_t sign = 1u << (ebits + mbits);
  const auto& t = ieee_table(ebits, mbits).magnitudes;
  const std::uint32_t mag = code & (sign - 1u);
  if (mag >= t.size()) {
    return (mag & ((1u << mbits) - 1u)) ? std::numeric_limits<double>::quiet_NaN()
                                        : ((code & sign) ? -1.0 : 1.0) * std::numeric_limits<double>::infinity();
  }
  const double v = t[mag].get_d();
  return (code & sign) ? -v : v;
}

mpq_class underflow_score(const RealMatrix& w, int k) {
  const mpq_class scale = pow2(k);
  mpq_class s(0);
  for (double v : w.flat()) {
    const mpq_class m = abs(exact(v)) * scale;
    if (m < threshold()) s += threshold() - m;
  }
  return s;
}

std::optional<PtsAnswer> pts_bruteforce(const RealMatrix& w, int max_n) {
  // Past k_stop every nonzero element sits at or above the threshold and the
  // score can no longer change, so the "for every i >= 1" scan may end there.
  int k_stop = 0;
  for (double v : w.flat()) {
    if (v == 0.0) continue;
    const mpq_class m = abs(exact(v));
    while (m * pow2(k_stop) < threshold()) ++k_stop;
  }
  std::vector<mpq_class> s;
  const int horizon = std::max(k_stop, max_n) + 1;
  for (int k = 0; k <= horizon; ++k) s.push_back(underflow_score(w, k));

  for (int n = 0; n <= max_n; ++n) {
    const mpq_class lo = mpq_class(7) * pow2(5 - n);
    const mpq_class hi = mpq_class(7) * pow2(6 - n);
    for (double v : w.flat()) {
      const mpq_class m = abs(exact(v));
      if (lo <= m && m < hi) return PtsAnswer{n, true};
    }
    bool stable = true;
    for (int j = n + 1; j <= horizon; ++j) stable = stable && s[static_cast<std::size_t>(j)] == s[static_cast<std::size_t>(n)];
    if (stable) return PtsAnswer{n, false};
  }
  return std::nullopt;
}

double tiny_group_fraction(const RealMatrix& w, std::size_t group_size) {
  std::size_t tiny = 0, total = 0;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t g0 = 0; g0 < w.cols(); g0 += group_size) {
      bool all_small = true;
      for (std::size_t c = g0; c < g0 + group_size; ++c) {
        all_small = all_small && abs(exact(w(r, c))) < threshold();
      }
      tiny += all_small ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(tiny) / static_cast<double>(total);
}

std::vector<std::uint8_t> pack_nibbles(std::span<const std::int8_t> codes) {
  std::vector<std::uint8_t> out((codes.size() + 1) / 2, 0);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const unsigned nibble = static_cast<unsigned>(codes[i] < 0 ? codes[i] + 16 : codes[i]);
    out[i / 2] = static_cast<std::uint8_t>(out[i / 2] | (nibble << (4 * (i % 2))));
  }
  return out;
}

RealMatrix matmul_nt(const RealMatrix& a, const RealMatrix& b) {
  RealMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      long double acc = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        acc += static_cast<long double>(a(i, k)) * static_cast<long double>(b(j, k));
      }
      out(i, j) = static_cast<double>(acc);
    }
  }
  return out;
}

RealMatrix rope(const RealMatrix& x, double base) {
  const std::size_t d = x.cols();
  const std::size_t half = d / 2;
  RealMatrix out = x;
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t i = 0; i < half; ++i) {
      const long double theta =
          static_cast<long double>(t) *
          std::pow(static_cast<long double>(base), -2.0L * static_cast<long double>(i) / static_cast<long double>(d));
      const long double c = std::cos(theta), s = std::sin(theta);
      const long double a = x(t, i), b = x(t, i + half);
      out(t, i) = static_cast<double>(a * c - b * s);
      out(t, i + half) = static_cast<double>(a * s + b * c);
    }
  }
  return out;
}

RealMatrix attention(const RealMatrix& q, const RealMatrix& k, const RealMatrix& v, bool causal,
                     double tau) {
  RealMatrix out(q.rows(), v.cols());
  std::vector<long double> e(k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const std::size_t visible = causal ? std::min(i + 1, k.rows()) : k.rows();
    long double m = -std::numeric_limits<long double>::infinity();
    for (std::size_t j = 0; j < visible; ++j) {
      long double s = 0.0L;
      for (std::size_t c = 0; c < q.cols(); ++c) s += static_cast<long double>(q(i, c)) * k(j, c);
      e[j] = s * tau;
      m = std::max(m, e[j]);
    }
    long double l = 0.0L;
    for (std::size_t j = 0; j < visible; ++j) {
      e[j] = std::exp(e[j] - m);
      l += e[j];
    }
    for (std::size_t c = 0; c < v.cols(); ++c) {
      long double acc = 0.0L;
      for (std::size_t j = 0; j < visible; ++j) acc += e[j] * v(j, c);
      out(i, c) = static_cast<double>(acc / l);
    }
  }
  return out;
}

double relative_frobenius(const RealMatrix& a, const RealMatrix& b) {
  long double num = 0.0L, den = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const long double d = static_cast<long double>(a.flat()[i]) - b.flat()[i];
    num += d * d;
    den += static_cast<long double>(b.flat()[i]) * b.flat()[i];
  }
  if (den == 0.0L) return num == 0.0L ? 0.0 : std::numeric_limits<double>::infinity();
  return static_cast<double>(std::sqrt(num / den));
}

double max_abs(const RealMatrix& a, const RealMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.flat()[i] - b.flat()[i]));
  return m;
}

}  // namespace qlab::oracle
