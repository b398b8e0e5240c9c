#pragma once

// The Doob transform for h = sqrt(m), its level increment law, and exact
// ballot-type probabilities for the level walk.

#include <json.hpp>

#include <functional>

#include "return_series.hpp"

namespace nonuni {

// ---------------------------------------------------------------------------
// Harmonicity of h = sqrt(m)

struct HarmonicCheck {
  HighFloat harmonic;  // (1/d) sum_q t_q sqrt(q)
  HighFloat residual;  // |rho - harmonic|
  bool exact = false;  // residual is an exact zero in Q(sqrt D)
  bool ok = false;
};

inline HarmonicCheck harmonic_check(const WalkModel& model, const SpectralRadius& rho) {
  if (!model.amenable_mode())
    throw InvalidArgument(model.name() + ": h = sqrt(m) is rho-harmonic only for the fixed-end families");
  auto p = neighbor_level_profile(model);
  HarmonicCheck out;
  try {
    QuadNumber h = harmonic_rho(p);
    out.harmonic = h.to_high();
    if (rho.exact) {
      out.exact = true;
      out.ok = h == *rho.exact;
      out.residual = abs(out.harmonic - rho.value);
      return out;
    }
  } catch (const Error&) {
    // Mixed quadratic fields: fall through to the float sum.
    HighFloat s = 0;
    for (const auto& e : p.entries) s += HighFloat(e.count) * sqrt(to_high(e.q));
    out.harmonic = s / p.degree;
  }
  out.residual = abs(out.harmonic - rho.value);
  out.ok = out.residual <= HighFloat("1e-30");
  return out;
}

// ---------------------------------------------------------------------------
// p_h chain

struct DoobChain {
  std::shared_ptr<const CollapsedChain> chain;
  std::optional<QuadNumber> rho_exact;
  HighFloat rho;
  std::vector<std::vector<QuadNumber>> exact;  // p_h per transition, when rho is exact
  std::vector<std::vector<HighFloat>> high;
  std::vector<Rational> pi;  // h^2 = base^level per state

  bool rows_stochastic = true;
  HighFloat max_row_error = 0;
  bool reversible = true;
  long reversibility_pairs = 0;
  std::vector<std::string> violations;

  std::size_t size() const { return chain->size(); }
};

/*
 * p_h(x,y) = p(x,y) h(y) / (rho h(x)) with h = (sqrt base)^level. Rows of
 * interior states must sum to 1; on orbit classes reversibility reads
 *   |O_i| pi_i P_h(i,j) = |O_j| pi_j P_h(j,i).
 */
inline DoobChain doob_chain(const CollapsedChain& c, const SpectralRadius& rho) {
  if (c.basis.unimodular || !c.basis.lattice)
    throw InvalidArgument(c.model + ": p_h chain needs a nonunimodular lattice level structure");
  DoobChain dc;
  dc.chain = std::make_shared<const CollapsedChain>(c);
  dc.rho = rho.value;
  dc.rho_exact = rho.exact;
  QuadNumber root_b = QuadNumber::sqrt_of(c.basis.base);
  HighFloat root_bh = root_b.to_high();
  std::map<long, QuadNumber> hq;
  auto h_ratio = [&](long delta) -> const QuadNumber& {
    auto it = hq.find(delta);
    if (it != hq.end()) return it->second;
    QuadNumber v = root_b.pow(static_cast<unsigned>(std::labs(delta)));
    if (delta < 0) v = QuadNumber(Rational(1)) / v;
    return hq.emplace(delta, v).first->second;
  };
  dc.pi.resize(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) dc.pi[i] = rpow(c.basis.base, c.level[i]);
  dc.exact.resize(rho.exact ? c.size() : 0);
  dc.high.resize(c.size());
  auto fail = [&](std::string s) {
    if (dc.violations.size() < 20) dc.violations.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c.rows[i].empty()) continue;
    QuadNumber sum(Rational(0));
    HighFloat sumh = 0;
    for (const auto& t : c.rows[i]) {
      long delta = c.level[static_cast<std::size_t>(t.target)] - c.level[i];
      HighFloat ph = HighFloat(t.count) / c.degree * pow(root_bh, delta) / rho.value;
      dc.high[i].push_back(ph);
      sumh += ph;
      if (rho.exact) {
        QuadNumber p = QuadNumber(frac(t.count, c.degree)) * h_ratio(delta) / *rho.exact;
        sum += p;
        dc.exact[i].push_back(std::move(p));
      }
    }
    HighFloat err = abs(sumh - 1);
    dc.max_row_error = std::max(dc.max_row_error, err);
    bool ok = rho.exact ? sum == QuadNumber(Rational(1)) : err <= HighFloat("1e-30");
    if (!ok) {
      dc.rows_stochastic = false;
      fail("row " + std::to_string(i) + " sums to " + (rho.exact ? sum.str() : to_string(sumh, 30)));
    }
  }
  // Reversibility on every pair of interior states joined by a transition.
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t k = 0; k < c.rows[i].size(); ++k) {
      auto j = static_cast<std::size_t>(c.rows[i][k].target);
      if (j <= i || c.rows[j].empty()) continue;
      std::size_t back = c.rows[j].size();
      for (std::size_t m = 0; m < c.rows[j].size(); ++m)
        if (static_cast<std::size_t>(c.rows[j][m].target) == i) back = m;
      ++dc.reversibility_pairs;
      if (back == c.rows[j].size()) {
        dc.reversible = false;
        fail("transition " + std::to_string(i) + "->" + std::to_string(j) + " has no reverse");
        continue;
      }
      bool ok;
      if (rho.exact) {
        QuadNumber lhs = QuadNumber(Rational(c.orbit[i]) * dc.pi[i]) * dc.exact[i][k];
        QuadNumber rhs = QuadNumber(Rational(c.orbit[j]) * dc.pi[j]) * dc.exact[j][back];
        ok = lhs == rhs;
      } else {
        HighFloat lhs = to_high(Rational(c.orbit[i]) * dc.pi[i]) * dc.high[i][k];
        HighFloat rhs = to_high(Rational(c.orbit[j]) * dc.pi[j]) * dc.high[j][back];
        ok = abs(lhs - rhs) <= abs(lhs) * HighFloat("1e-40");
      }
      if (!ok) {
        dc.reversible = false;
        fail("detailed balance fails on " + std::to_string(i) + "<->" + std::to_string(j));
      }
    }
  }
  return dc;
}

// Root return probabilities of the p_h chain in Q(sqrt D), n <= n_max.
inline std::vector<QuadNumber> doob_return_exact(const DoobChain& dc, int n_max) {
  if (!dc.rho_exact) throw InvalidArgument("exact p_h returns need a closed-form rho");
  const auto& c = *dc.chain;
  if (n_max > c.horizon) throw InvalidArgument("n_max exceeds the chain horizon");
  std::vector<QuadNumber> cur(c.size(), QuadNumber(Rational(0))), nxt(c.size(), QuadNumber(Rational(0)));
  std::vector<char> live(c.size(), 0), nlive(c.size(), 0);
  std::vector<QuadNumber> out{QuadNumber(Rational(1))};
  cur[0] = QuadNumber(Rational(1));
  live[0] = 1;
  for (int k = 1; k <= n_max; ++k) {
    std::size_t src = c.prefix(std::min(k - 1, n_max - k + 1));
    std::size_t dst = c.prefix(std::min(k, n_max - k));
    for (std::size_t i = 0; i < dst; ++i) {
      nxt[i] = QuadNumber(Rational(0));
      nlive[i] = 0;
    }
    for (std::size_t i = 0; i < src; ++i) {
      if (!live[i]) continue;
      for (std::size_t t = 0; t < c.rows[i].size(); ++t) {
        auto j = static_cast<std::size_t>(c.rows[i][t].target);
        if (j >= dst) continue;
        nxt[j] += cur[i] * dc.exact[i][t];
        nlive[j] = 1;
      }
    }
    std::swap(cur, nxt);
    std::swap(live, nlive);
    out.push_back(cur[0]);
  }
  return out;
}

inline std::vector<HighFloat> doob_return_high(const DoobChain& dc, int n_max) {
  const auto& c = *dc.chain;
  if (n_max > c.horizon) throw InvalidArgument("n_max exceeds the chain horizon");
  std::vector<HighFloat> cur(c.size(), HighFloat(0)), nxt(c.size(), HighFloat(0));
  std::vector<HighFloat> out{HighFloat(1)};
  cur[0] = 1;
  for (int k = 1; k <= n_max; ++k) {
    std::size_t src = c.prefix(std::min(k - 1, n_max - k + 1));
    std::size_t dst = c.prefix(std::min(k, n_max - k));
    for (std::size_t i = 0; i < dst; ++i) nxt[i] = 0;
    for (std::size_t i = 0; i < src; ++i) {
      if (cur[i] == 0) continue;
      for (std::size_t t = 0; t < c.rows[i].size(); ++t) {
        auto j = static_cast<std::size_t>(c.rows[i][t].target);
        if (j < dst) nxt[j] += cur[i] * dc.high[i][t];
      }
    }
    std::swap(cur, nxt);
    out.push_back(cur[0]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Level increment law

/*
 * Atom j carries weight w_j = t_q sqrt(q) = sqrt(t_q t_{1/q}), which is
 * either an integer k or k sqrt(D) for one squarefree D. Probabilities are
 * w_j / W with W = sum_j w_j = d rho, so every DP below runs on exact
 * elements of Z[sqrt D] and divides by W^n at the end.
 */
struct LevelAtom {
  long step = 0;  // lattice units
  long k = 1;
  bool radical = false;  // weight k sqrt(D) rather than k
  QuadNumber probability;
  HighFloat p;
};

struct LevelIncrementLaw {
  std::string source;
  std::vector<LevelAtom> atoms;  // sorted by step
  long t0 = 0;
  Rational base{1};
  long D = 1;
  QuadInteger total;  // W
  bool symmetric = false;
  bool unit_mass = false;
  HighFloat mean;

  QuadNumber weight(const QuadInteger& w) const { return QuadNumber(Rational(w.a), Rational(w.b), D); }
  QuadNumber total_exact() const { return weight(total); }
  HighFloat total_high() const { return total_exact().to_high(); }

  QuadNumber probability(long step) const {
    for (const auto& a : atoms)
      if (a.step == step) return a.probability;
    return QuadNumber(Rational(0));
  }

  nlohmann::json to_json() const {
    nlohmann::json at = nlohmann::json::array();
    for (const auto& a : atoms) at.push_back({{"step", a.step}, {"probability", to_string(a.p, 30)}, {"exact", a.probability.str()}});
    return {{"source", source}, {"t0", t0}, {"base", base.get_str()}, {"atoms", at}, {"symmetric", symmetric},
            {"unit_mass", unit_mass}};
  }
};

namespace detail {

inline void finish_law(LevelIncrementLaw& law) {
  std::sort(law.atoms.begin(), law.atoms.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  law.total = {};
  for (const auto& a : law.atoms) {
    if (a.radical)
      law.total.b += a.k;
    else
      law.total.a += a.k;
  }
  QuadNumber W = law.total_exact();
  QuadNumber mass(Rational(0));
  law.t0 = 0;
  law.mean = 0;
  for (auto& a : law.atoms) {
    a.probability = QuadNumber(a.radical ? Rational(0) : Rational(a.k), a.radical ? Rational(a.k) : Rational(0), law.D) / W;
    a.p = a.probability.to_high();
    mass += a.probability;
    law.t0 = std::max(law.t0, a.step);
    law.mean += a.p * a.step;
  }
  law.unit_mass = mass == QuadNumber(Rational(1));
  law.symmetric = true;
  for (const auto& a : law.atoms) law.symmetric = law.symmetric && law.probability(-a.step) == a.probability;
}

}  // namespace detail

// The +-1 law with probability 1/2 each.
inline LevelIncrementLaw simple_law() {
  LevelIncrementLaw law;
  law.source = "simple";
  law.base = 2;
  law.atoms = {{-1, 1, false, {}, {}}, {1, 1, false, {}, {}}};
  detail::finish_law(law);
  return law;
}

/*
 * P[Z = j] = t_q sqrt(q) / (d rho) for the neighbor profile. The atoms are
 * normalized by sum_q t_q sqrt(q); unit_mass records whether that sum equals
 * d rho for the supplied rho.
 */
inline LevelIncrementLaw increment_law(const LevelProfile& profile, const SpectralRadius& rho) {
  if (profile.basis.unimodular) throw InvalidArgument("unimodular profile: the level walk is trivial");
  if (!profile.basis.lattice) throw InvalidArgument("non-lattice level increments: exact level DP unavailable");
  LevelIncrementLaw law;
  law.base = profile.basis.base;
  for (const auto& e : profile.entries) {
    long back = profile.count_at(1 / e.q);
    if (back == 0) throw InvariantViolation("profile has q without 1/q");
    auto [k, m] = square_split(e.count * back);
    LevelAtom a;
    a.step = profile.basis.lattice_level(e.level);
    a.k = k;
    a.radical = m != 1;
    if (a.radical) {
      if (law.D != 1 && law.D != m) throw InvariantViolation("increment weights span two quadratic fields");
      law.D = m;
    }
    law.atoms.push_back(a);
  }
  detail::finish_law(law);
  QuadNumber drho = law.total_exact() / QuadNumber(Rational(profile.degree));
  if (rho.exact)
    law.unit_mass = law.unit_mass && drho == *rho.exact;
  else
    law.unit_mass = law.unit_mass && abs(drho.to_high() - rho.value) <= HighFloat("1e-30");
  return law;
}

// ---------------------------------------------------------------------------
// Level walk DPs

// A probability held as an exact weight over W^steps, or as a float only.
struct LawValue {
  bool exact = true;
  QuadInteger weight;
  int steps = 0;
  HighFloat value;

  QuadNumber exact_value(const LevelIncrementLaw& law) const {
    if (!exact) throw InvalidArgument("value was computed in float mode");
    return law.weight(weight) / law.total_exact().pow(static_cast<unsigned>(steps));
  }
};

namespace detail {

struct ExactOps {
  using V = QuadInteger;
  const LevelIncrementLaw* law;
  static bool zero(const V& x) { return x.is_zero(); }
  static void clear(V& x) {
    x.a = 0;
    x.b = 0;
  }
  void mul_add(V& acc, std::size_t atom, const V& x) const {
    const auto& a = law->atoms[atom];
    auto k = static_cast<unsigned long>(a.k);
    if (!a.radical) {
      if (x.a != 0) mpz_addmul_ui(acc.a.get_mpz_t(), x.a.get_mpz_t(), k);
      if (x.b != 0) mpz_addmul_ui(acc.b.get_mpz_t(), x.b.get_mpz_t(), k);
    } else {
      if (x.b != 0) mpz_addmul_ui(acc.a.get_mpz_t(), x.b.get_mpz_t(), k * static_cast<unsigned long>(law->D));
      if (x.a != 0) mpz_addmul_ui(acc.b.get_mpz_t(), x.a.get_mpz_t(), k);
    }
  }
  static void add(V& acc, const V& x) {
    acc.a += x.a;
    acc.b += x.b;
  }
  LawValue finish(const V& x, int steps) const {
    LawValue v;
    v.weight = x;
    v.steps = steps;
    v.value = (to_high(x.a) + to_high(x.b) * sqrt(HighFloat(law->D))) / pow(law->total_high(), steps);
    return v;
  }
};

struct FloatOps {
  using V = long double;
  const LevelIncrementLaw* law;
  std::vector<long double> p;
  explicit FloatOps(const LevelIncrementLaw* l) : law(l) {
    for (const auto& a : l->atoms) p.push_back(static_cast<long double>(to_double(a.p)));
  }
  static bool zero(V x) { return x == 0; }
  static void clear(V& x) { x = 0; }
  void mul_add(V& acc, std::size_t atom, V x) const { acc += p[atom] * x; }
  static void add(V& acc, V x) { acc += x; }
  LawValue finish(V x, int steps) const {
    LawValue v;
    v.exact = false;
    v.steps = steps;
    v.value = HighFloat(static_cast<double>(x));
    return v;
  }
};

// Dense array over positions [lo, hi].
template <class V>
struct Row {
  long lo = 0;
  std::vector<V> v;
  V& at(long p) { return v[static_cast<std::size_t>(p - lo)]; }
  long hi() const { return lo + static_cast<long>(v.size()) - 1; }
};

template <class Ops>
void spread(const Ops& ops, const Row<typename Ops::V>& cur, Row<typename Ops::V>& nxt, long lo, long hi,
            const std::function<bool(long)>& keep) {
  nxt.lo = lo;
  nxt.v.resize(static_cast<std::size_t>(std::max(0L, hi - lo + 1)));
  for (auto& x : nxt.v) Ops::clear(x);
  for (std::size_t i = 0; i < cur.v.size(); ++i) {
    if (Ops::zero(cur.v[i])) continue;
    long p = cur.lo + static_cast<long>(i);
    for (std::size_t a = 0; a < ops.law->atoms.size(); ++a) {
      long q = p + ops.law->atoms[a].step;
      if (q < lo || q > hi || !keep(q)) continue;
      ops.mul_add(nxt.at(q), a, cur.v[i]);
    }
  }
}

template <class Ops>
typename Ops::V ballot_dp(const Ops& ops, int n, long r) {
  using V = typename Ops::V;
  long t0 = ops.law->t0;
  long wlo = r * t0, whi = (r + 1) * t0 - 1;
  Row<V> cur, nxt;
  cur.lo = 0;
  cur.v.resize(1);
  cur.v[0] = V(1);
  for (int k = 1; k <= n; ++k) {
    long lo = k < n ? 1 : wlo;
    long hi = std::min(static_cast<long>(k) * t0, whi + static_cast<long>(n - k) * t0);
    if (lo > hi) return V(0);
    spread(ops, cur, nxt, lo, hi, [](long) { return true; });
    std::swap(cur, nxt);
  }
  V out(0);
  for (long p = std::max(cur.lo, wlo); p <= std::min(cur.hi(), whi); ++p) Ops::add(out, cur.at(p));
  return out;
}

template <class Ops>
std::vector<typename Ops::V> hitting_dp(const Ops& ops, long r, int n_max) {
  using V = typename Ops::V;
  long t0 = ops.law->t0, bar = r * t0;
  std::vector<V> out(static_cast<std::size_t>(n_max) + 1, V(0));
  Row<V> cur, nxt;
  cur.lo = 0;
  cur.v.resize(1);
  cur.v[0] = V(1);
  for (int k = 1; k <= n_max; ++k) {
    long lo = std::max(-static_cast<long>(k) * t0, bar - static_cast<long>(n_max - k + 1) * t0);
    long hi = bar + t0;
    spread(ops, cur, nxt, lo, hi, [](long) { return true; });
    for (long p = std::max(bar, nxt.lo); p <= nxt.hi(); ++p) {
      Ops::add(out[static_cast<std::size_t>(k)], nxt.at(p));
      Ops::clear(nxt.at(p));
    }
    std::swap(cur, nxt);
  }
  return out;
}

template <class Ops>
typename Ops::V max_return_dp(const Ops& ops, int n, long r) {
  using V = typename Ops::V;
  long t0 = ops.law->t0;
  long wlo = r * t0, kill = (r + 1) * t0;
  // below: running max still under the window; in: max inside the window.
  Row<V> below, in, nb, ni;
  below.lo = in.lo = 0;
  below.v.assign(1, V(0));
  in.v.assign(1, V(0));
  (r == 0 ? in : below).v[0] = V(1);
  for (int k = 1; k <= n; ++k) {
    long rest = static_cast<long>(n - k) * t0;
    long lo = std::max(-static_cast<long>(k) * t0, -rest);
    long hi = std::min(kill - 1, rest);
    if (lo > hi) return V(0);
    // Paths still below the window must climb into it and come back.
    spread(ops, below, nb, lo, std::min(hi, wlo - 1), [&](long q) { return (wlo - q) + wlo <= rest; });
    spread(ops, in, ni, lo, hi, [](long) { return true; });
    // Moves from below into the window.
    for (std::size_t i = 0; i < below.v.size(); ++i) {
      if (Ops::zero(below.v[i])) continue;
      long p = below.lo + static_cast<long>(i);
      for (std::size_t a = 0; a < ops.law->atoms.size(); ++a) {
        long q = p + ops.law->atoms[a].step;
        if (q >= wlo && q >= lo && q <= hi) ops.mul_add(ni.at(q), a, below.v[i]);
      }
    }
    std::swap(below, nb);
    std::swap(in, ni);
  }
  return in.lo <= 0 && in.hi() >= 0 ? in.at(0) : V(0);
}

template <class Ops>
std::vector<typename Ops::V> return_dp(const Ops& ops, int n_max) {
  using V = typename Ops::V;
  long t0 = ops.law->t0;
  std::vector<V> out{V(1)};
  Row<V> cur, nxt;
  cur.lo = 0;
  cur.v.assign(1, V(1));
  for (int k = 1; k <= n_max; ++k) {
    long reach = std::min(static_cast<long>(k), static_cast<long>(n_max - k)) * t0;
    spread(ops, cur, nxt, -reach, reach, [](long) { return true; });
    std::swap(cur, nxt);
    out.push_back(cur.lo <= 0 && cur.hi() >= 0 ? cur.at(0) : V(0));
  }
  return out;
}

// P[Y_k = y, Y_i > y - bar for 1 <= i < k]: the reversed form of tau = k.
template <class Ops>
typename Ops::V reversed_hit_dp(const Ops& ops, long r, int k) {
  using V = typename Ops::V;
  long t0 = ops.law->t0, bar = r * t0;
  V total(0);
  for (long y = bar; y < bar + t0; ++y) {
    long floor_ = y - bar;
    Row<V> cur, nxt;
    cur.lo = 0;
    cur.v.assign(1, V(1));
    for (int i = 1; i <= k; ++i) {
      long lo = i < k ? floor_ + 1 : y;
      long hi = i < k ? static_cast<long>(i) * t0 : y;
      if (lo > hi) {
        cur.v.clear();
        break;
      }
      spread(ops, cur, nxt, lo, hi, [](long) { return true; });
      std::swap(cur, nxt);
    }
    if (!cur.v.empty() && cur.lo <= y && cur.hi() >= y) Ops::add(total, cur.at(y));
  }
  return total;
}

}  // namespace detail

inline void check_law(const LevelIncrementLaw& law) {
  if (law.atoms.empty() || law.t0 <= 0) throw InvalidArgument("level law has no positive atom");
}

// P[Y_j > 0 for 1 <= j < n, Y_n in [r t0, (r+1) t0)].
inline LawValue ballot_probability(const LevelIncrementLaw& law, int n, long r, Arithmetic mode = Arithmetic::Exact) {
  check_law(law);
  if (n < 1 || r < 0) throw InvalidArgument("ballot needs n >= 1 and r >= 0");
  if (mode == Arithmetic::Exact) {
    detail::ExactOps ops{&law};
    return ops.finish(detail::ballot_dp(ops, n, r), n);
  }
  detail::FloatOps ops(&law);
  return ops.finish(detail::ballot_dp(ops, n, r), n);
}

// P[tau_r = k] for k = 0..n_max, tau_r the first time Y >= r t0.
inline std::vector<LawValue> hitting_time_law(const LevelIncrementLaw& law, long r, int n_max,
                                              Arithmetic mode = Arithmetic::Exact) {
  check_law(law);
  if (r < 1 || n_max < 0) throw InvalidArgument("hitting time needs r >= 1 and n_max >= 0");
  std::vector<LawValue> out;
  if (mode == Arithmetic::Exact) {
    detail::ExactOps ops{&law};
    auto v = detail::hitting_dp(ops, r, n_max);
    for (int k = 0; k <= n_max; ++k) out.push_back(ops.finish(v[static_cast<std::size_t>(k)], k));
  } else {
    detail::FloatOps ops(&law);
    auto v = detail::hitting_dp(ops, r, n_max);
    for (int k = 0; k <= n_max; ++k) out.push_back(ops.finish(v[static_cast<std::size_t>(k)], k));
  }
  return out;
}

// P[tau_r = k] computed through the time-reversed walk.
inline LawValue reversed_hitting_probability(const LevelIncrementLaw& law, long r, int k) {
  check_law(law);
  if (r < 1 || k < 1) throw InvalidArgument("reversed hitting needs r >= 1 and k >= 1");
  detail::ExactOps ops{&law};
  return ops.finish(detail::reversed_hit_dp(ops, r, k), k);
}

// P[max_{j <= n} Y_j in [r t0, (r+1) t0), Y_n = 0].
inline LawValue max_and_return(const LevelIncrementLaw& law, int n, long r, Arithmetic mode = Arithmetic::Exact) {
  check_law(law);
  if (n < 0 || r < 0) throw InvalidArgument("max_and_return needs n >= 0 and r >= 0");
  if (mode == Arithmetic::Exact) {
    detail::ExactOps ops{&law};
    return ops.finish(detail::max_return_dp(ops, n, r), n);
  }
  detail::FloatOps ops(&law);
  return ops.finish(detail::max_return_dp(ops, n, r), n);
}

// P[Y_n = 0] for n = 0..n_max.
inline std::vector<LawValue> level_return_law(const LevelIncrementLaw& law, int n_max,
                                              Arithmetic mode = Arithmetic::Exact) {
  check_law(law);
  std::vector<LawValue> out;
  if (mode == Arithmetic::Exact) {
    detail::ExactOps ops{&law};
    auto v = detail::return_dp(ops, n_max);
    for (int k = 0; k <= n_max; ++k) out.push_back(ops.finish(v[static_cast<std::size_t>(k)], k));
  } else {
    detail::FloatOps ops(&law);
    auto v = detail::return_dp(ops, n_max);
    for (int k = 0; k <= n_max; ++k) out.push_back(ops.finish(v[static_cast<std::size_t>(k)], k));
  }
  return out;
}

struct CompletenessReport {
  int n = 0;
  long windows = 0;
  bool ok = false;
  QuadInteger sum;
  QuadInteger direct;
};

// sum_r max_and_return(n, r) against P[Y_n = 0], exactly.
inline CompletenessReport max_return_completeness(const LevelIncrementLaw& law, int n) {
  CompletenessReport rep;
  rep.n = n;
  detail::ExactOps ops{&law};
  long r_max = static_cast<long>(n) / 2 + 1;
  for (long r = 0; r <= r_max; ++r) {
    auto v = detail::max_return_dp(ops, n, r);
    ops.add(rep.sum, v);
    ++rep.windows;
  }
  rep.direct = detail::return_dp(ops, n).back();
  rep.ok = rep.sum == rep.direct;
  return rep;
}

// ---------------------------------------------------------------------------
// Exhaustive enumeration oracle

/*
 * Walks every increment sequence of length <= n_max and accumulates, for
 * each length, the ballot window, the max window on returns to 0, and the
 * first passage times above r t0. Weights are products of the atom weights,
 * exact in Z[sqrt D].
 */
struct PathEnumeration {
  int n_max = 0;
  std::vector<std::map<long, QuadInteger>> ballot;      // [n][r]
  std::vector<std::map<long, QuadInteger>> max_return;  // [n][r]
  std::map<long, std::vector<QuadInteger>> hitting;     // [r][k]
  std::vector<QuadInteger> returns;                     // [n]
};

inline PathEnumeration enumerate_level_paths(const LevelIncrementLaw& law, int n_max) {
  check_law(law);
  if (n_max < 0 || n_max > 16) throw InvalidArgument("enumeration limited to n <= 16");
  PathEnumeration e;
  e.n_max = n_max;
  e.ballot.resize(static_cast<std::size_t>(n_max) + 1);
  e.max_return.resize(static_cast<std::size_t>(n_max) + 1);
  e.returns.resize(static_cast<std::size_t>(n_max) + 1);
  long t0 = law.t0;
  auto window = [&](long y) { return y >= 0 ? y / t0 : -1 - (-y - 1) / t0; };
  // Weight c * sqrt(D)^e with c a 128-bit integer and e in {0, 1}.
  using U = unsigned __int128;
  auto to_quad = [&](U c, int par) {
    QuadInteger q;
    Integer z = 0;
    for (int s = 120; s >= 0; s -= 8) z = z * 256 + static_cast<unsigned>((c >> s) & 0xff);
    (par ? q.b : q.a) = z;
    return q;
  };
  auto add = [](QuadInteger& acc, const QuadInteger& x) {
    acc.a += x.a;
    acc.b += x.b;
  };
  std::function<void(int, long, long, bool, U, int)> dfs = [&](int k, long y, long mx, bool positive, U c, int par) {
    QuadInteger w = to_quad(c, par);
    if (k >= 1) {
      // `positive` holds Y_j > 0 for 1 <= j < k.
      if (positive && y >= 0) add(e.ballot[static_cast<std::size_t>(k)][window(y)], w);
      if (y == 0) add(e.max_return[static_cast<std::size_t>(k)][window(mx)], w);
      if (y == 0) add(e.returns[static_cast<std::size_t>(k)], w);
    } else {
      add(e.returns[0], w);
      add(e.max_return[0][0], w);
    }
    if (k == n_max) return;
    for (const auto& a : law.atoms) {
      long ny = y + a.step;
      U f = static_cast<U>(a.k);
      if (par && a.radical) f *= static_cast<U>(law.D);
      U nc = c * f;
      if (f != 0 && nc / f != c) throw BudgetExceeded("enumeration weight overflow");
      long nmx = std::max(mx, ny);
      if (ny > mx) {
        // First passages above r t0 for every r newly crossed.
        for (long r = std::max(1L, window(mx) + 1); r * t0 <= ny; ++r) {
          if (r * t0 <= mx) continue;
          auto& h = e.hitting[r];
          if (h.size() < static_cast<std::size_t>(n_max) + 1) h.resize(static_cast<std::size_t>(n_max) + 1);
          add(h[static_cast<std::size_t>(k + 1)], to_quad(nc, par ^ (a.radical ? 1 : 0)));
        }
      }
      bool npos = positive && (k == 0 || y > 0);
      dfs(k + 1, ny, nmx, npos, nc, par ^ (a.radical ? 1 : 0));
    }
  };
  dfs(0, 0, 0, true, 1, 0);
  return e;
}

// ---------------------------------------------------------------------------
// Normalized-ratio scans

struct BoundScan {
  // sup over the grid of each normalized ratio, with its argmax
  double ballot_sup = 0;     // ballot(n, r) n^{3/2} / (r v 1)
  double max_return_sup = 0;  // max_and_return(n, r) n^{3/2} / (r v 1)^{3/2}
  double hitting_sup = 0;    // P[tau_r = k] k^{3/2} / r
  double assembled_sup = 0;  // n^{3/2} sum_r max_and_return(n, r) base^{-r t0}
  std::vector<std::tuple<int, long, double, double>> max_return_rows;  // n, r, probability, ratio
  std::vector<std::pair<int, double>> assembled_rows;
  bool positive = true;

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [n, r, p, q] : max_return_rows) rows.push_back({{"n", n}, {"r", r}, {"probability", p}, {"ratio", q}});
    nlohmann::json as = nlohmann::json::array();
    for (const auto& [n, v] : assembled_rows) as.push_back({{"n", n}, {"value", v}});
    return {{"ballot_sup", ballot_sup}, {"max_return_sup", max_return_sup}, {"hitting_sup", hitting_sup},
            {"assembled_sup", assembled_sup}, {"max_return_rows", rows}, {"assembled", as}, {"positive", positive}};
  }
};

// Float-mode scan of the normalized ratios over n_grid x r_grid.
inline BoundScan bound_constant_scan(const LevelIncrementLaw& law, const std::vector<int>& n_grid,
                                     const std::vector<long>& r_grid) {
  check_law(law);
  BoundScan s;
  int n_top = 0;
  for (int n : n_grid) n_top = std::max(n_top, n);
  double logb = std::log(to_double(to_high(law.base)));
  for (int n : n_grid) {
    double n32 = std::pow(static_cast<double>(n), 1.5);
    double assembled = 0;
    for (long r : r_grid) {
      double rr = static_cast<double>(std::max(r, 1L));
      double b = to_double(ballot_probability(law, n, r, Arithmetic::Float).value);
      double m = to_double(max_and_return(law, n, r, Arithmetic::Float).value);
      s.ballot_sup = std::max(s.ballot_sup, b * n32 / rr);
      double ratio = m * n32 / std::pow(rr, 1.5);
      s.max_return_sup = std::max(s.max_return_sup, ratio);
      s.max_return_rows.emplace_back(n, r, m, ratio);
      assembled += m * std::exp(-static_cast<double>(r * law.t0) * logb);
      s.positive = s.positive && b >= 0 && m >= 0;
    }
    s.assembled_rows.emplace_back(n, assembled * n32);
    s.assembled_sup = std::max(s.assembled_sup, assembled * n32);
  }
  for (long r : r_grid) {
    if (r < 1) continue;
    auto h = hitting_time_law(law, r, n_top, Arithmetic::Float);
    for (int k : n_grid) {
      double v = to_double(h[static_cast<std::size_t>(k)].value);
      s.hitting_sup = std::max(s.hitting_sup, v * std::pow(static_cast<double>(k), 1.5) / static_cast<double>(r));
    }
  }
  return s;
}

}  // namespace nonuni
