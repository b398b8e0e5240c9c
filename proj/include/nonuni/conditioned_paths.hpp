#pragma once

/*
 * Walks conditioned to return: level visits of bridges (exact DP and exact
 * Monte Carlo draws), the inclusion symmetry on balls, the excursion record
 * near the two endpoints, the convolution condition scan and first-return
 * lower bounds.
 *
 * Level windows are half-open: vertex y lies in window k when its lattice
 * level is in [k t0, (k+1) t0), t0 being the largest one-step level gain.
 */

#include <json.hpp>

#include <random>
#include <unordered_set>

#include "hashing.hpp"
#include "return_series.hpp"

namespace nonuni {

inline long level_window(long level, long t0) {
  if (t0 <= 0) return 0;
  return level >= 0 ? level / t0 : -1 - (-level - 1) / t0;
}

// Largest level gain of one step, in lattice units (0 when unimodular).
inline long chain_t0(const CollapsedChain& c) {
  long t0 = 0;
  for (const auto& t : c.rows[0]) t0 = std::max(t0, c.level[static_cast<std::size_t>(t.target)]);
  return t0;
}

// ---------------------------------------------------------------------------
// Forward tables

/*
 * fwd[j][s] = number of j-step walks from the root ending in orbit state s,
 * for states with depth <= min(j, n - j). By reversibility and orbit symmetry
 * the number of walks from one vertex of s back to the root in m steps is
 * fwd[m][s] / |O_s|.
 */
struct BridgeTables {
  const CollapsedChain* chain = nullptr;
  int n = 0;
  long t0 = 0;
  std::vector<std::vector<Integer>> fwd;

  const Integer& closed() const { return fwd[static_cast<std::size_t>(n)][0]; }

  // Walks through state s at time j, summed over the orbit.
  Integer through(int j, std::size_t s) const {
    const auto& a = fwd[static_cast<std::size_t>(j)];
    const auto& b = fwd[static_cast<std::size_t>(n - j)];
    if (s >= a.size() || s >= b.size()) return 0;
    Integer p = a[s] * b[s];
    mpz_divexact(p.get_mpz_t(), p.get_mpz_t(), chain->orbit[s].get_mpz_t());
    return p;
  }
};

inline BridgeTables bridge_tables(const CollapsedChain& c, int n) {
  if (n < 0) throw InvalidArgument("n must be >= 0");
  if (n > c.horizon) throw InvalidArgument("n exceeds the chain horizon");
  BridgeTables t;
  t.chain = &c;
  t.n = n;
  t.t0 = c.basis.unimodular ? 0 : chain_t0(c);
  t.fwd.resize(static_cast<std::size_t>(n) + 1);
  t.fwd[0] = {Integer(1)};
  for (int k = 1; k <= n; ++k) {
    const auto& cur = t.fwd[static_cast<std::size_t>(k - 1)];
    std::size_t dst = c.prefix(std::min(k, n - k));
    std::vector<Integer> nxt(dst);
    for (std::size_t i = 0; i < cur.size(); ++i) {
      if (sgn(cur[i]) == 0) continue;
      for (const auto& tr : c.rows[i])
        if (static_cast<std::size_t>(tr.target) < dst)
          mpz_addmul_ui(nxt[static_cast<std::size_t>(tr.target)].get_mpz_t(), cur[i].get_mpz_t(),
                        static_cast<unsigned long>(tr.count));
    }
    t.fwd[static_cast<std::size_t>(k)] = std::move(nxt);
  }
  return t;
}

// Sum over states of forward x backward at every cut equals the closed-walk count.
inline bool bridge_normalization(const BridgeTables& t) {
  for (int j = 0; j <= t.n; ++j) {
    Integer s = 0;
    for (std::size_t i = 0; i < t.fwd[static_cast<std::size_t>(j)].size(); ++i) s += t.through(j, i);
    if (s != t.closed()) return false;
  }
  return true;
}

// E_{n,o}[number of times j in [0, n] with X_j in window k], exactly.
inline Rational bridge_level_visits(const BridgeTables& t, long k) {
  if (sgn(t.closed()) == 0) throw InvalidArgument("u_n = 0: conditioning on return is undefined");
  const auto& c = *t.chain;
  Integer acc = 0;
  for (int j = 0; j <= t.n; ++j)
    for (std::size_t s = 0; s < t.fwd[static_cast<std::size_t>(j)].size(); ++s)
      if (level_window(c.level[s], t.t0) == k) acc += t.through(j, s);
  return frac(acc, t.closed());
}

inline Rational bridge_level_visits(const CollapsedChain& c, const ProbabilitySeries& u, int n, long k) {
  auto t = bridge_tables(c, n);
  if (u.n_max() >= n && u.exact() && u.value(n) != frac(t.closed(), ipow(Integer(c.degree), static_cast<unsigned long>(n))))
    throw InvariantViolation("supplied u_n disagrees with the chain");
  return bridge_level_visits(t, k);
}

// ---------------------------------------------------------------------------
// Monte Carlo bridges

struct BridgeRow {
  long k = 0;
  std::optional<Rational> exact_visits;
  double bound = 0;  // n e^{-k t0}
  double visits_mean = 0, visits_se = 0;
  double distinct_mean = 0, distinct_se = 0;
  double hit = 0, hit_se = 0;  // P[w meets the levels >= k t0]
  bool visits_within_3se() const {
    if (!exact_visits) return true;
    double e = to_double(to_high(*exact_visits));
    return std::abs(visits_mean - e) <= 3 * visits_se + 1e-12;
  }
};

struct BridgeStatistics {
  std::string model;
  int n = 0;
  long samples = 0;
  std::uint64_t seed = 0;
  long t0 = 0;
  Rational u_n;
  std::vector<BridgeRow> rows;
  std::map<long, long> max_window;  // window of the path maximum -> count
  bool distinct_le_visits = true;

  nlohmann::json to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows)
      rs.push_back({{"k", r.k},
                    {"exact_visits", r.exact_visits ? nlohmann::json(to_double(to_high(*r.exact_visits))) : nlohmann::json()},
                    {"mc_visits", r.visits_mean},
                    {"mc_visits_se", r.visits_se},
                    {"mc_distinct", r.distinct_mean},
                    {"mc_distinct_se", r.distinct_se},
                    {"hit", r.hit},
                    {"hit_se", r.hit_se},
                    {"bound", r.bound}});
    nlohmann::json mx = nlohmann::json::object();
    for (const auto& [k, c] : max_window) mx[std::to_string(k)] = c;
    return {{"model", model}, {"n", n}, {"samples", samples}, {"seed", seed}, {"t0", t0},
            {"u_n", u_n.get_str()}, {"rows", rs}, {"max_window", mx}, {"distinct_le_visits", distinct_le_visits}};
  }

  void write_csv(std::ostream& os) const {
    os << "n,k,exact_visits,mc_visits,mc_visits_se,mc_distinct_mean,mc_ci,hit,hit_se,bound\n";
    os << std::setprecision(10);
    for (const auto& r : rows) {
      os << n << ',' << r.k << ',';
      if (r.exact_visits) os << to_double(to_high(*r.exact_visits));
      os << ',' << r.visits_mean << ',' << r.visits_se << ',' << r.distinct_mean << ',' << 2.576 * r.distinct_se << ','
         << r.hit << ',' << r.hit_se << ',' << r.bound << '\n';
    }
  }
};

/*
 * Exact bridge draws: each step picks a neighbor y with probability
 * proportional to the number of walks from y back to the root in the
 * remaining time, read off the forward tables. Sample i uses the generator
 * seeded with mix64(seed ^ mix64(i)).
 */
inline BridgeStatistics mc_bridge_statistics(const WalkModel& model, int n, long samples, std::uint64_t seed,
                                             const std::vector<long>& k_grid) {
  if (samples < 1) throw InvalidArgument("samples must be >= 1");
  if (n < 1) throw InvalidArgument("n must be >= 1");
  auto chain = collapse(model, n);
  auto t = bridge_tables(chain, n);
  if (sgn(t.closed()) == 0) throw InvalidArgument("u_n = 0: no bridges of this length");
  BridgeStatistics st;
  st.model = model.name();
  st.n = n;
  st.samples = samples;
  st.seed = seed;
  st.t0 = t.t0;
  st.u_n = frac(t.closed(), ipow(Integer(chain.degree), static_cast<unsigned long>(n)));

  // log2 of walks-back counts per (remaining steps, state).
  std::vector<std::vector<double>> lw(static_cast<std::size_t>(n) + 1);
  for (int m = 0; m <= n; ++m) {
    const auto& f = t.fwd[static_cast<std::size_t>(m)];
    auto& row = lw[static_cast<std::size_t>(m)];
    row.resize(f.size());
    for (std::size_t s = 0; s < f.size(); ++s) {
      if (sgn(f[s]) == 0) {
        row[s] = -std::numeric_limits<double>::infinity();
        continue;
      }
      long e1 = 0, e2 = 0;
      double m1 = mpz_get_d_2exp(&e1, f[s].get_mpz_t());
      double m2 = mpz_get_d_2exp(&e2, chain.orbit[s].get_mpz_t());
      row[s] = std::log2(m1) + static_cast<double>(e1) - std::log2(m2) - static_cast<double>(e2);
    }
  }

  const auto& basis = model.basis();
  auto lattice = [&](const VertexCode& v) { return basis.unimodular ? 0L : basis.lattice_level(model.level(v)); };
  std::size_t K = k_grid.size();
  std::vector<double> vs(K, 0), vs2(K, 0), ds(K, 0), ds2(K, 0), hits(K, 0);
  std::vector<VertexCode> nb;
  std::vector<double> w;
  std::vector<VertexCode> path;
  std::vector<long> levels;
  for (long i = 0; i < samples; ++i) {
    std::mt19937_64 rng(mix64(seed ^ mix64(static_cast<std::uint64_t>(i))));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    path.assign(1, model.root());
    for (int step = 0; step < n; ++step) {
      int m = n - step - 1;
      const auto& row = lw[static_cast<std::size_t>(m)];
      nb.clear();
      model.neighbors(path.back(), nb);
      w.assign(nb.size(), 0.0);
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < nb.size(); ++a) {
        int s = chain.find(model.vertex_state(nb[a]));
        w[a] = s >= 0 && static_cast<std::size_t>(s) < row.size() ? row[static_cast<std::size_t>(s)]
                                                                   : -std::numeric_limits<double>::infinity();
        top = std::max(top, w[a]);
      }
      if (!std::isfinite(top)) throw InvariantViolation("bridge sampler reached a dead end");
      double total = 0;
      for (auto& x : w) {
        x = std::isfinite(x) ? std::exp2(x - top) : 0.0;
        total += x;
      }
      double r = unif(rng) * total;
      std::size_t pick = 0;
      for (; pick + 1 < w.size(); ++pick) {
        if (r < w[pick]) break;
        r -= w[pick];
      }
      while (w[pick] == 0) --pick;  // guard against r landing past the last positive weight
      path.push_back(nb[pick]);
    }
    if (path.back() != model.root()) throw InvariantViolation("sampled bridge does not return");
    levels.clear();
    long mx = std::numeric_limits<long>::min();
    for (const auto& v : path) {
      levels.push_back(lattice(v));
      mx = std::max(mx, levels.back());
    }
    st.max_window[level_window(mx, t.t0)] += 1;
    std::unordered_set<VertexCode, VectorHash> seen;
    std::vector<long> distinct_levels;
    for (std::size_t p = 0; p < path.size(); ++p)
      if (seen.insert(path[p]).second) distinct_levels.push_back(levels[p]);
    for (std::size_t a = 0; a < K; ++a) {
      long k = k_grid[a];
      double v = 0, d = 0;
      for (long l : levels) v += level_window(l, t.t0) == k;
      for (long l : distinct_levels) d += level_window(l, t.t0) == k;
      if (d > v) st.distinct_le_visits = false;
      vs[a] += v;
      vs2[a] += v * v;
      ds[a] += d;
      ds2[a] += d * d;
      hits[a] += t.t0 > 0 ? (mx >= k * t.t0) : (k <= 0);
    }
  }
  double S = static_cast<double>(samples);
  auto se = [&](double s1, double s2) {
    double mean = s1 / S;
    double var = samples > 1 ? std::max(0.0, (s2 - S * mean * mean) / (S - 1)) : 0.0;
    return std::sqrt(var / S);
  };
  double logb = basis.unimodular ? 0.0 : std::log(to_double(to_high(basis.base)));
  for (std::size_t a = 0; a < K; ++a) {
    BridgeRow r;
    r.k = k_grid[a];
    r.exact_visits = bridge_level_visits(t, r.k);
    r.bound = static_cast<double>(n) * std::exp(-static_cast<double>(r.k * t.t0) * logb);
    r.visits_mean = vs[a] / S;
    r.visits_se = se(vs[a], vs2[a]);
    r.distinct_mean = ds[a] / S;
    r.distinct_se = se(ds[a], ds2[a]);
    r.hit = hits[a] / S;
    r.hit_se = std::sqrt(std::max(r.hit * (1 - r.hit), 1.0 / S) / S);
    st.rows.push_back(r);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Inclusion symmetry P_{n,o}[x in w] = P_{n,x}[o in w]

struct SymmetryReport {
  bool ok = true;
  int n = 0;
  long pairs = 0;
  struct Row {
    int vertex;
    int distance;
    Rational from_root;  // P_{n,o}[x in w]
    Rational to_root;    // P_{n,x}[o in w]
  };
  std::vector<Row> rows;
};

namespace detail {

// Closed walks of length n at v in the ball, avoiding `skip` (-1 for none).
inline Integer ball_closed_avoiding(const ExplicitGraph& g, int v, int n, int skip) {
  std::vector<Integer> cur(g.size()), nxt(g.size());
  cur[static_cast<std::size_t>(v)] = 1;
  for (int k = 1; k <= n; ++k) {
    for (auto& x : nxt) x = 0;
    for (std::size_t a = 0; a < g.size(); ++a) {
      if (sgn(cur[a]) == 0) continue;
      for (int b : g.adj[a])
        if (b != skip) nxt[static_cast<std::size_t>(b)] += cur[a];
    }
    std::swap(cur, nxt);
  }
  return cur[static_cast<std::size_t>(v)];
}

}  // namespace detail

// Checks the symmetry for every x within `radius` of the root by exact ball DPs.
inline SymmetryReport inclusion_symmetry(const WalkModel& model, int n, int radius) {
  if (n < 1 || radius < 0) throw InvalidArgument("need n >= 1 and radius >= 0");
  // Walks of length n from x stay within n/2 of x; one extra layer keeps the
  // neighbor lists of every reachable vertex complete.
  auto g = enumerate_ball(model, radius + n / 2 + 1);
  SymmetryReport rep;
  rep.n = n;
  Integer at_root = detail::ball_closed_avoiding(g, g.root(), n, -1);
  if (sgn(at_root) == 0) throw InvalidArgument("u_n = 0: conditioning on return is undefined");
  for (std::size_t x = 0; x < g.size(); ++x) {
    if (g.dist[x] > radius) continue;
    int xi = static_cast<int>(x);
    Rational a(1), b(1);
    if (xi != g.root()) {
      Integer at_x = detail::ball_closed_avoiding(g, xi, n, -1);
      a = 1 - frac(detail::ball_closed_avoiding(g, g.root(), n, xi), at_root);
      b = 1 - frac(detail::ball_closed_avoiding(g, xi, n, g.root()), at_x);
    }
    ++rep.pairs;
    rep.ok = rep.ok && a == b;
    rep.rows.push_back({xi, g.dist[x], a, b});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Excursion records

/*
 * Law of the record of a bridge of length n: the returns s_1 < ... < s_a
 * in (0, n/2] and, counted from the end, l_1 < ... < l_b with n - l in
 * (n/2, n). Given both records the middle piece is one first-return
 * excursion, so
 *   P[alpha = a, beta = b] = sum_{t, t'} f^{*a}(t) f^{*b}(t') f_{n-t-t'} / u_n
 * over t <= n/2 and t' < n/2.
 */
struct ExcursionLaw {
  int n = 0;
  std::vector<Rational> alpha;                 // P[alpha = a]
  std::vector<std::vector<Rational>> joint;    // P[alpha = a, beta = b], a, b <= joint_cap
  Rational mass;                               // sum of the alpha law
  Rational empty;                              // P[alpha = 0, beta = 0]

  nlohmann::json to_json() const {
    nlohmann::json a = nlohmann::json::array(), j = nlohmann::json::array();
    for (const auto& x : alpha) a.push_back(to_double(to_high(x)));
    for (const auto& row : joint) {
      nlohmann::json r = nlohmann::json::array();
      for (const auto& x : row) r.push_back(x.get_str());
      j.push_back(r);
    }
    return {{"n", n}, {"alpha_law", a}, {"joint_exact", j}, {"mass", mass.get_str()}, {"empty_record", empty.get_str()}};
  }
};

namespace detail {

// Values over base^k, so that convolutions stay integral.
struct ScaledSeries {
  std::vector<Integer> v;
  Integer base{1};
  Integer scale{1};
  int period = 1;
};

inline ScaledSeries scaled(const ProbabilitySeries& s) {
  if (!s.exact()) throw InvalidArgument("series '" + s.label + "' must be exact");
  ScaledSeries out;
  out.period = s.period;
  if (s.integer_form()) {
    out.base = s.base();
    out.scale = s.scale();
    for (int n = 0; n <= s.n_max(); ++n) out.v.push_back(s.numer(n));
    return out;
  }
  // Rationals: bring everything over one common denominator D, base 1.
  Integer D = 1;
  for (int n = 0; n <= s.n_max(); ++n) mpz_lcm(D.get_mpz_t(), D.get_mpz_t(), s.value(n).get_den().get_mpz_t());
  out.scale = D;
  for (int n = 0; n <= s.n_max(); ++n) out.v.push_back(s.value(n).get_num() * (D / s.value(n).get_den()));
  return out;
}

}  // namespace detail

inline ExcursionLaw excursion_record_law(const ProbabilitySeries& u, const ProbabilitySeries& f, int n, int joint_cap = 3) {
  if (n < 1 || n > u.n_max() || n > f.n_max()) throw InvalidArgument("n outside the series range");
  if (u.is_zero(n)) throw InvalidArgument("u_n = 0: conditioning on return is undefined");
  if (!(u.integer_form() && f.integer_form() && u.base() == f.base() && u.scale() == 1 && f.scale() == 1))
    throw InvalidArgument("excursion law needs integer-form u and f over one base");
  const Integer& d = u.base();
  int half = n / 2;
  int d_step = u.period;
  // A[a][t] = f^{*a}(t) * d^t, for t <= half.
  std::vector<std::vector<Integer>> A;
  A.push_back(std::vector<Integer>(static_cast<std::size_t>(half) + 1, 0));
  A[0][0] = 1;
  for (int a = 1; a * d_step <= half; ++a) {
    std::vector<Integer> row(static_cast<std::size_t>(half) + 1, 0);
    const auto& prev = A.back();
    for (int t = a * d_step; t <= half; ++t)
      for (int k = d_step; k <= t; k += d_step)
        if (!f.is_zero(k) && sgn(prev[static_cast<std::size_t>(t - k)]) != 0)
          row[static_cast<std::size_t>(t)] += f.numer(k) * prev[static_cast<std::size_t>(t - k)];
    A.push_back(std::move(row));
  }
  // M[t] = sum_{t' < n/2} U(t') F(n - t - t')
  int lmax = (n % 2 == 0) ? half - 1 : half;
  std::vector<Integer> M(static_cast<std::size_t>(half) + 1, 0);
  for (int t = 0; t <= half; ++t)
    for (int tp = 0; tp <= lmax; ++tp)
      if (n - t - tp >= 1 && !f.is_zero(n - t - tp) && !u.is_zero(tp)) M[static_cast<std::size_t>(t)] += u.numer(tp) * f.numer(n - t - tp);
  ExcursionLaw law;
  law.n = n;
  const Integer& Un = u.numer(n);
  law.mass = 0;
  for (const auto& row : A) {
    Integer acc = 0;
    for (int t = 0; t <= half; ++t)
      if (sgn(row[static_cast<std::size_t>(t)]) != 0) acc += row[static_cast<std::size_t>(t)] * M[static_cast<std::size_t>(t)];
    law.alpha.push_back(frac(acc, Un));
    law.mass += law.alpha.back();
  }
  law.mass.canonicalize();
  (void)d;
  // Joint law for small records; B uses the strict second-half window.
  int cap = std::min<int>(joint_cap, static_cast<int>(A.size()) - 1);
  law.joint.assign(static_cast<std::size_t>(cap) + 1, std::vector<Rational>(static_cast<std::size_t>(cap) + 1));
  for (int a = 0; a <= cap; ++a)
    for (int b = 0; b <= cap; ++b) {
      Integer acc = 0;
      for (int t = 0; t <= half; ++t) {
        const auto& x = A[static_cast<std::size_t>(a)][static_cast<std::size_t>(t)];
        if (sgn(x) == 0) continue;
        for (int tp = 0; tp <= lmax; ++tp) {
          const auto& y = A[static_cast<std::size_t>(b)][static_cast<std::size_t>(tp)];
          if (sgn(y) == 0 || n - t - tp < 1 || f.is_zero(n - t - tp)) continue;
          acc += x * y * f.numer(n - t - tp);
        }
      }
      law.joint[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = frac(acc, Un);
    }
  law.empty = law.joint[0][0];
  return law;
}

struct LimitExcursionLaw {
  HighFloat F_lo, F_hi;  // interval for F(1/rho)
  std::vector<HighFloat> xi;  // P[xi = k] = f_k rho^{-k} / F(1/rho), with F at the interval midpoint
  HighFloat xi_mass;
  HighFloat F() const { return (F_lo + F_hi) / 2; }
  HighFloat parameter() const { return 1 - F(); }
  HighFloat target() const { return (1 - F()) * (1 - F()); }
  HighFloat target_lo() const { return (1 - F_hi) * (1 - F_hi); }
  HighFloat target_hi() const { return (1 - F_lo) * (1 - F_lo); }

  // P[alpha = a] under Geometric(1 - F): F^a (1 - F).
  HighFloat geometric(int a) const { return pow(F(), a) * (1 - F()); }

  nlohmann::json to_json() const {
    return {{"F_lo", to_string(F_lo, 20)}, {"F_hi", to_string(F_hi, 20)}, {"parameter", to_string(parameter(), 20)},
            {"target", to_string(target(), 20)}, {"xi_mass", to_string(xi_mass, 20)}};
  }
};

inline LimitExcursionLaw limit_excursion_law(const ProbabilitySeries& f, const SpectralRadius& rho) {
  LimitExcursionLaw L;
  auto g = evaluate_generating(f, 1 / rho.value, rho);
  L.F_lo = g.lo();
  L.F_hi = g.hi();
  if (L.F_hi >= 1) throw Error("F(1/rho) interval reaches 1");
  HighFloat F = L.F();
  HighFloat rk = 1;
  L.xi_mass = 0;
  for (int k = 0; k <= f.n_max(); ++k) {
    L.xi.push_back(f.high(k) * rk / F);
    L.xi_mass += L.xi.back();
    rk /= rho.value;
  }
  return L;
}

// Total variation distance between the alpha law and Geometric(1 - F).
inline HighFloat excursion_tv(const ExcursionLaw& law, const LimitExcursionLaw& lim) {
  HighFloat tv = 0, geo_mass = 0;
  for (std::size_t a = 0; a < law.alpha.size(); ++a) {
    HighFloat g = lim.geometric(static_cast<int>(a));
    geo_mass += g;
    tv += abs(to_high(law.alpha[a]) - g);
  }
  tv += 1 - geo_mass;  // geometric mass beyond the computed range
  return tv / 2;
}

// ---------------------------------------------------------------------------
// Convolution condition scan

struct CnwRow {
  Rational epsilon;
  bool found = false;
  long N = 0;
  // N*(n): least N with sum_{i=N}^{n-N} u_i u_{n-i} <= eps u_n, sampled.
  std::vector<std::pair<int, long>> threshold;
  // log2(N*(n_max) / N*(n_max/2)): near 0 once N*(n) has settled.
  double growth_exponent = 0;
  // N*(n) still grows like a power above 1/2, so N(eps) is an artifact of n_max.
  bool growing = false;
};

struct CnwScan {
  int n_max = 0;
  long cap = 0;
  std::vector<CnwRow> rows;

  nlohmann::json to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json th = nlohmann::json::array();
      for (const auto& [n, N] : r.threshold) th.push_back({n, N});
      rs.push_back({{"epsilon", r.epsilon.get_str()},
                    {"found", r.found},
                    {"N", r.found ? nlohmann::json(r.N) : nlohmann::json()},
                    {"threshold_growth_exponent", r.growth_exponent},
                    {"threshold_growing", r.growing},
                    {"threshold", th}});
    }
    return {{"n_max", n_max}, {"cap", cap}, {"rows", rs}};
  }
};

/*
 * For each eps, the least N <= cap such that the inequality holds for every
 * 2N <= n <= n_max, computed exactly. N*(n) is found per n by accumulating
 * the symmetric sum from the middle outward; N(eps) is then the least N with
 * N >= N*(n) for all n in [2N, n_max].
 */
inline CnwScan cnw_condition_scan(const ProbabilitySeries& u, const std::vector<Rational>& eps_grid, int n_max,
                                  long cap = -1) {
  if (n_max < 2 || n_max > u.n_max()) throw InvalidArgument("n_max outside the series range");
  auto s = detail::scaled(u);
  CnwScan scan;
  scan.n_max = n_max;
  scan.cap = cap < 0 ? n_max / 2 : std::min<long>(cap, n_max / 2);
  // u_i u_{n-i} = v_i v_{n-i} / (base^n scale^2) and eps u_n = eps v_n / (base^n scale).
  for (const auto& eps : eps_grid) {
    if (eps <= 0) throw InvalidArgument("epsilon must be positive");
    CnwRow row;
    row.epsilon = eps;
    std::vector<long> Nstar(static_cast<std::size_t>(n_max) + 1, 1);
    Integer rhs_factor = s.scale * eps.get_num();
    for (int n = 2; n <= n_max; ++n) {
      Integer rhs = rhs_factor * s.v[static_cast<std::size_t>(n)];
      Integer S = 0;
      long Ns = n / 2 + 1;  // empty sum
      for (long N = n / 2; N >= 1; --N) {
        Integer t = s.v[static_cast<std::size_t>(N)] * s.v[static_cast<std::size_t>(n - N)];
        if (N != n - N) t *= 2;
        S += t;
        if (S * eps.get_den() > rhs) break;
        Ns = N;
      }
      Nstar[static_cast<std::size_t>(n)] = Ns;
      if (n % std::max(1, n_max / 20) == 0 || n == n_max) row.threshold.emplace_back(n, Ns);
    }
    // suffix max of N*(n) over n >= m
    std::vector<long> suf(static_cast<std::size_t>(n_max) + 2, 0);
    for (int n = n_max; n >= 0; --n) suf[static_cast<std::size_t>(n)] = std::max(suf[static_cast<std::size_t>(n) + 1], Nstar[static_cast<std::size_t>(n)]);
    for (long N = 1; N <= scan.cap; ++N)
      if (suf[static_cast<std::size_t>(2 * N)] <= N) {
        row.found = true;
        row.N = N;
        break;
      }
    double hi = static_cast<double>(Nstar[static_cast<std::size_t>(n_max)]);
    double lo = static_cast<double>(Nstar[static_cast<std::size_t>(n_max / 2)]);
    row.growth_exponent = std::log2(hi / lo);
    row.growing = row.growth_exponent > 0.5;
    scan.rows.push_back(std::move(row));
  }
  return scan;
}

// ---------------------------------------------------------------------------
// Synthetic sequences

enum class SyntheticCase { Power, Stretched, LogExponential, Constant };

inline SyntheticCase parse_synthetic_case(const std::string& s) {
  if (s == "power") return SyntheticCase::Power;
  if (s == "stretched") return SyntheticCase::Stretched;
  if (s == "log-exponential") return SyntheticCase::LogExponential;
  if (s == "constant") return SyntheticCase::Constant;
  throw InvalidArgument("unknown synthetic case '" + s + "'");
}

struct SyntheticParams {
  Rational rho{1};
  double alpha = 1.5;
  double c = 1.0;
  double beta = 0.5;
};

/*
 * u_n = rho^n a_n with
 *   power            a_n = (n+1)^{-alpha}
 *   stretched        a_n = (n+1)^{-alpha} exp(-c ((n+1)^beta - 1))
 *   log-exponential  a_n = exp(-n / log(n + e))
 *   constant         a_n = 1
 * a_n is rounded to 256 fractional bits; the series is stored as integers
 * num(rho)^n A_n over den(rho)^n 2^256, so every later step is exact.
 */
inline ProbabilitySeries synthetic_sequence(SyntheticCase kind, const SyntheticParams& p, int n_max) {
  if (n_max < 0) throw InvalidArgument("n_max must be >= 0");
  if (p.rho <= 0 || p.rho > 1) throw InvalidArgument("rho must be in (0, 1]");
  if (kind == SyntheticCase::Power && p.alpha <= 1) throw InvalidArgument("power case needs alpha > 1");
  if (kind == SyntheticCase::Stretched && (p.beta <= 0 || p.beta >= 1 || p.c <= 0))
    throw InvalidArgument("stretched case needs 0 < beta < 1 and c > 0");
  const unsigned bits = 256;
  Integer scale = ipow(Integer(2), bits);
  std::vector<Integer> numer;
  Integer rn = 1;
  HighFloat e = exp(HighFloat(1));
  for (int n = 0; n <= n_max; ++n) {
    HighFloat x = n;
    HighFloat a;
    switch (kind) {
      case SyntheticCase::Power: a = pow(x + 1, -HighFloat(p.alpha)); break;
      case SyntheticCase::Stretched:
        a = pow(x + 1, -HighFloat(p.alpha)) * exp(-HighFloat(p.c) * (pow(x + 1, HighFloat(p.beta)) - 1));
        break;
      case SyntheticCase::LogExponential: a = exp(-x / log(x + e)); break;
      case SyntheticCase::Constant: a = 1; break;
    }
    Rational ra = to_rational(a * to_high(scale));
    Integer A = ra.get_num() / ra.get_den();
    numer.push_back(A * rn);
    rn *= p.rho.get_num();
  }
  std::string label = "synthetic";
  return ProbabilitySeries::from_counts(SeriesKind::Synthetic, 1, p.rho.get_den(), scale, std::move(numer), label);
}

// ---------------------------------------------------------------------------
// First returns against returns

struct FirstReturnBound {
  double c_prime = 0;  // least c' >= 0 keeping f_n n^{c'} / u_n above its value at the window start
  double margin = 0;   // min f_n n^{c'} / u_n over the window
  double slope = 0;    // log-log slope of f_n / u_n
  double first_ratio = 0, last_ratio = 0;
  std::vector<std::pair<int, double>> ratios;

  nlohmann::json to_json() const {
    return {{"c_prime", c_prime}, {"margin", margin}, {"slope", slope}, {"first_ratio", first_ratio},
            {"last_ratio", last_ratio}};
  }
};

/*
 * Over the period-filtered window [lo, hi], fits log(f_n/u_n) against log n
 * and takes c' = max(0, -slope). margin = min f_n n^{c'} / u_n.
 */
inline FirstReturnBound first_return_lower_bound_check(const ProbabilitySeries& u, const ProbabilitySeries& f, int lo,
                                                       int hi) {
  if (lo < 1 || hi <= lo || hi > u.n_max() || hi > f.n_max()) throw InvalidArgument("bad window");
  FirstReturnBound b;
  std::vector<double> x, y;
  for (int n = lo; n <= hi; ++n) {
    if (n % u.period != 0 || u.is_zero(n)) continue;
    if (!(f.high(n) > 0)) throw InvalidArgument("f_n is not positive at n=" + std::to_string(n));
    double r = to_double(f.high(n) / u.high(n));
    b.ratios.emplace_back(n, r);
    x.push_back(std::log(static_cast<double>(n)));
    y.push_back(std::log(r));
  }
  if (b.ratios.size() < 3) throw InvalidArgument("window has fewer than 3 usable terms");
  b.slope = linear_fit(x, y).slope;
  b.c_prime = std::max(0.0, -b.slope);
  b.margin = std::numeric_limits<double>::infinity();
  for (const auto& [n, r] : b.ratios) b.margin = std::min(b.margin, r * std::pow(static_cast<double>(n), b.c_prime));
  b.first_ratio = b.ratios.front().second;
  b.last_ratio = b.ratios.back().second;
  return b;
}

}  // namespace nonuni
