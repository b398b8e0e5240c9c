#pragma once

/*
 * Orbit schemas for quasi-transitive actions, the symmetric matrix A, its
 * Perron eigenpair, the stationary law pi = v^2 and the induced
 * Markov-additive level chain with its ballot DPs.
 *
 * A schema lists N_{i,j,q}: the number of neighbors in orbit j at modular
 * ratio q seen from a vertex of orbit i. Orbits are 0-based in memory and
 * 1-based in config files and reports.
 */

#include <json.hpp>

#include <deque>
#include <functional>
#include <istream>
#include <map>
#include <sstream>

#include "doob_level_walk.hpp"
#include "mass_transport.hpp"

namespace nonuni {

struct SchemaEntry {
  int i = 0;
  int j = 0;
  Rational q;
  long count = 0;
};

struct OrbitSchema {
  std::string source;
  int orbits = 0;
  std::vector<long> degree;
  std::vector<SchemaEntry> entries;  // one per (i, j, q), count > 0
  // Lattice form of the q values: q = base^step.
  bool lattice = false;
  Rational base{1};

  long count(int i, int j, const Rational& q) const {
    for (const auto& e : entries)
      if (e.i == i && e.j == j && e.q == q) return e.count;
    return 0;
  }

  long step(const Rational& q) const {
    if (q == 1) return 0;
    if (!lattice) throw InvalidArgument("schema q values do not form a lattice");
    auto [root, k] = primitive_root(q < 1 ? Rational(1 / q) : q);
    auto [broot, bk] = primitive_root(base);
    if (root != broot || k % bk != 0) throw InvalidArgument("q = " + q.get_str() + " is not a power of the base");
    return (q < 1 ? -1 : 1) * (k / bk);
  }

  std::string to_config() const {
    std::ostringstream os;
    for (int i = 0; i < orbits; ++i) os << "degree " << i + 1 << ' ' << degree[static_cast<std::size_t>(i)] << '\n';
    for (const auto& e : entries)
      os << e.i + 1 << ' ' << e.j + 1 << ' ' << e.q.get_num().get_str() << ' ' << e.q.get_den().get_str() << ' ' << e.count
         << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json es = nlohmann::json::array();
    for (const auto& e : entries) es.push_back({{"i", e.i + 1}, {"j", e.j + 1}, {"q", e.q.get_str()}, {"count", e.count}});
    return {{"source", source}, {"orbits", orbits}, {"degree", degree}, {"lattice", lattice},
            {"base", base.get_str()}, {"entries", es}};
  }
};

namespace detail {

inline std::string entry_str(int i, int j, const Rational& q) {
  return "N_{" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "," + q.get_str() + "}";
}

inline void finish_schema(OrbitSchema& s) {
  std::map<std::tuple<int, int, Rational>, long> merged;
  for (const auto& e : s.entries) {
    if (e.i < 0 || e.j < 0 || e.i >= s.orbits || e.j >= s.orbits) throw InvalidArgument("orbit index out of range");
    if (e.count < 0) throw InvalidArgument("negative count for " + entry_str(e.i, e.j, e.q));
    if (e.q <= 0) throw InvalidArgument("nonpositive q for " + entry_str(e.i, e.j, e.q));
    merged[{e.i, e.j, e.q}] += e.count;
  }
  s.entries.clear();
  for (const auto& [k, c] : merged)
    if (c > 0) s.entries.push_back({std::get<0>(k), std::get<1>(k), std::get<2>(k), c});
  // Default degrees are the row sums.
  if (s.degree.empty()) {
    s.degree.assign(static_cast<std::size_t>(s.orbits), 0);
    for (const auto& e : s.entries) s.degree[static_cast<std::size_t>(e.i)] += e.count;
  }
  s.lattice = true;
  s.base = 1;
  Rational broot(1);
  long bk = 0;
  for (const auto& e : s.entries) {
    if (e.q == 1) continue;
    auto [root, k] = primitive_root(e.q < 1 ? Rational(1 / e.q) : e.q);
    if (bk == 0) {
      broot = root;
      bk = k;
    } else if (root != broot) {
      s.lattice = false;
    } else {
      bk = std::gcd(bk, k);
    }
  }
  if (bk > 0 && s.lattice) s.base = rpow(broot, bk);
  if (bk == 0) s.lattice = false;
}

}  // namespace detail

// Row sums equal the degrees and N_{i,j,q} = (1/q) N_{j,i,1/q}, exactly.
inline CheckReport check_schema(const OrbitSchema& s) {
  CheckReport rep;
  rep.name = "schema";
  if (s.orbits < 1) rep.fail("schema has no orbits");
  std::vector<long> rows(static_cast<std::size_t>(std::max(s.orbits, 0)), 0);
  for (const auto& e : s.entries) rows[static_cast<std::size_t>(e.i)] += e.count;
  for (int i = 0; i < s.orbits; ++i) {
    ++rep.checked;
    long d = s.degree[static_cast<std::size_t>(i)];
    std::string line = "orbit " + std::to_string(i + 1) + ": counts sum to " + std::to_string(rows[static_cast<std::size_t>(i)]) +
                       ", degree " + std::to_string(d);
    if (rows[static_cast<std::size_t>(i)] == d && d > 0)
      rep.passed.push_back(line);
    else
      rep.fail(line);
  }
  for (const auto& e : s.entries) {
    ++rep.checked;
    Rational inv = 1 / e.q;
    long back = s.count(e.j, e.i, inv);
    Rational rhs = Rational(back) / e.q;
    rhs.canonicalize();
    std::string line = detail::entry_str(e.i, e.j, e.q) + "=" + std::to_string(e.count) + ", (1/q) " +
                       detail::entry_str(e.j, e.i, inv) + "=" + rhs.get_str();
    if (Rational(e.count) == rhs)
      rep.passed.push_back(line);
    else
      rep.fail(line);
  }
  return rep;
}

inline void require_valid(const OrbitSchema& s) {
  auto rep = check_schema(s);
  if (!rep.ok) throw InvariantViolation("inconsistent schema counts: " + rep.witnesses.front());
}

/*
 * Config format, one record per line, '#' starts a comment:
 *   i j q_num q_den count
 *   degree i d          (optional; defaults to the row sum)
 */
inline OrbitSchema parse_schema(std::istream& in, bool validate = true) {
  OrbitSchema s;
  s.source = "config";
  std::map<int, long> degrees;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    auto bad = [&](const std::string& why) {
      return InvalidArgument("schema line " + std::to_string(lineno) + ": " + why);
    };
    std::string extra;
    if (first == "degree") {
      long i = 0, d = 0;
      if (!(ls >> i >> d) || (ls >> extra)) throw bad("expected 'degree i d'");
      if (i < 1 || d < 1) throw bad("degree entries must be positive");
      degrees[static_cast<int>(i - 1)] = d;
      s.orbits = std::max(s.orbits, static_cast<int>(i));
      continue;
    }
    long i = 0, j = 0, count = 0;
    std::string qn, qd;
    try {
      i = std::stol(first);
    } catch (const std::exception&) {
      throw bad("expected an orbit index, got '" + first + "'");
    }
    if (!(ls >> j >> qn >> qd >> count) || (ls >> extra)) throw bad("expected 'i j q_num q_den count'");
    if (i < 1 || j < 1) throw bad("orbit indices start at 1");
    if (count < 0) throw bad("negative count");
    Integer num, den;
    if (num.set_str(qn, 10) != 0 || den.set_str(qd, 10) != 0 || num <= 0 || den <= 0) throw bad("q must be a positive fraction");
    s.entries.push_back({static_cast<int>(i - 1), static_cast<int>(j - 1), frac(num, den), count});
    s.orbits = std::max(s.orbits, static_cast<int>(std::max(i, j)));
  }
  if (!degrees.empty()) {
    s.degree.assign(static_cast<std::size_t>(s.orbits), 0);
    std::vector<long> rows(static_cast<std::size_t>(s.orbits), 0);
    for (const auto& e : s.entries) rows[static_cast<std::size_t>(e.i)] += e.count;
    for (int i = 0; i < s.orbits; ++i) {
      auto it = degrees.find(i);
      s.degree[static_cast<std::size_t>(i)] = it == degrees.end() ? rows[static_cast<std::size_t>(i)] : it->second;
    }
  }
  detail::finish_schema(s);
  if (validate) require_valid(s);
  return s;
}

inline OrbitSchema parse_schema(const std::string& text, bool validate = true) {
  std::istringstream in(text);
  return parse_schema(in, validate);
}

// Any transitive model seen with one orbit.
inline OrbitSchema transitive_schema(const LevelProfile& p) {
  OrbitSchema s;
  s.source = "transitive";
  s.orbits = 1;
  s.degree = {p.degree};
  for (const auto& e : p.entries) s.entries.push_back({0, 0, e.q, e.count});
  detail::finish_schema(s);
  require_valid(s);
  return s;
}

// Two orbits by parity of the lattice level; a step of odd length switches orbit.
inline OrbitSchema parity_schema(const LevelProfile& p) {
  if (p.basis.unimodular || !p.basis.lattice) throw InvalidArgument("parity refinement needs lattice levels");
  OrbitSchema s;
  s.source = "parity";
  s.orbits = 2;
  s.degree = {p.degree, p.degree};
  for (int i = 0; i < 2; ++i)
    for (const auto& e : p.entries) {
      long step = p.basis.lattice_level(e.level);
      int j = static_cast<int>((i + (step % 2 + 2)) % 2);
      s.entries.push_back({i, j, e.q, e.count});
    }
  detail::finish_schema(s);
  require_valid(s);
  return s;
}

/*
 * Schema read off the model from one representative per orbit. orbit_of
 * classifies vertices; representatives are searched by BFS from the root.
 */
inline OrbitSchema schema_from_model(const WalkModel& model, int orbits,
                                     const std::function<int(const VertexCode&)>& orbit_of) {
  if (orbits < 1) throw InvalidArgument("need at least one orbit");
  std::vector<std::optional<VertexCode>> rep(static_cast<std::size_t>(orbits));
  std::deque<std::pair<VertexCode, int>> queue{{model.root(), 0}};
  std::set<VertexCode> seen{model.root()};
  std::vector<VertexCode> nb;
  int found = 0;
  while (!queue.empty() && found < orbits) {
    auto [v, d] = queue.front();
    queue.pop_front();
    int o = orbit_of(v);
    if (o < 0 || o >= orbits) throw InvalidArgument("orbit_of returned an out-of-range index");
    if (!rep[static_cast<std::size_t>(o)]) {
      rep[static_cast<std::size_t>(o)] = v;
      ++found;
    }
    if (d >= 8) continue;
    nb.clear();
    model.neighbors(v, nb);
    for (const auto& w : nb)
      if (seen.insert(w).second) queue.push_back({w, d + 1});
  }
  if (found < orbits) throw InvalidArgument("some orbit has no representative near the root");
  OrbitSchema s;
  s.source = model.name();
  s.orbits = orbits;
  const auto& basis = model.basis();
  for (int i = 0; i < orbits; ++i) {
    const auto& x = *rep[static_cast<std::size_t>(i)];
    nb.clear();
    model.neighbors(x, nb);
    s.degree.push_back(static_cast<long>(nb.size()));
    Level lx = model.level(x);
    for (const auto& y : nb) s.entries.push_back({i, orbit_of(y), basis.ratio(model.level(y) - lx), 1});
  }
  detail::finish_schema(s);
  return s;
}

// Two orbits of the complete free product, by the parity of the tree coordinate.
inline OrbitSchema free_product_schema(const WalkModel& model) {
  if (model.spec().family != Family::FreeProduct) throw InvalidArgument("free_product_schema needs a free product model");
  auto s = schema_from_model(model, 2, [](const VertexCode& v) { return FreeProductModel::type_a(v) ? 0 : 1; });
  s.source = "free-product " + model.name();
  require_valid(s);
  return s;
}

inline OrbitSchema build_orbit_schema(const WalkModel& model, bool parity = false) {
  if (model.spec().family == Family::FreeProduct) return free_product_schema(model);
  if (!model.transitive()) throw InvalidArgument("no orbit schema derivation for " + model.name());
  auto p = neighbor_level_profile(model);
  return parity ? parity_schema(p) : transitive_schema(p);
}

// ---------------------------------------------------------------------------
// The matrix A

/*
 * A finite sum of c_m sqrt(m) over distinct squarefree m. These are linearly
 * independent over Q, so two sums are equal iff their coefficient maps are.
 */
struct RadicalSum {
  std::map<long, Rational> terms;

  void add_sqrt(const Rational& coeff, const Rational& x) {
    // coeff * sqrt(p/s) = (coeff / s) * k * sqrt(m) with p*s = k^2 m
    Integer ps = x.get_num() * x.get_den();
    if (!ps.fits_slong_p()) throw InvalidArgument("radicand too large");
    auto [k, m] = square_split(ps.get_si());
    Rational c = coeff * Rational(k) / Rational(x.get_den());
    c.canonicalize();
    terms[m] += c;
    if (terms[m] == 0) terms.erase(m);
  }
  HighFloat to_high() const {
    HighFloat r = 0;
    for (const auto& [m, c] : terms) r += nonuni::to_high(c) * sqrt(HighFloat(m));
    return r;
  }
  std::string str() const {
    if (terms.empty()) return "0";
    std::string out;
    for (const auto& [m, c] : terms) {
      if (!out.empty()) out += " + ";
      out += m == 1 ? c.get_str() : c.get_str() + "*sqrt(" + std::to_string(m) + ")";
    }
    return out;
  }
  friend bool operator==(const RadicalSum& x, const RadicalSum& y) { return x.terms == y.terms; }
};

struct AMatrix {
  int size = 0;
  std::vector<std::vector<RadicalSum>> exact;  // a(i,j) sqrt(d_i d_j)
  std::vector<std::vector<HighFloat>> value;
  bool symmetric = true;
  std::vector<std::string> asymmetries;

  const HighFloat& operator()(int i, int j) const {
    return value[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
};

// a(i,j) = sum_q N_{i,j,q} sqrt(q) / sqrt(d_i d_j). Throws on asymmetry unless allowed.
inline AMatrix a_matrix(const OrbitSchema& s, bool allow_asymmetric = false) {
  AMatrix A;
  A.size = s.orbits;
  auto L = static_cast<std::size_t>(s.orbits);
  A.exact.assign(L, std::vector<RadicalSum>(L));
  A.value.assign(L, std::vector<HighFloat>(L, HighFloat(0)));
  for (const auto& e : s.entries)
    A.exact[static_cast<std::size_t>(e.i)][static_cast<std::size_t>(e.j)].add_sqrt(Rational(e.count), e.q);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) {
      HighFloat dd = sqrt(HighFloat(s.degree[i]) * HighFloat(s.degree[j]));
      A.value[i][j] = A.exact[i][j].to_high() / dd;
    }
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = i + 1; j < L; ++j)
      if (!(A.exact[i][j] == A.exact[j][i])) {
        A.symmetric = false;
        A.asymmetries.push_back("a(" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ") sqrt(d_i d_j) = " +
                                A.exact[i][j].str() + " but a(" + std::to_string(j + 1) + "," + std::to_string(i + 1) +
                                ") sqrt(d_i d_j) = " + A.exact[j][i].str());
      }
  if (!A.symmetric && !allow_asymmetric) throw InvariantViolation("A is not symmetric: " + A.asymmetries.front());
  return A;
}

struct PerronData {
  std::vector<std::vector<HighFloat>> A;
  HighFloat rho;
  std::vector<HighFloat> v;   // positive, unit l2 norm
  std::vector<HighFloat> pi;  // v_i^2
  HighFloat residual;         // ||A v - rho v||_2
  long iterations = 0;

  nlohmann::json to_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& row : A) {
      nlohmann::json r = nlohmann::json::array();
      for (const auto& x : row) r.push_back(to_string(x, 30));
      a.push_back(r);
    }
    nlohmann::json vj = nlohmann::json::array(), pj = nlohmann::json::array();
    for (const auto& x : v) vj.push_back(to_string(x, 30));
    for (const auto& x : pi) pj.push_back(to_string(x, 30));
    return {{"A", a}, {"rho", to_string(rho, 30)}, {"v", vj}, {"pi", pj}, {"residual", to_string(residual, 6)},
            {"iterations", iterations}};
  }
};

inline bool irreducible(const std::vector<std::vector<HighFloat>>& A) {
  std::size_t L = A.size();
  auto reach = [&](bool transpose) {
    std::vector<bool> seen(L, false);
    std::deque<std::size_t> q{0};
    seen[0] = true;
    while (!q.empty()) {
      auto i = q.front();
      q.pop_front();
      for (std::size_t j = 0; j < L; ++j) {
        const auto& x = transpose ? A[j][i] : A[i][j];
        if (x != 0 && !seen[j]) {
          seen[j] = true;
          q.push_back(j);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
  };
  return L > 0 && reach(false) && reach(true);
}

/*
 * Power iteration on A + I. The shift has the same Perron vector, makes the
 * matrix aperiodic (so period-2 structure needs no special case) and keeps
 * every iterate positive.
 */
inline PerronData perron(const std::vector<std::vector<HighFloat>>& A, double tol = 1e-12, long max_iter = 1000000) {
  if (tol <= 0) throw InvalidArgument("perron tolerance must be positive");
  std::size_t L = A.size();
  for (const auto& row : A) {
    if (row.size() != L) throw InvalidArgument("A must be square");
    for (const auto& x : row)
      if (x < 0) throw InvalidArgument("A has a negative entry");
  }
  if (!irreducible(A)) throw InvalidArgument("A is reducible");
  PerronData p;
  p.A = A;
  std::vector<HighFloat> v(L, HighFloat(1) / sqrt(HighFloat(static_cast<long>(L)))), w(L);
  auto apply = [&](const std::vector<HighFloat>& x, std::vector<HighFloat>& y) {
    for (std::size_t i = 0; i < L; ++i) {
      y[i] = 0;
      for (std::size_t j = 0; j < L; ++j) y[i] += A[i][j] * x[j];
    }
  };
  HighFloat tolh(tol);
  // Iterate well past tol so the reported residual has margin.
  HighFloat target = tolh * HighFloat("1e-20");
  for (p.iterations = 1; p.iterations <= max_iter; ++p.iterations) {
    apply(v, w);
    HighFloat rq = 0, norm = 0;
    for (std::size_t i = 0; i < L; ++i) rq += v[i] * w[i];
    HighFloat res = 0;
    for (std::size_t i = 0; i < L; ++i) res += (w[i] - rq * v[i]) * (w[i] - rq * v[i]);
    res = sqrt(res);
    p.rho = rq;
    p.residual = res;
    if (res <= target) break;
    for (std::size_t i = 0; i < L; ++i) {
      w[i] += v[i];
      norm += w[i] * w[i];
    }
    norm = sqrt(norm);
    for (std::size_t i = 0; i < L; ++i) v[i] = w[i] / norm;
  }
  if (p.residual > tolh) throw Error("power iteration did not converge");
  p.iterations = std::min(p.iterations, max_iter);
  p.v = v;
  for (const auto& x : v) {
    if (x <= 0) throw InvariantViolation("Perron vector is not positive");
    p.pi.push_back(x * x);
  }
  return p;
}

inline PerronData perron(const AMatrix& A, double tol = 1e-12) { return perron(A.value, tol); }

/*
 * Stationarity sum_i pi_i P_h(i,j) = pi_j and row sums of P_h, with
 * P_h(i,j) = a(i,j) v_j / (rho v_i); then E[log Delta(S_0,S_1)] = 0 by
 * numeric summation and by exact cancellation of each term t_{i,j,q}
 * against t_{j,i,1/q}.
 */
inline CheckReport stationary_and_mean_checks(const OrbitSchema& s, const PerronData& p, double tol = 1e-10) {
  CheckReport rep;
  rep.name = "stationary-mean";
  auto L = static_cast<std::size_t>(s.orbits);
  if (p.v.size() != L) throw InvalidArgument("Perron data does not match the schema");
  HighFloat tolh(tol);
  auto P = [&](std::size_t i, std::size_t j) { return p.A[i][j] * p.v[j] / (p.rho * p.v[i]); };
  for (std::size_t i = 0; i < L; ++i) {
    ++rep.checked;
    HighFloat row = 0;
    for (std::size_t j = 0; j < L; ++j) row += P(i, j);
    std::string line = "row " + std::to_string(i + 1) + " of P_h sums to 1 within " + to_string(abs(row - 1), 3);
    if (abs(row - 1) <= tolh)
      rep.passed.push_back(line);
    else
      rep.fail(line);
  }
  for (std::size_t j = 0; j < L; ++j) {
    ++rep.checked;
    HighFloat lhs = 0;
    for (std::size_t i = 0; i < L; ++i) lhs += p.pi[i] * P(i, j);
    HighFloat r = abs(lhs - p.pi[j]);
    std::string line = "stationarity at orbit " + std::to_string(j + 1) + ": residual " + to_string(r, 3);
    if (r <= tolh)
      rep.passed.push_back(line);
    else
      rep.fail(line);
  }
  // Mean increment, numerically.
  HighFloat mean = 0;
  for (const auto& e : s.entries) {
    auto i = static_cast<std::size_t>(e.i), j = static_cast<std::size_t>(e.j);
    HighFloat term = p.v[i] * p.v[j] * HighFloat(e.count) * sqrt(to_high(e.q)) /
                     (p.rho * sqrt(HighFloat(s.degree[i]) * HighFloat(s.degree[j])));
    mean += term * log(to_high(e.q));
  }
  ++rep.checked;
  std::string mline = "E[log Delta(S_0,S_1)] = " + to_string(mean, 6);
  if (abs(mean) <= tolh)
    rep.passed.push_back(mline);
  else
    rep.fail(mline);
  // t_{i,j,q} + t_{j,i,1/q} = 0 iff N_{i,j,q} sqrt(q) = N_{j,i,1/q} sqrt(1/q).
  for (const auto& e : s.entries) {
    if (e.q < 1 || (e.q == 1 && e.i > e.j)) continue;
    ++rep.checked;
    Rational inv = 1 / e.q;
    long back = s.count(e.j, e.i, inv);
    RadicalSum lhs, rhs;
    lhs.add_sqrt(Rational(e.count), e.q);
    rhs.add_sqrt(Rational(back), inv);
    std::string line = "t" + detail::entry_str(e.i, e.j, e.q).substr(1) + " + t" + detail::entry_str(e.j, e.i, inv).substr(1);
    if (e.q == 1) {
      rep.passed.push_back(line + ": log q = 0");
    } else if (lhs == rhs) {
      rep.passed.push_back(line + " cancel: " + lhs.str() + " log q each");
    } else {
      rep.fail(line + " do not cancel: " + lhs.str() + " vs " + rhs.str());
    }
  }
  for (const auto& e : s.entries)
    if (e.q < 1 && s.count(e.j, e.i, 1 / e.q) == 0) {
      ++rep.checked;
      rep.fail("t" + detail::entry_str(e.i, e.j, e.q).substr(1) + " has no partner term");
    }
  return rep;
}

// ---------------------------------------------------------------------------
// Induced Markov-additive chain on Omega = {(i, j, q) : N_{i,j,q} > 0}

struct ChainState {
  int i = 0;
  int j = 0;
  Rational q;
  long step = 0;  // lattice exponent of q
};

/*
 * When all degrees agree, every weight N_{i,j,q} sqrt(q) = sqrt(N_{i,j,q}
 * N_{j,i,1/q}) lies in Z[sqrt D] for one D, and A has constant row sums W/d,
 * the Perron vector is uniform and rho = W/d exactly. Path probabilities are
 * then (product of weights) / (L W^n) and the DPs run exactly.
 */
struct MarkovAdditiveChain {
  OrbitSchema schema;
  PerronData perron;
  std::vector<ChainState> states;
  std::vector<HighFloat> initial;             // P[xi_1 = state]
  std::vector<std::vector<HighFloat>> P;      // state -> state
  std::vector<QuadInteger> weight;            // per state, exact mode only
  long t0 = 0;
  bool exact = false;
  long D = 1;
  QuadInteger W;
  HighFloat max_row_error = 0;
  bool irreducible = false;

  QuadNumber total_exact() const { return QuadNumber(Rational(W.a), Rational(W.b), D); }

  nlohmann::json to_json() const {
    nlohmann::json st = nlohmann::json::array();
    for (std::size_t s = 0; s < states.size(); ++s)
      st.push_back({{"i", states[s].i + 1}, {"j", states[s].j + 1}, {"q", states[s].q.get_str()}, {"step", states[s].step},
                    {"initial", to_string(initial[s], 30)}});
    return {{"states", st}, {"t0", t0}, {"exact", exact}, {"max_row_error", to_string(max_row_error, 3)},
            {"irreducible", irreducible}};
  }
};

inline MarkovAdditiveChain induced_chain(const OrbitSchema& s, const PerronData& p) {
  if (!s.lattice) throw InvalidArgument("induced chain needs lattice q values");
  MarkovAdditiveChain c;
  c.schema = s;
  c.perron = p;
  for (const auto& e : s.entries) {
    c.states.push_back({e.i, e.j, e.q, s.step(e.q)});
    c.t0 = std::max(c.t0, c.states.back().step);
  }
  if (c.t0 <= 0) throw InvalidArgument("schema has no q > 1");
  std::size_t n = c.states.size();
  auto a_q = [&](int i, int j, const Rational& q, long count) {
    return HighFloat(count) * sqrt(to_high(q)) /
           sqrt(HighFloat(s.degree[static_cast<std::size_t>(i)]) * HighFloat(s.degree[static_cast<std::size_t>(j)]));
  };
  HighFloat mass = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& e = s.entries[k];
    c.initial.push_back(a_q(e.i, e.j, e.q, e.count) * p.v[static_cast<std::size_t>(e.i)] *
                        p.v[static_cast<std::size_t>(e.j)] / p.rho);
    mass += c.initial.back();
  }
  c.max_row_error = abs(mass - 1);
  c.P.assign(n, std::vector<HighFloat>(n, HighFloat(0)));
  for (std::size_t a = 0; a < n; ++a) {
    HighFloat row = 0;
    int from = c.states[a].j;
    for (std::size_t b = 0; b < n; ++b) {
      const auto& e = s.entries[b];
      if (e.i != from) continue;
      c.P[a][b] = a_q(e.i, e.j, e.q, e.count) * p.v[static_cast<std::size_t>(e.j)] /
                  (p.rho * p.v[static_cast<std::size_t>(from)]);
      row += c.P[a][b];
    }
    HighFloat err = abs(row - 1);
    if (err > c.max_row_error) c.max_row_error = err;
  }
  if (c.max_row_error > HighFloat("1e-10")) throw InvariantViolation("induced chain rows are not stochastic");
  // Irreducible on its support: every state reaches every other.
  c.irreducible = irreducible(c.P);

  // Exact form.
  bool same_degree = std::all_of(s.degree.begin(), s.degree.end(), [&](long d) { return d == s.degree[0]; });
  c.exact = same_degree;
  std::vector<QuadInteger> rows(static_cast<std::size_t>(s.orbits));
  for (const auto& e : s.entries) {
    if (!c.exact) break;
    long back = s.count(e.j, e.i, 1 / e.q);
    auto [k, m] = square_split(e.count * back);
    if (m != 1 && c.D != 1 && c.D != m) c.exact = false;
    if (m != 1) c.D = m;
    QuadInteger w = m == 1 ? QuadInteger(Integer(k), Integer(0)) : QuadInteger(Integer(0), Integer(k));
    c.weight.push_back(w);
    auto& r = rows[static_cast<std::size_t>(e.i)];
    r.a += w.a;
    r.b += w.b;
  }
  if (c.exact)
    for (const auto& r : rows) c.exact = c.exact && r == rows[0];
  if (c.exact) c.W = rows[0];
  else c.weight.clear();
  return c;
}

// ---------------------------------------------------------------------------
// Markov ballot DPs

/*
 * A probability over the induced chain. Exact values are weight / (L W^steps)
 * with weight summed over start and end orbits.
 */
struct MarkovValue {
  bool exact = false;
  QuadInteger weight;
  int steps = 0;
  HighFloat value;

  QuadNumber exact_value(const MarkovAdditiveChain& c) const {
    if (!exact) throw InvalidArgument("value was computed in float mode");
    QuadNumber w(Rational(weight.a), Rational(weight.b), c.D);
    return w / (QuadNumber(Rational(c.schema.orbits)) * c.total_exact().pow(static_cast<unsigned>(steps)));
  }
};

namespace detail {

/*
 * The DPs run over (current orbit, level). Transitions out of a state of Omega
 * depend only on its orbit j, so this lumping carries the same law as the
 * DP over Omega itself.
 */
struct MarkovExactOps {
  using V = QuadInteger;
  const MarkovAdditiveChain* c;
  static bool zero(const V& x) { return x.is_zero(); }
  static void clear(V& x) {
    x.a = 0;
    x.b = 0;
  }
  static void add(V& acc, const V& x) {
    acc.a += x.a;
    acc.b += x.b;
  }
  V start(int) const { return V(1); }
  void mul_add(V& acc, std::size_t t, const V& x) const { acc.add_mul(c->weight[t], x, c->D); }
  MarkovValue finish(const V& x, int steps) const {
    MarkovValue m;
    m.exact = true;
    m.weight = x;
    m.steps = steps;
    m.value = m.exact_value(*c).to_high();
    return m;
  }
};

struct MarkovFloatOps {
  using V = long double;
  const MarkovAdditiveChain* c;
  std::vector<long double> p;  // per state: P(orbit e.i -> state)
  explicit MarkovFloatOps(const MarkovAdditiveChain* ch) : c(ch) {
    for (const auto& e : ch->schema.entries) {
      const auto& s = ch->schema;
      HighFloat a = HighFloat(e.count) * sqrt(to_high(e.q)) /
                    sqrt(HighFloat(s.degree[static_cast<std::size_t>(e.i)]) * HighFloat(s.degree[static_cast<std::size_t>(e.j)]));
      HighFloat pr = a * ch->perron.v[static_cast<std::size_t>(e.j)] / (ch->perron.rho * ch->perron.v[static_cast<std::size_t>(e.i)]);
      p.push_back(static_cast<long double>(to_double(pr)));
    }
  }
  static bool zero(V x) { return x == 0; }
  static void clear(V& x) { x = 0; }
  static void add(V& acc, V x) { acc += x; }
  V start(int i) const { return static_cast<long double>(to_double(c->perron.pi[static_cast<std::size_t>(i)])); }
  void mul_add(V& acc, std::size_t t, V x) const { acc += p[t] * x; }
  MarkovValue finish(V x, int steps) const {
    MarkovValue m;
    m.steps = steps;
    m.value = HighFloat(static_cast<double>(x));
    return m;
  }
};

// Dense array over positions [lo, hi] x orbits.
template <class V>
struct OrbitRow {
  long lo = 0;
  long width = 0;
  int L = 1;
  std::vector<V> v;
  V& at(long p, int o) { return v[static_cast<std::size_t>((p - lo) * L + o)]; }
  long hi() const { return lo + width - 1; }
  bool has(long p) const { return p >= lo && p <= hi(); }
};

template <class Ops>
OrbitRow<typename Ops::V> orbit_start(const Ops& ops) {
  OrbitRow<typename Ops::V> r;
  r.L = ops.c->schema.orbits;
  r.lo = 0;
  r.width = 1;
  r.v.resize(static_cast<std::size_t>(r.L));
  for (int o = 0; o < r.L; ++o) r.v[static_cast<std::size_t>(o)] = ops.start(o);
  return r;
}

template <class Ops>
void orbit_spread(const Ops& ops, const OrbitRow<typename Ops::V>& cur, OrbitRow<typename Ops::V>& nxt, long lo, long hi,
                  const std::function<bool(long)>& keep) {
  const auto& states = ops.c->states;
  nxt.L = cur.L;
  nxt.lo = lo;
  nxt.width = std::max(0L, hi - lo + 1);
  nxt.v.resize(static_cast<std::size_t>(nxt.width * nxt.L));
  for (auto& x : nxt.v) Ops::clear(x);
  for (long i = 0; i < cur.width; ++i) {
    long p = cur.lo + i;
    for (int o = 0; o < cur.L; ++o) {
      const auto& x = cur.v[static_cast<std::size_t>(i * cur.L + o)];
      if (Ops::zero(x)) continue;
      for (std::size_t t = 0; t < states.size(); ++t) {
        if (states[t].i != o) continue;
        long q = p + states[t].step;
        if (q < lo || q > hi || !keep(q)) continue;
        ops.mul_add(nxt.at(q, states[t].j), t, x);
      }
    }
  }
}

template <class Ops>
typename Ops::V orbit_sum(OrbitRow<typename Ops::V>& r, long lo, long hi) {
  typename Ops::V out(0);
  for (long p = std::max(lo, r.lo); p <= std::min(hi, r.hi()); ++p)
    for (int o = 0; o < r.L; ++o) Ops::add(out, r.at(p, o));
  return out;
}

template <class Ops>
typename Ops::V markov_ballot_dp(const Ops& ops, int n, long r) {
  long t0 = ops.c->t0;
  long wlo = r * t0, whi = (r + 1) * t0 - 1;
  auto cur = orbit_start(ops);
  decltype(cur) nxt;
  for (int k = 1; k <= n; ++k) {
    long lo = k < n ? 1 : wlo;
    long hi = std::min(static_cast<long>(k) * t0, whi + static_cast<long>(n - k) * t0);
    if (lo > hi) return typename Ops::V(0);
    orbit_spread(ops, cur, nxt, lo, hi, [](long) { return true; });
    std::swap(cur, nxt);
  }
  return orbit_sum<Ops>(cur, wlo, whi);
}

template <class Ops>
std::vector<typename Ops::V> markov_hitting_dp(const Ops& ops, long r, int n_max) {
  using V = typename Ops::V;
  long t0 = ops.c->t0, bar = r * t0;
  std::vector<V> out(static_cast<std::size_t>(n_max) + 1, V(0));
  auto cur = orbit_start(ops);
  decltype(cur) nxt;
  for (int k = 1; k <= n_max; ++k) {
    long lo = std::max(-static_cast<long>(k) * t0, bar - static_cast<long>(n_max - k + 1) * t0);
    orbit_spread(ops, cur, nxt, lo, bar + t0, [](long) { return true; });
    for (long p = std::max(bar, nxt.lo); p <= nxt.hi(); ++p)
      for (int o = 0; o < nxt.L; ++o) {
        Ops::add(out[static_cast<std::size_t>(k)], nxt.at(p, o));
        Ops::clear(nxt.at(p, o));
      }
    std::swap(cur, nxt);
  }
  return out;
}

template <class Ops>
typename Ops::V markov_max_return_dp(const Ops& ops, int n, long r) {
  using V = typename Ops::V;
  const auto& states = ops.c->states;
  long t0 = ops.c->t0;
  long wlo = r * t0, kill = (r + 1) * t0;
  auto below = orbit_start(ops);
  auto in = below;
  if (r == 0) {
    for (auto& x : below.v) Ops::clear(x);
  } else {
    for (auto& x : in.v) Ops::clear(x);
  }
  decltype(below) nb, ni;
  for (int k = 1; k <= n; ++k) {
    long rest = static_cast<long>(n - k) * t0;
    long lo = std::max(-static_cast<long>(k) * t0, -rest);
    long hi = std::min(kill - 1, rest);
    if (lo > hi) return V(0);
    orbit_spread(ops, below, nb, lo, std::min(hi, wlo - 1), [&](long q) { return (wlo - q) + wlo <= rest; });
    orbit_spread(ops, in, ni, lo, hi, [](long) { return true; });
    for (long i = 0; i < below.width; ++i) {
      long p = below.lo + i;
      for (int o = 0; o < below.L; ++o) {
        const auto& x = below.v[static_cast<std::size_t>(i * below.L + o)];
        if (Ops::zero(x)) continue;
        for (std::size_t t = 0; t < states.size(); ++t) {
          if (states[t].i != o) continue;
          long q = p + states[t].step;
          if (q >= wlo && q >= lo && q <= hi) ops.mul_add(ni.at(q, states[t].j), t, x);
        }
      }
    }
    std::swap(below, nb);
    std::swap(in, ni);
  }
  return orbit_sum<Ops>(in, 0, 0);
}

template <class Ops>
std::vector<typename Ops::V> markov_return_dp(const Ops& ops, int n_max) {
  long t0 = ops.c->t0;
  auto cur = orbit_start(ops);
  decltype(cur) nxt;
  std::vector<typename Ops::V> out{orbit_sum<Ops>(cur, 0, 0)};
  for (int k = 1; k <= n_max; ++k) {
    long reach = std::min(static_cast<long>(k), static_cast<long>(n_max - k)) * t0;
    orbit_spread(ops, cur, nxt, -reach, reach, [](long) { return true; });
    std::swap(cur, nxt);
    out.push_back(orbit_sum<Ops>(cur, 0, 0));
  }
  return out;
}

template <class F>
auto with_markov_ops(const MarkovAdditiveChain& c, Arithmetic mode, F&& f) {
  if (mode == Arithmetic::Exact) {
    if (!c.exact) throw InvalidArgument("schema has no exact form; use float mode");
    return f(MarkovExactOps{&c});
  }
  return f(MarkovFloatOps(&c));
}

}  // namespace detail

// P[Y_j > 0 for 1 <= j < n, Y_n in [r t0, (r+1) t0)] for the stationary chain.
inline MarkovValue markov_ballot(const MarkovAdditiveChain& c, int n, long r, Arithmetic mode = Arithmetic::Exact) {
  if (n < 1 || r < 0) throw InvalidArgument("ballot needs n >= 1 and r >= 0");
  return detail::with_markov_ops(c, mode, [&](const auto& ops) { return ops.finish(detail::markov_ballot_dp(ops, n, r), n); });
}

// P[tau_r = k] for k = 0..n_max.
inline std::vector<MarkovValue> markov_hitting_law(const MarkovAdditiveChain& c, long r, int n_max,
                                                   Arithmetic mode = Arithmetic::Exact) {
  if (r < 1 || n_max < 0) throw InvalidArgument("hitting time needs r >= 1 and n_max >= 0");
  return detail::with_markov_ops(c, mode, [&](const auto& ops) {
    std::vector<MarkovValue> out;
    auto v = detail::markov_hitting_dp(ops, r, n_max);
    for (int k = 0; k <= n_max; ++k) out.push_back(ops.finish(v[static_cast<std::size_t>(k)], k));
    return out;
  });
}

// P[max_{j <= n} Y_j in [r t0, (r+1) t0), Y_n = 0].
inline MarkovValue markov_max_and_return(const MarkovAdditiveChain& c, int n, long r, Arithmetic mode = Arithmetic::Exact) {
  if (n < 0 || r < 0) throw InvalidArgument("max_and_return needs n >= 0 and r >= 0");
  return detail::with_markov_ops(c, mode,
                                 [&](const auto& ops) { return ops.finish(detail::markov_max_return_dp(ops, n, r), n); });
}

inline std::vector<MarkovValue> markov_return_law(const MarkovAdditiveChain& c, int n_max,
                                                  Arithmetic mode = Arithmetic::Exact) {
  return detail::with_markov_ops(c, mode, [&](const auto& ops) {
    std::vector<MarkovValue> out;
    auto v = detail::markov_return_dp(ops, n_max);
    for (int k = 0; k <= n_max; ++k) out.push_back(ops.finish(v[static_cast<std::size_t>(k)], k));
    return out;
  });
}

// Float-mode sup of the normalized ratios over n_grid x r_grid, as for the level walk.
inline BoundScan markov_bound_scan(const MarkovAdditiveChain& c, const std::vector<int>& n_grid,
                                   const std::vector<long>& r_grid) {
  BoundScan s;
  int n_top = 0;
  for (int n : n_grid) n_top = std::max(n_top, n);
  double logb = std::log(to_double(to_high(c.schema.base)));
  for (int n : n_grid) {
    double n32 = std::pow(static_cast<double>(n), 1.5);
    double assembled = 0;
    for (long r : r_grid) {
      double rr = static_cast<double>(std::max(r, 1L));
      double b = to_double(markov_ballot(c, n, r, Arithmetic::Float).value);
      double m = to_double(markov_max_and_return(c, n, r, Arithmetic::Float).value);
      s.ballot_sup = std::max(s.ballot_sup, b * n32 / rr);
      double ratio = m * n32 / std::pow(rr, 1.5);
      s.max_return_sup = std::max(s.max_return_sup, ratio);
      s.max_return_rows.emplace_back(n, r, m, ratio);
      assembled += m * std::exp(-static_cast<double>(r * c.t0) * logb);
      s.positive = s.positive && b >= 0 && m >= 0;
    }
    s.assembled_rows.emplace_back(n, assembled * n32);
    s.assembled_sup = std::max(s.assembled_sup, assembled * n32);
  }
  for (long r : r_grid) {
    if (r < 1) continue;
    auto h = markov_hitting_law(c, r, n_top, Arithmetic::Float);
    for (int k : n_grid) {
      double v = to_double(h[static_cast<std::size_t>(k)].value);
      s.hitting_sup = std::max(s.hitting_sup, v * std::pow(static_cast<double>(k), 1.5) / static_cast<double>(r));
    }
  }
  return s;
}

// Everything the quasi subcommand reports for one schema.
struct QuasiReport {
  OrbitSchema schema;
  CheckReport schema_check;
  AMatrix A;
  PerronData perron;
  CheckReport stationary;
  MarkovAdditiveChain chain;
  bool has_chain = false;

  bool ok() const { return schema_check.ok && A.symmetric && stationary.ok; }

  nlohmann::json to_json() const {
    nlohmann::json j{{"schema", schema.to_json()},      {"schema_check", schema_check.to_json()},
                     {"symmetric", A.symmetric},        {"perron", perron.to_json()},
                     {"stationary_mean", stationary.to_json()}, {"status", ok() ? "pass" : "fail"}};
    if (has_chain) j["induced_chain"] = chain.to_json();
    return j;
  }
};

inline QuasiReport analyze_schema(const OrbitSchema& s, double tol = 1e-12) {
  QuasiReport q;
  q.schema = s;
  q.schema_check = check_schema(s);
  q.A = a_matrix(s, true);
  q.perron = perron(q.A, tol);
  q.stationary = stationary_and_mean_checks(s, q.perron);
  if (s.lattice && q.ok()) {
    q.chain = induced_chain(s, q.perron);
    q.has_chain = true;
  }
  return q;
}

}  // namespace nonuni
