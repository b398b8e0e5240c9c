#pragma once

// Modular-function identities and the mass-transport principle, checked
// exactly on neighbor profiles and explicit balls.

#include <json.hpp>

#include <deque>
#include <random>
#include <set>

#include "graph_models.hpp"

namespace nonuni {

struct CheckReport {
  std::string name;
  bool ok = true;
  long checked = 0;
  std::vector<std::string> passed;     // one line per verified item
  std::vector<std::string> witnesses;  // one line per failure

  void fail(std::string w) {
    ok = false;
    if (witnesses.size() < 50) witnesses.push_back(std::move(w));
  }

  nlohmann::json to_json() const {
    return {{"check", name}, {"status", ok ? "pass" : "fail"}, {"checked", checked},
            {"items", passed}, {"witnesses", witnesses}};
  }
};

inline std::string level_str(const LevelBasis& basis, Level l) {
  if (basis.unimodular || basis.lattice) return std::to_string(basis.lattice_level(l));
  return "(" + std::to_string(l.a) + "," + std::to_string(l.b) + ")";
}

// t_{1/q} = q t_q for every q in B, and B_- = {1/q : q in B_+}.
inline CheckReport check_neighbor_mtp(const LevelProfile& p) {
  CheckReport rep;
  rep.name = "neighbor-mtp";
  for (const auto& e : p.entries) {
    ++rep.checked;
    Rational inv = 1 / e.q;
    long back = p.count_at(inv);
    if (back == 0) {
      rep.fail("q=" + e.q.get_str() + ": 1/q is not in B");
      continue;
    }
    if (e.q < 1) continue;  // checked from the partner
    Rational lhs(back), rhs = e.q * Rational(e.count);
    std::string line = "q=" + e.q.get_str() + ": t_{1/q}=" + std::to_string(back) + ", q*t_q=" + rhs.get_str();
    if (lhs == rhs)
      rep.passed.push_back(line);
    else
      rep.fail(line);
  }
  if (p.total() != p.degree) rep.fail("counts sum to " + std::to_string(p.total()) + ", degree " + std::to_string(p.degree));
  return rep;
}

namespace detail {

// Modular function across one edge from stabilizer orbit sizes,
// Delta(x,y) = |Gamma_y x| / |Gamma_x y|, where the orbit of y under the
// stabilizer of x is the set of neighbors of x in the same level class.
// Both endpoints need complete neighbor lists.
inline Rational edge_delta(const ExplicitGraph& g, int x, int y) {
  auto lx = g.level[static_cast<std::size_t>(x)], ly = g.level[static_cast<std::size_t>(y)];
  long at_x = 0, at_y = 0;
  for (int w : g.adj[static_cast<std::size_t>(x)]) at_x += g.level[static_cast<std::size_t>(w)] == ly;
  for (int w : g.adj[static_cast<std::size_t>(y)]) at_y += g.level[static_cast<std::size_t>(w)] == lx;
  return frac(at_y, at_x);
}

// Delta along a shortest path from x to y through vertices with complete
// neighbor lists (distance < radius from the root).
inline Rational path_delta(const ExplicitGraph& g, int x, int y) {
  std::vector<int> parent(g.size(), -2);
  std::deque<int> q{x};
  parent[static_cast<std::size_t>(x)] = -1;
  while (!q.empty() && parent[static_cast<std::size_t>(y)] == -2) {
    int v = q.front();
    q.pop_front();
    for (int w : g.adj[static_cast<std::size_t>(v)]) {
      if (parent[static_cast<std::size_t>(w)] != -2 || g.dist[static_cast<std::size_t>(w)] >= g.radius) continue;
      parent[static_cast<std::size_t>(w)] = v;
      q.push_back(w);
    }
  }
  if (parent[static_cast<std::size_t>(y)] == -2) throw InvalidArgument("no interior path between sampled vertices");
  Rational d = 1;
  for (int v = y; parent[static_cast<std::size_t>(v)] >= 0; v = parent[static_cast<std::size_t>(v)])
    d *= edge_delta(g, parent[static_cast<std::size_t>(v)], v);
  return d;
}

}  // namespace detail

/*
 * Samples vertex triples among the vertices with complete neighbor lists and
 * checks, exactly,
 *   Delta(x,y) Delta(y,z) = Delta(x,z)
 * with Delta taken as the product of orbit-size ratios along shortest paths,
 * and that each Delta equals the ratio of the level labels. A label that
 * disagrees with the orbit structure shows up as a witness triple.
 */
inline CheckReport check_cocycle(const ExplicitGraph& g, long triples, std::uint64_t seed) {
  if (triples < 0) throw InvalidArgument("triples must be >= 0");
  if (g.radius < 1) throw InvalidArgument("cocycle check needs a ball of radius >= 1");
  CheckReport rep;
  rep.name = "cocycle";
  std::vector<int> interior;
  for (std::size_t v = 0; v < g.size(); ++v)
    if (g.dist[v] < g.radius) interior.push_back(static_cast<int>(v));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, interior.size() - 1);
  for (long t = 0; t < triples; ++t) {
    int x = interior[pick(rng)], y = interior[pick(rng)], z = interior[pick(rng)];
    ++rep.checked;
    Rational dxy = detail::path_delta(g, x, y), dyz = detail::path_delta(g, y, z), dxz = detail::path_delta(g, x, z);
    std::string tag = "(" + std::to_string(x) + "," + std::to_string(y) + "," + std::to_string(z) + ")";
    if (dxy * dyz != dxz) {
      rep.fail("triple " + tag + ": Delta(x,y)Delta(y,z)=" + Rational(dxy * dyz).get_str() + " but Delta(x,z)=" + dxz.get_str());
      continue;
    }
    auto lab = [&](int a, int b) {
      return g.basis.ratio(g.level[static_cast<std::size_t>(b)] - g.level[static_cast<std::size_t>(a)]);
    };
    if (lab(x, y) != dxy || lab(y, z) != dyz || lab(x, z) != dxz)
      rep.fail("triple " + tag + ": level labels disagree with orbit-size ratios");
  }
  if (rep.ok) rep.passed.push_back(std::to_string(triples) + " triples, seed " + std::to_string(seed));
  return rep;
}

struct MtpRow {
  int distance = 0;
  Level level;
  Rational lhs;  // sum_v f(x,v)
  Rational rhs;  // sum_v f(v,x) Delta(x,v)
  Rational residual() const { return lhs - rhs; }
};

struct ResidualReport {
  bool ok = true;
  int support_radius = 0;
  std::vector<MtpRow> rows;  // the last row (distance -1) is the sum of all indicators
  LevelBasis basis;

  nlohmann::json to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows)
      rs.push_back({{"distance", r.distance}, {"level_diff", level_str(basis, r.level)}, {"lhs", r.lhs.get_str()},
                    {"rhs", r.rhs.get_str()}, {"residual", r.residual().get_str()}});
    return {{"check", "mtp"}, {"status", ok ? "pass" : "fail"}, {"support_radius", support_radius}, {"rows", rs}};
  }
};

/*
 * Both sides of sum_v f(x,v) = sum_v f(v,x) Delta(x,v) at x = root, for the
 * indicator test functions f(x,v) = 1{d(x,v) = k, level(v) - level(x) = j}
 * with k <= support_radius, plus f = 0 and the sum of all indicators.
 * Every pair (k, j) seen in the ball, and its mirror (k, -j), is tested.
 */
inline ResidualReport check_mtp(const ExplicitGraph& g, int support_radius) {
  if (support_radius < 0) throw InvalidArgument("support radius must be >= 0");
  if (support_radius + 1 > g.radius)
    throw InvalidArgument("incomplete ball: support radius " + std::to_string(support_radius) + " needs radius >= " +
                          std::to_string(support_radius + 1));
  std::map<std::pair<int, Level>, long> count;
  for (std::size_t v = 0; v < g.size(); ++v)
    if (g.dist[v] <= support_radius) count[{g.dist[v], g.level[v]}] += 1;
  std::set<std::pair<int, Level>> keys;
  for (const auto& [k, c] : count) {
    keys.insert(k);
    keys.insert({k.first, Level{} - k.second});
  }
  ResidualReport rep;
  rep.support_radius = support_radius;
  rep.basis = g.basis;
  rep.rows.push_back({0, Level{}, Rational(0), Rational(0)});  // f = 0
  MtpRow all{-1, Level{}, Rational(0), Rational(0)};
  for (const auto& key : keys) {
    auto [k, j] = key;
    auto it = count.find(key);
    auto mirror = count.find({k, Level{} - j});
    MtpRow r{k, j, Rational(it == count.end() ? 0 : it->second), Rational(0)};
    // f(v,o) = 1 iff level(o) - level(v) = j, i.e. level(v) = -j; Delta(o,v) = ratio(-j).
    if (mirror != count.end()) r.rhs = Rational(mirror->second) * g.basis.ratio(Level{} - j);
    all.lhs += r.lhs;
    all.rhs += r.rhs;
    rep.rows.push_back(r);
  }
  rep.rows.push_back(all);
  for (const auto& r : rep.rows) rep.ok = rep.ok && r.residual() == 0;
  return rep;
}

}  // namespace nonuni
