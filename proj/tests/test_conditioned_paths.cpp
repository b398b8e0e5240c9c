#include <gtest/gtest.h>

#include <cmath>

#include "nonuni/conditioned_paths.hpp"

using namespace nonuni;

namespace {

struct Fixture {
  ModelPtr model;
  CollapsedChain chain;
  ProbabilitySeries u, f;
};

Fixture setup(const char* spec, int n) {
  auto m = build_model(spec);
  auto c = collapse(*m, n);
  auto u = return_series(*m, n);
  auto f = first_return_probabilities(u);
  return Fixture{std::move(m), std::move(c), std::move(u), std::move(f)};
}

}  // namespace

TEST(BridgeVisits, FieldExtensionTwoSteps) {
  auto x = setup("fixed-end-tree(b=2)", 2);
  // Both 2-step closed walks stay in [0, t0): the root and the level-1 neighbor
  // are visited, and each bridge spends the whole time in window 0.
  auto t = bridge_tables(x.chain, 2);
  EXPECT_EQ(t.t0, 1);
  EXPECT_TRUE(bridge_normalization(t));
  Rational total = 0;
  for (long k = -2; k <= 2; ++k) total += bridge_level_visits(t, k);
  EXPECT_EQ(total, Rational(3));
  EXPECT_EQ(bridge_level_visits(x.chain, x.u, 2, 0), Rational(2));
}

TEST(BridgeVisits, SumOverWindowsIsPathLength) {
  for (const char* spec : {"fixed-end-tree(b=2)", "grandparent(b=2)", "tree(b=2)"}) {
    auto x = setup(spec, 16);
    auto t = bridge_tables(x.chain, 16);
    EXPECT_TRUE(bridge_normalization(t)) << spec;
    Rational total = 0;
    for (long k = -20; k <= 20; ++k) total += bridge_level_visits(t, k);
    EXPECT_EQ(total, Rational(17)) << spec;
  }
}

TEST(BridgeVisits, UnimodularAllInWindowZero) {
  auto x = setup("tree(b=2)", 10);
  EXPECT_EQ(bridge_level_visits(x.chain, x.u, 10, 0), Rational(11));
  EXPECT_EQ(bridge_level_visits(x.chain, x.u, 10, 1), Rational(0));
}

TEST(BridgeVisits, OddLengthOnBipartiteRejected) {
  auto x = setup("tree(b=2)", 5);
  EXPECT_THROW(bridge_level_visits(x.chain, x.u, 5, 0), InvalidArgument);
}

TEST(BridgeVisits, MatchesBallEnumeration) {
  // Oracle: enumerate every closed walk of length 8 on the explicit ball.
  auto m = build_model("fixed-end-tree(b=2)");
  int n = 8;
  auto g = enumerate_ball(*m, n / 2 + 1);
  auto c = collapse(*m, n);
  auto t = bridge_tables(c, n);
  std::map<long, Integer> visits;
  Integer closed = 0;
  std::vector<int> path{g.root()};
  auto rec = [&](auto&& self, int depth) -> void {
    if (depth == n) {
      if (path.back() != g.root()) return;
      closed += 1;
      for (int v : path) visits[level_window(g.lattice_level(v), t.t0)] += 1;
      return;
    }
    for (int b : g.adj[static_cast<std::size_t>(path.back())]) {
      if (g.dist[static_cast<std::size_t>(b)] > n - depth - 1) continue;
      path.push_back(b);
      self(self, depth + 1);
      path.pop_back();
    }
  };
  rec(rec, 0);
  EXPECT_EQ(closed, t.closed());
  for (const auto& [k, v] : visits) EXPECT_EQ(bridge_level_visits(t, k), frac(v, closed)) << k;
}

TEST(BridgeSampler, ZeroSamplesRejected) {
  auto m = build_model("fixed-end-tree(b=2)");
  EXPECT_THROW(mc_bridge_statistics(*m, 10, 0, 1, {0, 1}), InvalidArgument);
}

TEST(BridgeSampler, AgreesWithExactAndIsReproducible) {
  auto m = build_model("fixed-end-tree(b=2)");
  auto a = mc_bridge_statistics(*m, 24, 4000, 7, {0, 1, 2, 3});
  auto b = mc_bridge_statistics(*m, 24, 4000, 7, {0, 1, 2, 3});
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_TRUE(a.distinct_le_visits);
  for (const auto& r : a.rows) {
    EXPECT_TRUE(r.visits_within_3se()) << r.k << " " << r.visits_mean << " +- " << r.visits_se;
    // E[visits to window k] and P[reach level k t0] both sit below n base^{-k t0}.
    EXPECT_LE(to_double(to_high(*r.exact_visits)), r.bound * (1 + 1e-12)) << r.k;
    EXPECT_LE(r.hit, r.bound + 3 * r.hit_se) << r.k;
  }
  long total = 0;
  for (const auto& [k, c] : a.max_window) total += c;
  EXPECT_EQ(total, 4000);
}

TEST(InclusionSymmetry, TreeExact) {
  auto m = build_model("tree(b=2)");
  auto r = inclusion_symmetry(*m, 4, 2);
  EXPECT_TRUE(r.ok);
  EXPECT_EQ(r.pairs, 1 + 3 + 6);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.from_root, row.to_root);
    EXPECT_LE(row.distance, 2);
  }
  // 15 closed 4-walks at the root; 7 of them visit a fixed neighbor x:
  // 5 start with x, and 2 go o-y-o-x-o for the other neighbors y.
  for (const auto& row : r.rows) {
    if (row.distance == 1) {
      EXPECT_EQ(row.from_root, Rational(7, 15));
    }
  }
}

TEST(InclusionSymmetry, NonunimodularExact) {
  for (const char* spec : {"fixed-end-tree(b=2)", "grandparent(b=2)"}) {
    auto m = build_model(spec);
    auto r = inclusion_symmetry(*m, 6, 2);
    EXPECT_TRUE(r.ok) << spec;
    EXPECT_GT(r.pairs, 1) << spec;
  }
}

TEST(ExcursionRecord, MassAndEmptyRecord) {
  auto x = setup("tree(b=2)", 20);
  auto law = excursion_record_law(x.u, x.f, 20);
  EXPECT_EQ(law.mass, Rational(1));
  EXPECT_EQ(law.empty, x.f.value(20) / x.u.value(20));
  Rational js = 0;
  for (const auto& row : law.joint)
    for (const auto& v : row) js += v;
  EXPECT_LE(js, Rational(1));
}

TEST(ExcursionRecord, BruteForceSmallN) {
  // Oracle: sum over all return-time sets of a 12-step bridge.
  auto x = setup("fixed-end-tree(b=2)", 12);
  int n = 12;
  auto law = excursion_record_law(x.u, x.f, n);
  std::vector<Rational> alpha(7, 0);
  // Enumerate subsets of {1..n-1} as return times.
  for (unsigned mask = 0; mask < (1u << (n - 1)); ++mask) {
    Rational p = 1;
    int prev = 0, a = 0;
    for (int t = 1; t <= n; ++t) {
      bool ret = t == n || (mask >> (t - 1) & 1u);
      if (!ret) continue;
      p *= x.f.value(t - prev);
      prev = t;
      if (t != n && 2 * t <= n) ++a;
    }
    if (p != 0) alpha[static_cast<std::size_t>(a)] += p / x.u.value(n);
  }
  for (std::size_t a = 0; a < law.alpha.size(); ++a) EXPECT_EQ(law.alpha[a], alpha[a]) << a;
  EXPECT_EQ(law.mass, Rational(1));
}

TEST(ExcursionRecord, ZeroReturnRejected) {
  auto x = setup("tree(b=2)", 9);
  EXPECT_THROW(excursion_record_law(x.u, x.f, 9), InvalidArgument);
}

TEST(ExcursionRecord, LimitLaw) {
  auto x = setup("tree(b=2)", 200);
  auto rho = spectral_radius(*x.model, x.u);
  auto lim = limit_excursion_law(x.f, rho);
  // F(1/rho) = 3/4 on the binary tree.
  EXPECT_NEAR(to_double(lim.F()), 0.75, 2e-3);
  EXPECT_LT(lim.F_lo, HighFloat(0.75) + HighFloat(1e-12));
  EXPECT_GT(lim.F_hi, HighFloat(0.75) - HighFloat(1e-12));
  // The xi law is truncated at n = 200; its k^{-3/2} tail carries a few percent.
  EXPECT_LE(lim.xi_mass, HighFloat(1));
  EXPECT_GT(lim.xi_mass, HighFloat(0.9));
  auto law = excursion_record_law(x.u, x.f, 200);
  EXPECT_LT(to_double(excursion_tv(law, lim)), 0.1);
}

TEST(Cnw, ConstantHasNoN) {
  auto u = synthetic_sequence(SyntheticCase::Constant, {}, 200);
  auto s = cnw_condition_scan(u, {Rational(1, 10), Rational(1, 2)}, 200);
  for (const auto& r : s.rows) EXPECT_FALSE(r.found);
}

TEST(Cnw, NonincreasingInEpsilon) {
  auto x = setup("tree(b=2)", 400);
  std::vector<Rational> eps{Rational(1, 20), Rational(1, 10), Rational(1, 5), Rational(1, 2)};
  auto s = cnw_condition_scan(x.u, eps, 400);
  for (std::size_t i = 0; i < s.rows.size(); ++i) ASSERT_TRUE(s.rows[i].found) << i;
  for (std::size_t i = 1; i < s.rows.size(); ++i) EXPECT_LE(s.rows[i].N, s.rows[i - 1].N);
  EXPECT_TRUE(s.rows.back().growing);
}

TEST(Cnw, PowerLawFoundAndStable) {
  auto u = synthetic_sequence(SyntheticCase::Power, {Rational(1), 1.5, 1, 0.5}, 2000);
  auto s = cnw_condition_scan(u, {Rational(1, 2)}, 2000);
  ASSERT_TRUE(s.rows[0].found);
  EXPECT_EQ(s.rows[0].N, 58);
  EXPECT_FALSE(s.rows[0].growing);
  EXPECT_LT(s.rows[0].growth_exponent, 0.15);
}

TEST(Cnw, EpsilonMustBePositive) {
  auto u = synthetic_sequence(SyntheticCase::Power, {}, 20);
  EXPECT_THROW(cnw_condition_scan(u, {Rational(0)}, 20), InvalidArgument);
}

TEST(Synthetic, ValuesAndValidation) {
  auto u = synthetic_sequence(SyntheticCase::Power, {Rational(1, 2), 2.0, 1, 0.5}, 10);
  EXPECT_NEAR(to_double(u.high(3)), std::pow(0.5, 3) / 16.0, 1e-15);
  auto s = synthetic_sequence(SyntheticCase::Stretched, {Rational(1), -1.0 / 6, 2, 1.0 / 3}, 10);
  EXPECT_NEAR(to_double(s.high(7)), std::pow(8.0, 1.0 / 6) * std::exp(-2 * (2.0 - 1)), 1e-14);
  auto l = synthetic_sequence(SyntheticCase::LogExponential, {}, 10);
  EXPECT_NEAR(to_double(l.high(5)), std::exp(-5 / std::log(5 + std::exp(1.0))), 1e-14);
  EXPECT_EQ(u.value(0), Rational(1));
  EXPECT_THROW(synthetic_sequence(SyntheticCase::Power, {Rational(2)}, 10), InvalidArgument);
  EXPECT_THROW(synthetic_sequence(SyntheticCase::Power, {Rational(1), 0.5}, 10), InvalidArgument);
  EXPECT_THROW(synthetic_sequence(SyntheticCase::Stretched, {Rational(1), 0, 1, 1.5}, 10), InvalidArgument);
  EXPECT_THROW(parse_synthetic_case("bogus"), InvalidArgument);
}

TEST(FirstReturn, TreeRatioTendsToSquare) {
  auto x = setup("tree(b=2)", 300);
  auto b = first_return_lower_bound_check(x.u, x.f, 100, 300);
  // f_n / u_n -> (1 - F)^2 = 1/16 with F = 3/4.
  // The ratio decreases to its limit from above: 1.086 / 16 at n = 300.
  EXPECT_GT(b.last_ratio, 1.0 / 16);
  EXPECT_NEAR(b.last_ratio * 16, 1.086, 0.001);
  EXPECT_GT(b.margin, 0);
  EXPECT_GT(b.c_prime, 0);
  EXPECT_LT(b.c_prime, 0.2);
}

TEST(FirstReturn, BadWindow) {
  auto x = setup("tree(b=2)", 20);
  EXPECT_THROW(first_return_lower_bound_check(x.u, x.f, 10, 5), InvalidArgument);
  EXPECT_THROW(first_return_lower_bound_check(x.u, x.f, 1, 40), InvalidArgument);
}
