#include <gtest/gtest.h>

#include <cmath>

#include "nonuni/quasi_transitive.hpp"

using namespace nonuni;

namespace {

const double kRho = 2 * std::sqrt(2.0) / 3;

OrbitSchema schema_of(const char* spec, bool parity = false) { return build_orbit_schema(*build_model(spec), parity); }

LevelIncrementLaw law_of(const char* spec) {
  auto m = build_model(spec);
  return increment_law(neighbor_level_profile(*m), spectral_radius(*m, return_series(*m, 30)));
}

MarkovAdditiveChain chain_of(const OrbitSchema& s) { return induced_chain(s, perron(a_matrix(s))); }

}  // namespace

TEST(Schema, FixedEndTreeSingleOrbit) {
  auto s = schema_of("fixed-end-tree(b=2)");
  EXPECT_EQ(s.orbits, 1);
  EXPECT_EQ(s.count(0, 0, Rational(2)), 1);
  EXPECT_EQ(s.count(0, 0, Rational(1, 2)), 2);
  EXPECT_EQ(s.entries.size(), 2u);
  EXPECT_TRUE(s.lattice);
  EXPECT_EQ(s.base, 2);
  EXPECT_TRUE(check_schema(s).ok);
}

TEST(Schema, ParityRefinement) {
  auto s = schema_of("fixed-end-tree(b=2)", true);
  EXPECT_EQ(s.orbits, 2);
  EXPECT_EQ(s.count(0, 1, Rational(2)), 1);
  EXPECT_EQ(s.count(0, 1, Rational(1, 2)), 2);
  EXPECT_EQ(s.count(1, 0, Rational(2)), 1);
  EXPECT_EQ(s.count(1, 0, Rational(1, 2)), 2);
  for (const auto& e : s.entries) EXPECT_NE(e.i, e.j);
  auto rep = check_schema(s);
  EXPECT_TRUE(rep.ok);
  EXPECT_EQ(rep.checked, 6);
}

TEST(Schema, ConfigRoundTrip) {
  auto s = parse_schema(
      "# parity refinement of the binary fixed-end tree\n"
      "degree 1 3\n"
      "1 2 2 1 1\n"
      "1 2 1 2 2   # two children\n"
      "2 1 2 1 1\n"
      "2 1 1 2 2\n");
  auto p = schema_of("fixed-end-tree(b=2)", true);
  EXPECT_EQ(s.to_config(), p.to_config());
  EXPECT_EQ(parse_schema(s.to_config()).to_config(), s.to_config());
}

TEST(Schema, CorruptConfigRejected) {
  const char* bad = "1 2 2 1 1\n2 1 1 2 3\n";
  try {
    parse_schema(bad);
    FAIL() << "corrupt schema accepted";
  } catch (const InvariantViolation& e) {
    EXPECT_NE(std::string(e.what()).find("N_{1,2,2}=1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("3/2"), std::string::npos) << e.what();
  }
  auto s = parse_schema(bad, false);
  EXPECT_FALSE(check_schema(s).ok);
  EXPECT_THROW(parse_schema("1 2 2 1\n"), InvalidArgument);
  EXPECT_THROW(parse_schema("1 2 0 1 1\n"), InvalidArgument);
  EXPECT_THROW(parse_schema("0 1 1 1 1\n"), InvalidArgument);
  EXPECT_THROW(parse_schema("1 1 1 1 -1\n"), InvalidArgument);
  EXPECT_THROW(parse_schema("x 1 1 1 1\n"), InvalidArgument);
  // degree larger than the listed neighbors
  EXPECT_THROW(parse_schema("degree 1 4\n1 1 2 1 1\n1 1 1 2 2\n"), InvariantViolation);
}

TEST(AMatrix, TreeEntries) {
  auto one = a_matrix(schema_of("fixed-end-tree(b=2)"));
  ASSERT_EQ(one.size, 1);
  // (sqrt 2 + 2/sqrt 2) / 3
  EXPECT_EQ(one.exact[0][0].str(), "2*sqrt(2)");
  EXPECT_NEAR(to_double(one(0, 0)), kRho, 1e-15);
  auto two = a_matrix(schema_of("fixed-end-tree(b=2)", true));
  EXPECT_TRUE(two.symmetric);
  EXPECT_EQ(two(0, 0), 0);
  EXPECT_EQ(two(1, 1), 0);
  EXPECT_NEAR(to_double(two(0, 1)), kRho, 1e-15);
  EXPECT_EQ(two(0, 1), two(1, 0));

  auto bad = parse_schema("1 2 2 1 1\n2 1 1 2 3\n", false);
  EXPECT_THROW(a_matrix(bad), InvariantViolation);
  EXPECT_FALSE(a_matrix(bad, true).symmetric);
}

TEST(Perron, KnownEigenpairs) {
  auto one = perron(a_matrix(schema_of("fixed-end-tree(b=2)")));
  EXPECT_LT(abs(one.rho - 2 * sqrt(HighFloat(2)) / 3), HighFloat("1e-40"));
  auto two = perron(a_matrix(schema_of("fixed-end-tree(b=2)", true)));
  EXPECT_LT(abs(two.rho - 2 * sqrt(HighFloat(2)) / 3), HighFloat("1e-12"));
  for (const auto& x : two.v) EXPECT_LT(abs(x - 1 / sqrt(HighFloat(2))), HighFloat("1e-12"));
  for (const auto& x : two.pi) EXPECT_LT(abs(x - HighFloat(0.5)), HighFloat("1e-12"));
  EXPECT_LE(two.residual, HighFloat("1e-12"));

  auto id = perron({{HighFloat(1)}});
  EXPECT_EQ(id.rho, 1);
  EXPECT_EQ(id.v[0], 1);

  std::vector<std::vector<HighFloat>> zero{{HighFloat(0), HighFloat(0)}, {HighFloat(0), HighFloat(0)}};
  EXPECT_THROW(perron(zero), InvalidArgument);
  std::vector<std::vector<HighFloat>> split{{HighFloat(1), HighFloat(0)}, {HighFloat(0), HighFloat(2)}};
  EXPECT_THROW(perron(split), InvalidArgument);
  EXPECT_THROW(perron({{HighFloat(1)}}, 0.0), InvalidArgument);
}

TEST(Perron, FreeProductMatchesLineGraph) {
  // C3 * C3 is the line graph of the 3-regular tree: rho = (1 + 2 sqrt 2) / 4.
  auto s = schema_of("free-product(alpha=3,beta=3)");
  EXPECT_EQ(s.orbits, 2);
  EXPECT_TRUE(check_schema(s).ok);
  auto p = perron(a_matrix(s));
  EXPECT_LT(abs(p.rho - (1 + 2 * sqrt(HighFloat(2))) / 4), HighFloat("1e-12"));
  auto rep = stationary_and_mean_checks(s, p);
  EXPECT_TRUE(rep.ok);

  auto t = schema_of("free-product(alpha=3,beta=5)");
  EXPECT_TRUE(check_schema(t).ok);
  EXPECT_TRUE(t.lattice);
  EXPECT_EQ(t.base, 2);
  EXPECT_EQ(t.degree[0], 6);
  EXPECT_TRUE(stationary_and_mean_checks(t, perron(a_matrix(t))).ok);
  // 2 and 3 are not powers of one base
  auto u = schema_of("free-product(alpha=3,beta=4)");
  EXPECT_FALSE(u.lattice);
  EXPECT_TRUE(stationary_and_mean_checks(u, perron(a_matrix(u))).ok);
  EXPECT_THROW(induced_chain(u, perron(a_matrix(u))), InvalidArgument);
}

TEST(Stationary, TreeSchemas) {
  for (bool parity : {false, true}) {
    auto s = schema_of("fixed-end-tree(b=2)", parity);
    auto rep = stationary_and_mean_checks(s, perron(a_matrix(s)));
    EXPECT_TRUE(rep.ok) << parity;
    EXPECT_TRUE(rep.witnesses.empty());
  }
  for (const char* spec : {"grandparent(b=2)", "dl(q=2,r=3)", "grandparent(b=3)"}) {
    auto s = schema_of(spec, true);
    EXPECT_TRUE(stationary_and_mean_checks(s, perron(a_matrix(s))).ok) << spec;
  }
}

TEST(Stationary, CorruptSchemaFailsMean) {
  auto bad = parse_schema("1 2 2 1 1\n2 1 1 2 3\n", false);
  auto p = perron(a_matrix(bad, true));
  auto rep = stationary_and_mean_checks(bad, p);
  EXPECT_FALSE(rep.ok);
  bool cancel_witness = false;
  for (const auto& w : rep.witnesses) cancel_witness = cancel_witness || w.find("do not cancel") != std::string::npos;
  EXPECT_TRUE(cancel_witness);
}

TEST(InducedChain, Structure) {
  auto c1 = chain_of(schema_of("fixed-end-tree(b=2)"));
  ASSERT_EQ(c1.states.size(), 2u);
  EXPECT_TRUE(c1.exact);
  EXPECT_TRUE(c1.irreducible);
  for (std::size_t a = 0; a < 2; ++a) {
    EXPECT_LT(abs(c1.initial[a] - HighFloat(0.5)), HighFloat("1e-40"));
    for (std::size_t b = 0; b < 2; ++b) EXPECT_LT(abs(c1.P[a][b] - HighFloat(0.5)), HighFloat("1e-40"));
  }

  auto c2 = chain_of(schema_of("fixed-end-tree(b=2)", true));
  ASSERT_EQ(c2.states.size(), 4u);
  EXPECT_TRUE(c2.exact);
  EXPECT_TRUE(c2.irreducible);
  HighFloat mass = 0;
  for (const auto& x : c2.initial) mass += x;
  EXPECT_LT(abs(mass - 1), HighFloat("1e-40"));
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b) {
      bool chained = c2.states[b].i == c2.states[a].j;
      EXPECT_EQ(c2.P[a][b] > 0, chained);
      EXPECT_NE(c2.states[b].i, c2.states[b].j);
    }
}

TEST(MarkovBallot, SingleOrbitMatchesLevelWalkExactly) {
  for (const char* spec : {"fixed-end-tree(b=2)", "grandparent(b=2)", "fixed-end-tree(b=3)"}) {
    auto c = chain_of(schema_of(spec));
    auto law = law_of(spec);
    ASSERT_TRUE(c.exact);
    EXPECT_EQ(c.W, law.total) << spec;
    EXPECT_EQ(c.t0, law.t0);
    for (int n = 1; n <= 24; ++n)
      for (long r = 0; r <= 4; ++r) {
        auto m = markov_ballot(c, n, r);
        auto d = ballot_probability(law, n, r);
        EXPECT_EQ(m.weight, d.weight) << spec << " n=" << n << " r=" << r;
        EXPECT_EQ(m.exact_value(c), d.exact_value(law));
        EXPECT_EQ(markov_max_and_return(c, n, r).weight, max_and_return(law, n, r).weight);
      }
    for (long r = 1; r <= 3; ++r) {
      auto mh = markov_hitting_law(c, r, 30);
      auto dh = hitting_time_law(law, r, 30);
      for (int k = 0; k <= 30; ++k) EXPECT_EQ(mh[static_cast<std::size_t>(k)].weight, dh[static_cast<std::size_t>(k)].weight);
    }
    auto mr = markov_return_law(c, 30);
    auto dr = level_return_law(law, 30);
    for (int k = 0; k <= 30; ++k) EXPECT_EQ(mr[static_cast<std::size_t>(k)].weight, dr[static_cast<std::size_t>(k)].weight);
  }
}

TEST(MarkovBallot, ParityMarginalsMatchSingleOrbit) {
  for (const char* spec : {"fixed-end-tree(b=2)", "grandparent(b=2)"}) {
    auto c1 = chain_of(schema_of(spec));
    auto c2 = chain_of(schema_of(spec, true));
    ASSERT_TRUE(c2.exact);
    for (int n = 1; n <= 20; ++n)
      for (long r = 0; r <= 3; ++r) {
        EXPECT_EQ(markov_ballot(c2, n, r).exact_value(c2), markov_ballot(c1, n, r).exact_value(c1)) << spec << n << r;
        EXPECT_EQ(markov_max_and_return(c2, n, r).exact_value(c2), markov_max_and_return(c1, n, r).exact_value(c1));
      }
  }
}

TEST(MarkovBallot, FloatModeAndFreeProduct) {
  auto c = chain_of(schema_of("fixed-end-tree(b=2)", true));
  for (int n : {5, 12, 40})
    for (long r : {0L, 1L, 3L}) {
      double e = to_double(markov_ballot(c, n, r).value);
      double f = to_double(markov_ballot(c, n, r, Arithmetic::Float).value);
      EXPECT_NEAR(f, e, 1e-15 + 1e-12 * e);
    }
  // Unequal orbit weights: float only, still a probability law.
  auto fp = chain_of(schema_of("free-product(alpha=3,beta=5)"));
  EXPECT_THROW(markov_ballot(fp, 5, 0), InvalidArgument);
  auto ret = markov_return_law(fp, 40, Arithmetic::Float);
  EXPECT_NEAR(to_double(ret[0].value), 1.0, 1e-15);
  double sum = 0;
  for (long r = 0; r <= 25; ++r) sum += to_double(markov_max_and_return(fp, 40, r, Arithmetic::Float).value);
  EXPECT_NEAR(sum, to_double(ret[40].value), 1e-15);
  auto scan = markov_bound_scan(fp, {50, 100, 200}, {0, 1, 2, 5, 10});
  EXPECT_TRUE(scan.positive);
  EXPECT_GT(scan.max_return_sup, 0);
  EXPECT_LT(scan.max_return_sup, 100);
}

TEST(QuasiReport, Json) {
  auto q = analyze_schema(schema_of("fixed-end-tree(b=2)", true));
  EXPECT_TRUE(q.ok());
  EXPECT_TRUE(q.has_chain);
  auto j = q.to_json();
  EXPECT_EQ(j["status"], "pass");
  EXPECT_EQ(j["induced_chain"]["states"].size(), 4u);
}
