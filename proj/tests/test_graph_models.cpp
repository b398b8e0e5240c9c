#include <gtest/gtest.h>

#include <sstream>

#include "nonuni/graph_models.hpp"

using namespace nonuni;

namespace {

// Full scan of an explicit ball: symmetry, degree of interior vertices, and
// level steps drawn from the root profile.
void expect_well_formed(const WalkModel& m, int radius) {
  auto g = enumerate_ball(m, radius);
  auto prof = neighbor_level_profile(m);
  for (std::size_t v = 0; v < g.size(); ++v) {
    if (g.dist[v] < radius) {
      EXPECT_EQ(static_cast<long>(g.adj[v].size()), m.degree()) << m.name() << " vertex " << v;
    }
    for (int w : g.adj[v]) {
      const auto& back = g.adj[static_cast<std::size_t>(w)];
      EXPECT_NE(std::find(back.begin(), back.end(), static_cast<int>(v)), back.end());
      if (m.transitive()) {
        Level step = g.level[static_cast<std::size_t>(w)] - g.level[v];
        bool found = false;
        for (const auto& e : prof.entries) found = found || e.level == step;
        EXPECT_TRUE(found) << m.name();
      }
    }
  }
  EXPECT_EQ(g.level[0], Level{});
}

}  // namespace

TEST(ModelSpec, ParsesNestedSpecs) {
  auto s = ModelSpec::parse("product(tree(b=2), fixed-end-tree(b=3))");
  EXPECT_EQ(s.family, Family::CartesianProduct);
  EXPECT_EQ(s.factors[1].b, 3);
  EXPECT_EQ(s.str(), "product(tree(b=2),fixed-end-tree(b=3))");
  EXPECT_EQ(ModelSpec::parse("dl(q=2,r=3)").r, 3);
}

TEST(ModelSpec, ConfigText) {
  auto s = ModelSpec::from_config_text("# comment\nfamily = grandparent\nb = 3\n");
  EXPECT_EQ(s.family, Family::Grandparent);
  EXPECT_EQ(s.b, 3);
}

TEST(ModelSpec, RejectsInvalidParameters) {
  EXPECT_THROW(ModelSpec::parse("tree(b=1)"), InvalidArgument);
  EXPECT_THROW(ModelSpec::parse("dl(q=3,r=3)"), InvalidArgument);
  EXPECT_THROW(ModelSpec::parse("free-product(alpha=2,beta=2)"), InvalidArgument);
  EXPECT_THROW(ModelSpec::parse("product(product(product(tree(b=2),tree(b=2)),tree(b=2)),tree(b=2))"),
               InvalidArgument);
  EXPECT_THROW(ModelSpec::parse("tree(b=x)"), InvalidArgument);
  EXPECT_THROW(ModelSpec::parse("cube(b=2)"), InvalidArgument);
}

TEST(BuildModel, DegreesMatchEnumeration) {
  EXPECT_EQ(build_model("tree(b=2)")->degree(), 3);
  EXPECT_EQ(build_model("grandparent(b=2)")->degree(), 8);
  EXPECT_EQ(build_model("dl(q=2,r=3)")->degree(), 5);
  EXPECT_EQ(build_model("free-product(alpha=3,beta=4)")->degree(), 5);
  EXPECT_EQ(build_model("product(tree(b=2),grandparent(b=2))")->degree(), 11);
}

TEST(EnumerateBall, SizesMatchSphereFormulas) {
  auto tree = build_model("tree(b=2)");
  auto g1 = enumerate_ball(*tree, 1);
  EXPECT_EQ(g1.size(), 4u);
  EXPECT_EQ(g1.adj[0].size(), 3u);
  EXPECT_EQ(enumerate_ball(*tree, 3).size(), 22u);
  for (long b : {2, 3}) {
    auto g = enumerate_ball(*build_model(ModelSpec::regular_tree(b)), 5);
    std::vector<long> sphere(6, 0);
    for (int d : g.dist) sphere[static_cast<std::size_t>(d)] += 1;
    long expect = b + 1;
    for (int k = 1; k <= 5; ++k, expect *= b) EXPECT_EQ(sphere[static_cast<std::size_t>(k)], expect);
  }
  EXPECT_EQ(enumerate_ball(*build_model("grandparent(b=2)"), 1).size(), 9u);
  EXPECT_EQ(enumerate_ball(*build_model("dl(q=2,r=3)"), 1).size(), 6u);
}

TEST(EnumerateBall, CapExceeded) {
  EXPECT_THROW(enumerate_ball(*build_model("grandparent(b=3)"), 12, 10000), BudgetExceeded);
}

TEST(EnumerateBall, WellFormed) {
  for (const char* s : {"tree(b=2)", "fixed-end-tree(b=3)", "grandparent(b=2)", "dl(q=2,r=3)",
                        "free-product(alpha=3,beta=4)", "free-product(alpha=2,beta=3)",
                        "product(fixed-end-tree(b=2),grandparent(b=2))"}) {
    expect_well_formed(*build_model(s), 4);
  }
}

TEST(EnumerateBall, CsvExport) {
  auto g = enumerate_ball(*build_model("fixed-end-tree(b=2)"), 1);
  std::ostringstream os;
  g.write_csv(os);
  EXPECT_EQ(os.str().substr(0, 27), "vertex_id,neighbor_id,level");
  EXPECT_NE(os.str().find("0,1,0"), std::string::npos);
}

TEST(Profile, FixedEndTree) {
  auto p = neighbor_level_profile(*build_model("fixed-end-tree(b=2)"));
  ASSERT_EQ(p.entries.size(), 2u);
  EXPECT_EQ(p.entries[0].q, Rational(2));
  EXPECT_EQ(p.entries[0].count, 1);
  EXPECT_EQ(p.entries[1].q, Rational(1, 2));
  EXPECT_EQ(p.entries[1].count, 2);
  EXPECT_EQ(p.t0_lattice(), 1);
}

TEST(Profile, Grandparent) {
  auto p = neighbor_level_profile(*build_model("grandparent(b=2)"));
  EXPECT_EQ(p.count_at(Rational(4)), 1);
  EXPECT_EQ(p.count_at(Rational(2)), 1);
  EXPECT_EQ(p.count_at(Rational(1, 2)), 2);
  EXPECT_EQ(p.count_at(Rational(1, 4)), 4);
  EXPECT_EQ(p.t0_lattice(), 2);
  EXPECT_EQ(p.basis.base, Rational(2));
}

TEST(Profile, RegularTreeIsUnimodular) {
  auto p = neighbor_level_profile(*build_model("tree(b=2)"));
  ASSERT_EQ(p.entries.size(), 1u);
  EXPECT_EQ(p.entries[0].q, Rational(1));
  EXPECT_EQ(p.entries[0].count, 3);
}

TEST(Profile, DiestelLeaderIsLattice) {
  auto p = neighbor_level_profile(*build_model("dl(q=2,r=3)"));
  EXPECT_EQ(p.count_at(Rational(3, 2)), 2);
  EXPECT_EQ(p.count_at(Rational(2, 3)), 3);
  EXPECT_TRUE(p.basis.lattice);
  EXPECT_EQ(p.basis.base, Rational(3, 2));
  auto q = neighbor_level_profile(*build_model("dl(q=2,r=4)"));
  EXPECT_EQ(q.basis.base, Rational(2));
}

TEST(Profile, ProductOfIncommensurableFactors) {
  auto m = build_model("product(fixed-end-tree(b=2),fixed-end-tree(b=3))");
  EXPECT_FALSE(m->basis().lattice);
  EXPECT_EQ(m->basis().generators(), 2);
  auto m2 = build_model("product(fixed-end-tree(b=2),fixed-end-tree(b=4))");
  EXPECT_TRUE(m2->basis().lattice);
  EXPECT_EQ(m2->basis().k2, 2);
}

TEST(Collapse, RegularTreeBirthDeath) {
  auto c = collapse(*build_model("tree(b=2)"), 10);
  EXPECT_EQ(c.rows[0].size(), 1u);
  EXPECT_EQ(c.probability(0, 0), Rational(1));
  int s1 = c.find({1, 0, 0, 0});
  ASSERT_GE(s1, 0);
  EXPECT_EQ(c.probability(static_cast<std::size_t>(s1), 0), Rational(1, 3));
  EXPECT_EQ(c.probability(static_cast<std::size_t>(s1), 1), Rational(2, 3));
}

TEST(Collapse, FixedEndTreeStates) {
  auto c = collapse(*build_model("fixed-end-tree(b=2)"), 10);
  EXPECT_EQ(c.states[0], (StateKey{0, 0, 0, 0}));
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_LE(c.states[i][0] + c.states[i][1], 6);
  EXPECT_EQ(c.size(), 28u);  // s + t <= 6: interior radius 5 plus frontier
}

TEST(Collapse, HorizonZero) {
  auto c = collapse(*build_model("grandparent(b=2)"), 0);
  EXPECT_EQ(c.size(), 1u);
}

TEST(Collapse, OrbitSizesAreSphereSizes) {
  auto m = build_model("grandparent(b=2)");
  auto c = collapse(*m, 8);
  auto g = enumerate_ball(*m, 3);
  std::map<StateKey, long> seen;
  for (std::size_t v = 0; v < g.size(); ++v)
    if (g.dist[v] <= 2) seen[m->vertex_state(g.codes[v])] += 1;
  for (const auto& [s, n] : seen) {
    int i = c.find(s);
    ASSERT_GE(i, 0);
    EXPECT_EQ(c.orbit[static_cast<std::size_t>(i)], Integer(n));
  }
}

TEST(Collapse, RejectsFamiliesWithoutChain) {
  EXPECT_THROW(collapse(*build_model("free-product(alpha=3,beta=4)"), 4), InvalidArgument);
  EXPECT_THROW(collapse(*build_model("fixed-end-tree(b=2)"), 200000), BudgetExceeded);
}

TEST(ValidateCollapse, BallAndChainAgree) {
  for (const char* s : {"tree(b=2)", "tree(b=3)", "fixed-end-tree(b=2)", "fixed-end-tree(b=3)", "grandparent(b=2)",
                        "dl(q=2,r=3)"}) {
    auto rep = validate_collapse(*build_model(s), 12);
    EXPECT_TRUE(rep.ok) << s;
  }
  auto rep = validate_collapse(*build_model("tree(b=2)"), 4);
  EXPECT_EQ(rep.rows[2].chain, Rational(1, 3));
  EXPECT_EQ(rep.rows[4].chain, Rational(5, 27));
}
