#include <gtest/gtest.h>

#include "nonuni/mass_transport.hpp"

using namespace nonuni;

TEST(NeighborMtp, FamiliesPass) {
  for (const char* s : {"fixed-end-tree(b=2)", "fixed-end-tree(b=5)", "grandparent(b=2)", "grandparent(b=3)",
                        "dl(q=2,r=3)", "dl(q=3,r=7)", "tree(b=2)", "product(grandparent(b=2),dl(q=2,r=5))"}) {
    auto rep = check_neighbor_mtp(neighbor_level_profile(*build_model(s)));
    EXPECT_TRUE(rep.ok) << s << (rep.witnesses.empty() ? "" : ": " + rep.witnesses[0]);
  }
}

TEST(NeighborMtp, GrandparentPairs) {
  auto rep = check_neighbor_mtp(neighbor_level_profile(*build_model("grandparent(b=2)")));
  ASSERT_EQ(rep.passed.size(), 2u);
  EXPECT_EQ(rep.passed[0], "q=4: t_{1/q}=4, q*t_q=4");
  EXPECT_EQ(rep.passed[1], "q=2: t_{1/q}=2, q*t_q=2");
}

TEST(NeighborMtp, CorruptedProfileFails) {
  LevelProfile p;
  p.degree = 4;
  p.basis = LevelBasis::make(Rational(2));
  p.entries = {{Rational(2), 1, Level{1, 0}}, {Rational(1, 2), 3, Level{-1, 0}}};
  auto rep = check_neighbor_mtp(p);
  EXPECT_FALSE(rep.ok);
  ASSERT_FALSE(rep.witnesses.empty());
  EXPECT_EQ(rep.witnesses[0].substr(0, 4), "q=2:");
  EXPECT_EQ(rep.to_json()["status"], "fail");
}

TEST(Cocycle, BallsPass) {
  auto fe = enumerate_ball(*build_model("fixed-end-tree(b=2)"), 6);
  EXPECT_TRUE(check_cocycle(fe, 1000, 7).ok);
  auto gp = enumerate_ball(*build_model("grandparent(b=2)"), 4);
  EXPECT_TRUE(check_cocycle(gp, 1000, 7).ok);
  auto dl = enumerate_ball(*build_model("dl(q=2,r=3)"), 4);
  EXPECT_TRUE(check_cocycle(dl, 300, 7).ok);
}

TEST(Cocycle, DeterministicGivenSeed) {
  auto fe = enumerate_ball(*build_model("fixed-end-tree(b=2)"), 5);
  EXPECT_EQ(check_cocycle(fe, 50, 3).to_json().dump(), check_cocycle(fe, 50, 3).to_json().dump());
}

TEST(Cocycle, CorruptedLabelGivesWitness) {
  auto g = enumerate_ball(*build_model("fixed-end-tree(b=2)"), 4);
  g.level[1].a += 3;
  auto rep = check_cocycle(g, 2000, 11);
  EXPECT_FALSE(rep.ok);
  ASSERT_FALSE(rep.witnesses.empty());
  EXPECT_EQ(rep.witnesses[0].substr(0, 7), "triple ");
}

TEST(Mtp, FixedEndTreeNeighbor) {
  auto g = enumerate_ball(*build_model("fixed-end-tree(b=2)"), 4);
  auto rep = check_mtp(g, 3);
  EXPECT_TRUE(rep.ok);
  bool seen = false;
  for (const auto& r : rep.rows)
    if (r.distance == 1 && r.level == Level{1, 0}) {
      EXPECT_EQ(r.lhs, Rational(1));
      EXPECT_EQ(r.rhs, Rational(1));
      seen = true;
    }
  EXPECT_TRUE(seen);
  EXPECT_EQ(rep.rows[0].lhs, Rational(0));
}

TEST(Mtp, ResidualsVanishOnEveryFamily) {
  for (auto [s, r] : std::vector<std::pair<const char*, int>>{{"fixed-end-tree(b=3)", 5},
                                                              {"grandparent(b=2)", 4},
                                                              {"dl(q=2,r=3)", 5},
                                                              {"tree(b=2)", 5},
                                                              {"product(fixed-end-tree(b=2),fixed-end-tree(b=3))", 4}}) {
    auto rep = check_mtp(enumerate_ball(*build_model(s), r), r - 1);
    EXPECT_TRUE(rep.ok) << s;
    for (const auto& row : rep.rows) EXPECT_EQ(row.residual(), 0) << s;
  }
}

TEST(Mtp, DistanceTwoLevelZero) {
  auto g = enumerate_ball(*build_model("fixed-end-tree(b=2)"), 3);
  auto rep = check_mtp(g, 2);
  for (const auto& r : rep.rows)
    if (r.distance == 2 && r.level == Level{}) {
      EXPECT_EQ(r.lhs, Rational(1));  // the sibling
      EXPECT_EQ(r.rhs, Rational(1));
    }
  EXPECT_EQ(rep.to_json()["status"], "pass");
}

TEST(Mtp, IncompleteBallRejected) {
  auto g = enumerate_ball(*build_model("fixed-end-tree(b=2)"), 3);
  EXPECT_THROW(check_mtp(g, 3), InvalidArgument);
}
