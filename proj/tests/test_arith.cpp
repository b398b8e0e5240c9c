#include <gtest/gtest.h>

#include "nonuni/arith.hpp"

using namespace nonuni;

TEST(QuadNumber, SqrtOfRationalReducesRadicand) {
  auto s = QuadNumber::sqrt_of(Rational(8));
  EXPECT_EQ(s.radicand(), 2);
  EXPECT_EQ(s.radical_part(), Rational(2));
  auto h = QuadNumber::sqrt_of(Rational(3, 2));  // sqrt(6)/2
  EXPECT_EQ(h.radicand(), 6);
  EXPECT_EQ(h.radical_part(), Rational(1, 2));
  EXPECT_TRUE(QuadNumber::sqrt_of(Rational(9, 4)).is_rational());
}

TEST(QuadNumber, FieldOperationsAreExact) {
  auto r2 = QuadNumber::sqrt_of(Rational(2));
  EXPECT_EQ(r2 * r2, QuadNumber(Rational(2)));
  QuadNumber x = QuadNumber(Rational(1)) + r2;
  QuadNumber inv = QuadNumber(Rational(1)) / x;  // sqrt(2) - 1
  EXPECT_EQ(inv, r2 - QuadNumber(Rational(1)));
  EXPECT_EQ(x.pow(2), QuadNumber(Rational(3)) + QuadNumber(Rational(2)) * r2);
}

TEST(QuadNumber, SignComparesWithoutRounding) {
  // 99/70 is just above sqrt(2); 140/99 just below.
  auto r2 = QuadNumber::sqrt_of(Rational(2));
  EXPECT_LT(r2, QuadNumber(Rational(99, 70)));
  EXPECT_LT(QuadNumber(Rational(140, 99)), r2);
  EXPECT_EQ((r2 - QuadNumber(Rational(99, 70))).sign(), -1);
}

TEST(QuadNumber, MixingFieldsThrows) {
  auto r2 = QuadNumber::sqrt_of(Rational(2));
  auto r3 = QuadNumber::sqrt_of(Rational(3));
  EXPECT_THROW(r2 + r3, Error);
}

TEST(HighFloat, RationalRoundTrip) {
  HighFloat x = to_high(Rational(1, 3));
  EXPECT_NEAR(to_double(x), 1.0 / 3.0, 1e-16);
  HighFloat err = abs(x * 3 - 1);
  EXPECT_LT(err, HighFloat("1e-55"));
  EXPECT_EQ(to_rational(HighFloat(0.5)), Rational(1, 2));
}

TEST(SquareSplit, Basics) {
  EXPECT_EQ(square_split(12), std::make_pair(2L, 3L));
  EXPECT_EQ(square_split(36), std::make_pair(6L, 1L));
  EXPECT_THROW(square_split(0), InvalidArgument);
}
