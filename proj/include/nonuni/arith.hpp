/*
 * Number types shared by the whole library.
 *
 *   Integer / Rational  exact GMP arithmetic (walk counts, probabilities)
 *   HighFloat           60-digit MPFR float used for every "float view"
 *   QuadNumber          a + b*sqrt(D) with rational a, b; D squarefree
 *
 * Walk counts are kept as integers and only divided by d^n at the very end,
 * which is what keeps exact return probabilities affordable for n in the
 * thousands.
 */
#pragma once

#include <gmpxx.h>
#include <mpfr.h>

#include <boost/multiprecision/mpfr.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nonuni {

using Integer = mpz_class;
using Rational = mpq_class;

inline constexpr unsigned kHighDigits = 60;
using HighFloat = boost::multiprecision::number<
    boost::multiprecision::mpfr_float_backend<kHighDigits>,
    boost::multiprecision::et_off>;

// Error kinds map onto CLI exit codes (2 = computation, 3 = invariant).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

class InvariantViolation : public Error {
 public:
  using Error::Error;
};

inline HighFloat to_high(const Integer& z) {
  HighFloat x;
  mpfr_set_z(x.backend().data(), z.get_mpz_t(), MPFR_RNDN);
  return x;
}

inline HighFloat to_high(const Rational& q) {
  HighFloat x;
  mpfr_set_q(x.backend().data(), q.get_mpq_t(), MPFR_RNDN);
  return x;
}

// Exact binary value of x as a rational.
inline Rational to_rational(const HighFloat& x) {
  Rational q;
  mpfr_get_q(q.get_mpq_t(), x.backend().data());
  return q;
}

inline double to_double(const HighFloat& x) { return x.convert_to<double>(); }

inline std::string to_string(const HighFloat& x, int digits = 50) {
  std::ostringstream os;
  os.precision(digits);
  os << x;
  return os.str();
}

inline std::string to_string(const Rational& q) { return q.get_str(); }

inline Integer ipow(const Integer& base, unsigned long e) {
  Integer r;
  mpz_pow_ui(r.get_mpz_t(), base.get_mpz_t(), e);
  return r;
}

inline Rational rpow(const Rational& base, long e) {
  Rational num(ipow(base.get_num(), static_cast<unsigned long>(e < 0 ? -e : e)));
  Rational den(ipow(base.get_den(), static_cast<unsigned long>(e < 0 ? -e : e)));
  Rational r = e >= 0 ? num / den : den / num;
  r.canonicalize();
  return r;
}

inline int sign(const Rational& q) { return sgn(q); }

// Canonical a/b (the two-argument mpq constructor does not reduce).
inline Rational frac(const Integer& a, const Integer& b) {
  Rational q(a, b);
  q.canonicalize();
  return q;
}

// Splits n = k^2 * m with m squarefree; returns {k, m}.
inline std::pair<long, long> square_split(long n) {
  if (n <= 0) throw InvalidArgument("square_split: nonpositive radicand");
  long k = 1;
  long m = n;
  for (long p = 2; p * p <= m; ++p) {
    while (m % (p * p) == 0) {
      m /= p * p;
      k *= p;
    }
  }
  return {k, m};
}

/*
 * Element a + b*sqrt(D) of the real quadratic field Q(sqrt(D)). D == 1 is the
 * degenerate "rational only" field; mixing two different nontrivial D is an
 * error. Comparisons are exact.
 */
class QuadNumber {
 public:
  QuadNumber() = default;
  explicit QuadNumber(Rational a) : a_(std::move(a)) {}
  QuadNumber(Rational a, Rational b, long radicand) {
    auto [k, m] = square_split(radicand);
    a_ = std::move(a);
    if (m == 1) {
      a_ += b * k;
    } else {
      b_ = b * k;
      d_ = m;
    }
    normalize();
  }

  static QuadNumber sqrt_of(const Rational& q) {
    // sqrt(p/s) = sqrt(p*s)/s
    if (q <= 0) throw InvalidArgument("sqrt_of: nonpositive argument");
    Integer ps = q.get_num() * q.get_den();
    if (!ps.fits_slong_p()) throw InvalidArgument("sqrt_of: radicand too large");
    return QuadNumber(Rational(0), Rational(1, 1) / Rational(q.get_den()), ps.get_si());
  }

  const Rational& rational_part() const { return a_; }
  const Rational& radical_part() const { return b_; }
  long radicand() const { return d_; }
  bool is_rational() const { return b_ == 0; }

  HighFloat to_high() const {
    HighFloat r = nonuni::to_high(a_);
    if (b_ != 0) r += nonuni::to_high(b_) * boost::multiprecision::sqrt(HighFloat(d_));
    return r;
  }

  int sign() const {
    int sa = sgn(a_);
    int sb = sgn(b_);
    if (sb == 0) return sa;
    if (sa == 0) return sb;
    if (sa == sb) return sa;
    // a and b*sqrt(D) have opposite signs: compare a^2 with b^2 D.
    Rational lhs = a_ * a_;
    Rational rhs = b_ * b_ * d_;
    int c = cmp(lhs, rhs);
    if (c == 0) return 0;
    return c > 0 ? sa : sb;
  }

  QuadNumber conjugate() const {
    QuadNumber r = *this;
    r.b_ = -r.b_;
    return r;
  }

  QuadNumber& operator+=(const QuadNumber& o) {
    long d = common(o);
    a_ += o.a_;
    b_ += o.b_;
    d_ = d;
    normalize();
    return *this;
  }
  QuadNumber& operator-=(const QuadNumber& o) {
    long d = common(o);
    a_ -= o.a_;
    b_ -= o.b_;
    d_ = d;
    normalize();
    return *this;
  }
  QuadNumber& operator*=(const QuadNumber& o) {
    long d = common(o);
    Rational na = a_ * o.a_ + b_ * o.b_ * d;
    Rational nb = a_ * o.b_ + b_ * o.a_;
    a_ = std::move(na);
    b_ = std::move(nb);
    d_ = d;
    normalize();
    return *this;
  }
  QuadNumber& operator/=(const QuadNumber& o) {
    if (o.sign() == 0) throw Error("QuadNumber: division by zero");
    QuadNumber conj = o.conjugate();
    QuadNumber norm = o * conj;  // rational
    *this *= conj;
    a_ /= norm.a_;
    b_ /= norm.a_;
    normalize();
    return *this;
  }

  friend QuadNumber operator+(QuadNumber x, const QuadNumber& y) { return x += y; }
  friend QuadNumber operator-(QuadNumber x, const QuadNumber& y) { return x -= y; }
  friend QuadNumber operator*(QuadNumber x, const QuadNumber& y) { return x *= y; }
  friend QuadNumber operator/(QuadNumber x, const QuadNumber& y) { return x /= y; }
  friend QuadNumber operator-(QuadNumber x) {
    x.a_ = -x.a_;
    x.b_ = -x.b_;
    return x;
  }

  friend bool operator==(const QuadNumber& x, const QuadNumber& y) { return (x - y).sign() == 0; }
  friend bool operator<(const QuadNumber& x, const QuadNumber& y) { return (x - y).sign() < 0; }
  friend bool operator<=(const QuadNumber& x, const QuadNumber& y) { return (x - y).sign() <= 0; }
  friend bool operator>(const QuadNumber& x, const QuadNumber& y) { return (x - y).sign() > 0; }
  friend bool operator>=(const QuadNumber& x, const QuadNumber& y) { return (x - y).sign() >= 0; }
  friend bool operator!=(const QuadNumber& x, const QuadNumber& y) { return (x - y).sign() != 0; }

  QuadNumber pow(unsigned e) const {
    QuadNumber result(Rational(1));
    QuadNumber base = *this;
    while (e) {
      if (e & 1u) result *= base;
      base *= base;
      e >>= 1u;
    }
    return result;
  }

  std::string str() const {
    if (b_ == 0) return a_.get_str();
    std::ostringstream os;
    os << a_.get_str() << (b_ > 0 ? " + " : " - ") << Rational(abs(b_)).get_str() << "*sqrt(" << d_ << ")";
    return os.str();
  }

 private:
  long common(const QuadNumber& o) const {
    if (o.b_ == 0 || o.d_ == 1) return d_;
    if (b_ == 0 || d_ == 1) return o.d_;
    if (d_ != o.d_) throw Error("QuadNumber: mixing different quadratic fields");
    return d_;
  }
  void normalize() {
    a_.canonicalize();
    b_.canonicalize();
    if (b_ == 0) d_ = 1;
  }

  Rational a_{0};
  Rational b_{0};
  long d_ = 1;
};

/*
 * Element (a + b*sqrt(D)) with integer a, b. Used as a DP weight when every
 * transition weight has been scaled into Z[sqrt(D)].
 */
struct QuadInteger {
  Integer a{0};
  Integer b{0};

  QuadInteger() = default;
  explicit QuadInteger(long x) : a(x) {}
  QuadInteger(Integer x, Integer y) : a(std::move(x)), b(std::move(y)) {}

  QuadInteger& add_mul(const QuadInteger& w, const QuadInteger& x, long d) {
    // *this += w * x
    a += w.a * x.a;
    if (w.b != 0 && x.b != 0) a += w.b * x.b * d;
    if (w.b != 0) b += w.b * x.a;
    if (x.b != 0) b += w.a * x.b;
    return *this;
  }
  bool is_zero() const { return a == 0 && b == 0; }
  friend bool operator==(const QuadInteger& x, const QuadInteger& y) { return x.a == y.a && x.b == y.b; }
};

inline HighFloat pi_high() { return boost::multiprecision::acos(HighFloat(-1)); }

}  // namespace nonuni
