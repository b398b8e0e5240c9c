/*
 * Return and first-return series, spectral radius, normalization a_n = u_n / rho^n,
 * generating functions, Cartesian products and the smoothness inequalities.
 *
 * A series produced from a chain is stored as integer numerators:
 *   value_n = numer_n / (base^n * scale)
 * with base = degree and scale = 1, so renewal inversion and all comparisons
 * stay in integer arithmetic.
 */
#pragma once

#include "arith.hpp"
#include "graph_models.hpp"
#include "numerics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace nonuni {

enum class Arithmetic { Exact, Float };
enum class SeriesKind { Return, FirstReturn, Synthetic };

inline const char* to_string(Arithmetic a) { return a == Arithmetic::Exact ? "exact" : "float"; }

inline Arithmetic parse_arithmetic(const std::string& s) {
  if (s == "exact") return Arithmetic::Exact;
  if (s == "float") return Arithmetic::Float;
  throw InvalidArgument("mode must be 'exact' or 'float'");
}

// Relative rounding unit of HighFloat.
inline HighFloat high_epsilon() { return boost::multiprecision::pow(HighFloat(2), -190); }

class ProbabilitySeries {
 public:
  SeriesKind kind = SeriesKind::Return;
  int period = 1;
  std::string label;

  static ProbabilitySeries from_counts(SeriesKind kind, int period, Integer base, Integer scale,
                                       std::vector<Integer> numer, std::string label = {}) {
    ProbabilitySeries s(kind, period, std::move(label));
    s.form_ = Form::Counts;
    s.base_ = std::move(base);
    s.scale_ = std::move(scale);
    s.numer_ = std::move(numer);
    s.build_view();
    return s;
  }

  static ProbabilitySeries from_rationals(SeriesKind kind, int period, std::vector<Rational> values,
                                          std::string label = {}) {
    ProbabilitySeries s(kind, period, std::move(label));
    s.form_ = Form::Rationals;
    s.rat_ = std::move(values);
    s.build_view();
    return s;
  }

  static ProbabilitySeries from_high(SeriesKind kind, int period, std::vector<HighFloat> values,
                                     std::vector<HighFloat> abs_error, std::string label = {}) {
    ProbabilitySeries s(kind, period, std::move(label));
    s.form_ = Form::Float;
    s.high_ = std::move(values);
    s.err_ = std::move(abs_error);
    return s;
  }

  std::size_t size() const { return form_ == Form::Counts ? numer_.size() : form_ == Form::Rationals ? rat_.size() : high_.size(); }
  int n_max() const { return static_cast<int>(size()) - 1; }
  bool exact() const { return form_ != Form::Float; }
  bool integer_form() const { return form_ == Form::Counts; }

  Rational value(int n) const {
    check(n);
    if (form_ == Form::Counts) return frac(numer_[idx(n)], ipow(base_, static_cast<unsigned long>(n)) * scale_);
    if (form_ == Form::Rationals) return rat_[idx(n)];
    throw InvalidArgument("series '" + label + "' holds only a float view");
  }
  const HighFloat& high(int n) const {
    check(n);
    return high_[idx(n)];
  }
  double approx(int n) const { return to_double(high(n)); }
  // Absolute error bound of the float view.
  HighFloat error(int n) const {
    check(n);
    if (form_ == Form::Float) return err_[idx(n)];
    return abs(high_[idx(n)]) * high_epsilon() * 4;
  }
  bool is_zero(int n) const {
    check(n);
    if (form_ == Form::Counts) return sgn(numer_[idx(n)]) == 0;
    if (form_ == Form::Rationals) return sgn(rat_[idx(n)]) == 0;
    return high_[idx(n)] == 0;
  }

  const Integer& numer(int n) const {
    check(n);
    return numer_.at(idx(n));
  }
  const Integer& base() const { return base_; }
  const Integer& scale() const { return scale_; }

  ProbabilitySeries truncated(int n) const {
    if (n > n_max()) throw InvalidArgument("cannot extend a series by truncation");
    ProbabilitySeries s = *this;
    auto cut = [&](auto& v) {
      if (!v.empty()) v.resize(idx(n) + 1);
    };
    cut(s.numer_);
    cut(s.rat_);
    cut(s.high_);
    cut(s.err_);
    return s;
  }

 private:
  enum class Form { Counts, Rationals, Float };

  ProbabilitySeries(SeriesKind k, int p, std::string l) : kind(k), period(p), label(std::move(l)) {}

  static std::size_t idx(int n) { return static_cast<std::size_t>(n); }
  void check(int n) const {
    if (n < 0 || n > n_max()) throw InvalidArgument("series index out of range");
  }
  void build_view() {
    high_.resize(size());
    if (form_ == Form::Counts) {
      Integer den = scale_;
      for (std::size_t n = 0; n < numer_.size(); ++n) {
        high_[n] = to_high(numer_[n]) / to_high(den);
        den *= base_;
      }
    } else {
      for (std::size_t n = 0; n < rat_.size(); ++n) high_[n] = to_high(rat_[n]);
    }
  }

  Form form_ = Form::Counts;
  Integer base_{1};
  Integer scale_{1};
  std::vector<Integer> numer_;
  std::vector<Rational> rat_;
  std::vector<HighFloat> high_;
  std::vector<HighFloat> err_;
};

// ---------------------------------------------------------------------------
// Return probabilities

inline constexpr double kDefaultWorkCap = 3e10;

// Rough count of limb operations for an n_max-step DP on the chain.
inline double estimated_dp_work(const CollapsedChain& c, int n_max, Arithmetic mode) {
  double row = 0;
  std::size_t rows = 0;
  for (const auto& r : c.rows)
    if (!r.empty()) {
      row += static_cast<double>(r.size());
      ++rows;
    }
  row = rows ? row / static_cast<double>(rows) : 1.0;
  double bits = std::log2(static_cast<double>(c.degree));
  double work = 0;
  for (int k = 1; k <= n_max; ++k) {
    double limbs = mode == Arithmetic::Exact ? 1.0 + k * bits / 64.0 : 4.0;
    work += static_cast<double>(c.prefix(std::min(k - 1, n_max - k + 1))) * row * limbs;
  }
  return work;
}

inline ProbabilitySeries return_probabilities(const CollapsedChain& c, int n_max, Arithmetic mode = Arithmetic::Exact,
                                              double work_cap = kDefaultWorkCap) {
  if (n_max < 0) throw InvalidArgument("n_max must be >= 0");
  if (n_max > c.horizon) throw InvalidArgument("n_max exceeds the chain horizon");
  double work = estimated_dp_work(c, n_max, mode);
  if (work > work_cap) {
    std::ostringstream os;
    os << "return probabilities for " << c.model << " up to n=" << n_max << " in " << to_string(mode)
       << " mode need about " << work << " limb operations, above the budget " << work_cap;
    throw BudgetExceeded(os.str());
  }
  if (mode == Arithmetic::Exact)
    return ProbabilitySeries::from_counts(SeriesKind::Return, c.period, c.degree, 1, chain_closed_walks(c, n_max),
                                          c.model);

  // Float DP over probabilities. Every term is positive, so the relative
  // error after k steps is at most k * (in-degree + 2) rounding units.
  std::vector<HighFloat> p_of(static_cast<std::size_t>(c.degree) + 1);
  for (long k = 0; k <= c.degree; ++k) p_of[static_cast<std::size_t>(k)] = HighFloat(k) / HighFloat(c.degree);
  std::vector<long> indeg(c.size(), 0);
  for (const auto& r : c.rows)
    for (const auto& t : r) indeg[static_cast<std::size_t>(t.target)] += 1;
  long max_in = *std::max_element(indeg.begin(), indeg.end());
  std::vector<HighFloat> cur(c.size(), HighFloat(0)), nxt(c.size(), HighFloat(0));
  std::vector<HighFloat> val(static_cast<std::size_t>(n_max) + 1), err(static_cast<std::size_t>(n_max) + 1);
  cur[0] = 1;
  val[0] = 1;
  err[0] = 0;
  HighFloat eps = high_epsilon();
  for (int k = 1; k <= n_max; ++k) {
    std::size_t src = c.prefix(std::min(k - 1, n_max - k + 1));
    std::size_t dst = c.prefix(std::min(k, n_max - k));
    for (std::size_t i = 0; i < dst; ++i) nxt[i] = 0;
    for (std::size_t i = 0; i < src; ++i) {
      if (cur[i] == 0) continue;
      for (const auto& t : c.rows[i])
        if (static_cast<std::size_t>(t.target) < dst) nxt[static_cast<std::size_t>(t.target)] += cur[i] * p_of[static_cast<std::size_t>(t.count)];
    }
    std::swap(cur, nxt);
    val[static_cast<std::size_t>(k)] = cur[0];
    err[static_cast<std::size_t>(k)] = cur[0] * eps * HighFloat(static_cast<long>(k) * (max_in + 3));
  }
  return ProbabilitySeries::from_high(SeriesKind::Return, c.period, std::move(val), std::move(err), c.model);
}

// u_n of the binomially mixed product walk on G1 x G2.
inline ProbabilitySeries cartesian_series(const ProbabilitySeries& u1, long d1, const ProbabilitySeries& u2, long d2,
                                          int n_max) {
  if (n_max > u1.n_max() || n_max > u2.n_max()) throw InvalidArgument("factor series too short");
  int period = u1.period == 2 && u2.period == 2 ? 2 : 1;
  std::string label = "product(" + u1.label + "," + u2.label + ")";
  std::vector<Integer> binom(static_cast<std::size_t>(n_max) + 1);
  if (u1.integer_form() && u2.integer_form() && u1.base() == d1 && u2.base() == d2) {
    // u_n = sum_k C(n,k) U1_k U2_{n-k} / ((d1+d2)^n s1 s2)
    std::vector<Integer> out(static_cast<std::size_t>(n_max) + 1);
    for (int n = 0; n <= n_max; ++n) {
      Integer acc = 0, cnk = 1;
      for (int k = 0; k <= n; ++k) {
        if (!u1.is_zero(k) && !u2.is_zero(n - k)) acc += cnk * u1.numer(k) * u2.numer(n - k);
        cnk = cnk * (n - k) / (k + 1);
      }
      out[static_cast<std::size_t>(n)] = acc;
    }
    return ProbabilitySeries::from_counts(SeriesKind::Return, period, d1 + d2, u1.scale() * u2.scale(), std::move(out),
                                          label);
  }
  if (u1.exact() && u2.exact()) {
    std::vector<Rational> out(static_cast<std::size_t>(n_max) + 1);
    Rational p1 = frac(d1, d1 + d2), p2 = frac(d2, d1 + d2);
    for (int n = 0; n <= n_max; ++n) {
      Rational acc = 0;
      Integer cnk = 1;
      for (int k = 0; k <= n; ++k) {
        acc += Rational(cnk) * rpow(p1, k) * rpow(p2, n - k) * u1.value(k) * u2.value(n - k);
        cnk = cnk * (n - k) / (k + 1);
      }
      out[static_cast<std::size_t>(n)] = acc;
    }
    return ProbabilitySeries::from_rationals(SeriesKind::Return, period, std::move(out), label);
  }
  std::vector<HighFloat> out(static_cast<std::size_t>(n_max) + 1), err(static_cast<std::size_t>(n_max) + 1);
  HighFloat p1 = HighFloat(d1) / (d1 + d2), p2 = HighFloat(d2) / (d1 + d2);
  for (int n = 0; n <= n_max; ++n) {
    HighFloat acc = 0, e = 0, cnk = 1;
    for (int k = 0; k <= n; ++k) {
      HighFloat w = cnk * pow(p1, k) * pow(p2, n - k);
      acc += w * u1.high(k) * u2.high(n - k);
      e += w * (u1.error(k) * u2.high(n - k) + u2.error(n - k) * u1.high(k));
      cnk = cnk * (n - k) / (k + 1);
    }
    out[static_cast<std::size_t>(n)] = acc;
    err[static_cast<std::size_t>(n)] = e + acc * high_epsilon() * (4 * n + 4);
  }
  return ProbabilitySeries::from_high(SeriesKind::Return, period, std::move(out), std::move(err), label);
}

// u_n of a model up to n_max: chain DP, or the product combinator.
inline ProbabilitySeries return_series(const WalkModel& model, int n_max, Arithmetic mode = Arithmetic::Exact) {
  if (auto* p = dynamic_cast<const ProductModel*>(&model)) {
    auto a = return_series(p->left(), n_max, mode);
    auto b = return_series(p->right(), n_max, mode);
    auto s = cartesian_series(a, p->left().degree(), b, p->right().degree(), n_max);
    s.label = model.name();
    return s;
  }
  auto chain = collapse(model, n_max);
  auto s = return_probabilities(chain, n_max, mode);
  s.label = model.name();
  return s;
}

// u_n from closed-walk counts in an explicit ball (n <= 2 * radius).
inline ProbabilitySeries ball_return_series(const WalkModel& model, int n_max) {
  auto g = enumerate_ball(model, (n_max + 1) / 2);
  return ProbabilitySeries::from_counts(SeriesKind::Return, model.period(), model.degree(), 1, ball_closed_walks(g, n_max),
                                        model.name());
}

// ---------------------------------------------------------------------------
// First returns

inline ProbabilitySeries first_return_probabilities(const ProbabilitySeries& u) {
  if (u.kind == SeriesKind::FirstReturn) throw InvalidArgument("input is already a first-return series");
  if (u.is_zero(0) || (u.exact() && u.value(0) != 1)) throw InvalidArgument("return series must start with u_0 = 1");
  int N = u.n_max();
  std::size_t sz = static_cast<std::size_t>(N) + 1;
  int d = u.period;
  if (u.integer_form() && u.scale() == 1) {
    // F_n = U_n - sum_{k<n} F_k U_{n-k}, all with the common base^n.
    std::vector<Integer> F(sz, 0);
    for (int n = d; n <= N; n += d) {
      Integer acc = u.numer(n);
      for (int k = d; k < n; k += d)
        if (sgn(F[static_cast<std::size_t>(k)]) != 0 && !u.is_zero(n - k)) acc -= F[static_cast<std::size_t>(k)] * u.numer(n - k);
      F[static_cast<std::size_t>(n)] = std::move(acc);
    }
    if (d == 2)
      for (int n = 1; n <= N; n += 2)
        if (!u.is_zero(n)) throw InvariantViolation("period-2 series has a nonzero odd term");
    return ProbabilitySeries::from_counts(SeriesKind::FirstReturn, d, u.base(), 1, std::move(F), u.label);
  }
  if (u.exact()) {
    std::vector<Rational> f(sz, Rational(0));
    for (int n = 1; n <= N; ++n) {
      Rational acc = u.value(n);
      for (int k = 1; k < n; ++k)
        if (sgn(f[static_cast<std::size_t>(k)]) != 0) acc -= f[static_cast<std::size_t>(k)] * u.value(n - k);
      f[static_cast<std::size_t>(n)] = acc;
    }
    return ProbabilitySeries::from_rationals(SeriesKind::FirstReturn, d, std::move(f), u.label);
  }
  std::vector<HighFloat> f(sz, HighFloat(0)), e(sz, HighFloat(0));
  HighFloat eps = high_epsilon();
  for (int n = 1; n <= N; ++n) {
    HighFloat acc = u.high(n), err = u.error(n);
    for (int k = 1; k < n; ++k) {
      acc -= f[static_cast<std::size_t>(k)] * u.high(n - k);
      err += e[static_cast<std::size_t>(k)] * u.high(n - k) + f[static_cast<std::size_t>(k)] * u.error(n - k);
    }
    f[static_cast<std::size_t>(n)] = acc;
    e[static_cast<std::size_t>(n)] = err + u.high(n) * eps * (2 * n + 2);
  }
  return ProbabilitySeries::from_high(SeriesKind::FirstReturn, d, std::move(f), std::move(e), u.label);
}

// First returns by a DP that removes the root mass after every step.
inline ProbabilitySeries taboo_first_return(const CollapsedChain& c, int n_max) {
  if (n_max > c.horizon) throw InvalidArgument("n_max exceeds the chain horizon");
  std::vector<Integer> cur(c.size()), nxt(c.size());
  std::vector<Integer> F(static_cast<std::size_t>(n_max) + 1, 0);
  cur[0] = 1;
  for (int k = 1; k <= n_max; ++k) {
    std::size_t src = c.prefix(std::min(k - 1, n_max - k + 1));
    std::size_t dst = c.prefix(std::min(k, n_max - k));
    for (std::size_t i = 0; i < dst; ++i) nxt[i] = 0;
    for (std::size_t i = 0; i < src; ++i) {
      if (sgn(cur[i]) == 0) continue;
      for (const auto& t : c.rows[i])
        if (static_cast<std::size_t>(t.target) < dst)
          mpz_addmul_ui(nxt[static_cast<std::size_t>(t.target)].get_mpz_t(), cur[i].get_mpz_t(), static_cast<unsigned long>(t.count));
    }
    std::swap(cur, nxt);
    F[static_cast<std::size_t>(k)] = cur[0];
    cur[0] = 0;
  }
  return ProbabilitySeries::from_counts(SeriesKind::FirstReturn, c.period, c.degree, 1, std::move(F), c.model);
}

// Exact check of u_n = sum_{k=1}^n f_k u_{n-k} for 1 <= n <= N; returns the
// first failing n or -1.
inline int renewal_violation(const ProbabilitySeries& u, const ProbabilitySeries& f) {
  int N = std::min(u.n_max(), f.n_max());
  bool ints = u.integer_form() && f.integer_form() && u.scale() == 1 && f.scale() == 1 && u.base() == f.base();
  for (int n = 1; n <= N; ++n) {
    if (ints) {
      Integer acc = 0;
      for (int k = 1; k <= n; ++k)
        if (!f.is_zero(k) && !u.is_zero(n - k)) acc += f.numer(k) * u.numer(n - k);
      if (acc != u.numer(n)) return n;
    } else {
      Rational acc = 0;
      for (int k = 1; k <= n; ++k) acc += f.value(k) * u.value(n - k);
      if (acc != u.value(n)) return n;
    }
  }
  return -1;
}

inline bool series_equal(const ProbabilitySeries& a, const ProbabilitySeries& b) {
  if (a.n_max() != b.n_max()) return false;
  bool ints = a.integer_form() && b.integer_form() && a.base() == b.base() && a.scale() == b.scale();
  for (int n = 0; n <= a.n_max(); ++n) {
    if (ints ? a.numer(n) != b.numer(n) : a.value(n) != b.value(n)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Spectral radius

struct RatioLimit {
  HighFloat rho_squared;
  HighFloat uncertainty;  // on rho^2
  HighFloat lower_bound;  // last even ratio; ratios increase to rho^2
  std::size_t ratios = 0;
};

inline std::vector<double> exponent_ladder(bool stretched) {
  if (stretched) return {2.0 / 3.0, 1.0, 4.0 / 3.0, 5.0 / 3.0, 2.0};
  return {1.0, 2.0, 3.0, 4.0};
}

/*
 * Limit of r_k = u_{2k+2} / u_{2k} by a least-squares fit
 *   r_k = L + sum_j c_j k^{-e_j}
 * over the last half of the available ratios. The uncertainty is the spread
 * between fits with one fewer correction term and on a shorter window.
 */
inline RatioLimit ratio_limit(const ProbabilitySeries& u, const std::vector<double>& ladder) {
  std::vector<HighFloat> r;
  for (int k = 1; 2 * k + 2 <= u.n_max(); ++k) {
    if (u.high(2 * k) == 0) throw InvalidArgument("zero even term in return series");
    r.push_back(u.high(2 * k + 2) / u.high(2 * k));
  }
  std::size_t K = r.size();
  if (K < 2 * ladder.size() + 8) throw InvalidArgument("series too short for the ratio-limit estimator");
  auto fit = [&](std::size_t from, std::size_t terms) {
    std::vector<std::vector<HighFloat>> X;
    std::vector<HighFloat> y;
    for (std::size_t i = from; i < K; ++i) {
      HighFloat k = HighFloat(static_cast<long>(i + 1));
      std::vector<HighFloat> row{HighFloat(1)};
      for (std::size_t j = 0; j < terms; ++j) row.push_back(pow(k, HighFloat(-ladder[j])));
      X.push_back(std::move(row));
      y.push_back(r[i]);
    }
    return least_squares(std::move(X), std::move(y))[0];
  };
  std::size_t m = ladder.size();
  HighFloat full = fit(K / 2, m);
  HighFloat fewer = fit(K / 2, m - 1);
  HighFloat shorter = fit(K - K / 4 - m - 2, m);
  RatioLimit out;
  out.rho_squared = full;
  out.uncertainty = std::max(abs(full - fewer), abs(full - shorter));
  out.lower_bound = r.back();
  out.ratios = K;
  return out;
}

struct SpectralRadius {
  HighFloat value;
  std::optional<QuadNumber> exact;
  std::string provenance;  // "closed-form" or "ratio-limit"
  HighFloat uncertainty = 0;
  std::optional<HighFloat> ratio_estimate;
  std::optional<HighFloat> ratio_uncertainty;

  // rho^2 in closed form; set without `exact` when rho itself spans two fields
  std::optional<QuadNumber> exact_square;

  std::optional<QuadNumber> rho_squared() const {
    if (exact) return *exact * *exact;
    return exact_square;
  }
  std::optional<Rational> rho_squared_rational() const {
    auto s = rho_squared();
    if (s && s->is_rational()) return s->rational_part();
    return std::nullopt;
  }
  std::string str() const { return exact ? exact->str() : to_string(value, 30); }

  static SpectralRadius closed(const QuadNumber& q) {
    SpectralRadius s;
    s.value = q.to_high();
    s.exact = q;
    s.provenance = "closed-form";
    return s;
  }
  static SpectralRadius numeric(HighFloat v, HighFloat unc, std::string provenance) {
    SpectralRadius s;
    s.value = v;
    s.uncertainty = unc;
    s.provenance = std::move(provenance);
    return s;
  }
};

// Closed form when the family has one, otherwise the ratio-limit estimate.
// The ratio-limit estimate is always attached when u has enough terms.
inline SpectralRadius spectral_radius(const WalkModel& model, const ProbabilitySeries& u) {
  std::optional<RatioLimit> rl;
  auto ladder = exponent_ladder(model.stretched_tail());
  try {
    rl = ratio_limit(u, ladder);
  } catch (const InvalidArgument&) {
  }
  SpectralRadius out;
  if (auto q = model.closed_form_rho()) {
    out = SpectralRadius::closed(*q);
  } else if (auto h = model.closed_form_rho_high()) {
    out = SpectralRadius::numeric(*h, 0, "closed-form");
    out.exact_square = model.closed_form_rho_squared();
  } else {
    if (!rl || rl->ratios < 100) throw InvalidArgument("series too short for the ratio-limit estimator (need >= 100 even terms)");
    HighFloat rho = sqrt(rl->rho_squared);
    out = SpectralRadius::numeric(rho, rl->uncertainty / (2 * rho), "ratio-limit");
  }
  if (rl) {
    HighFloat rho = sqrt(rl->rho_squared);
    out.ratio_estimate = rho;
    out.ratio_uncertainty = rl->uncertainty / (2 * rho);
  }
  return out;
}

// rho from the harmonic sum (1/d) sum_q t_q sqrt(q) of a neighbor profile.
inline QuadNumber harmonic_rho(const LevelProfile& p) {
  QuadNumber s(Rational(0));
  for (const auto& e : p.entries) s += QuadNumber(Rational(e.count)) * QuadNumber::sqrt_of(e.q);
  return s / QuadNumber(Rational(p.degree));
}

// ---------------------------------------------------------------------------
// Normalized series a_n = u_n / rho^n

struct NormalizedSeries {
  int period = 1;
  std::vector<HighFloat> value;
  std::vector<std::optional<Rational>> exact;  // even n when rho^2 is rational

  int n_max() const { return static_cast<int>(value.size()) - 1; }
  const HighFloat& operator[](int n) const { return value.at(static_cast<std::size_t>(n)); }
};

inline NormalizedSeries normalized_series(const ProbabilitySeries& u, const SpectralRadius& rho) {
  NormalizedSeries a;
  a.period = u.period;
  a.value.resize(u.size());
  a.exact.resize(u.size());
  auto rho2 = rho.rho_squared_rational();
  HighFloat pw = 1;
  for (int n = 0; n <= u.n_max(); ++n) {
    a.value[static_cast<std::size_t>(n)] = u.high(n) / pw;
    pw *= rho.value;
    if (rho2 && u.exact() && n % 2 == 0) a.exact[static_cast<std::size_t>(n)] = u.value(n) / rpow(*rho2, n / 2);
  }
  return a;
}

// a_n as an element of Q(sqrt D) when rho has a closed form.
inline QuadNumber normalized_exact(const ProbabilitySeries& u, const SpectralRadius& rho, int n) {
  if (!rho.exact) throw InvalidArgument("normalized_exact needs a closed-form rho");
  return QuadNumber(u.value(n)) / rho.exact->pow(static_cast<unsigned>(n));
}

// Slope of log a_n against log n on [lo, hi] (indices divisible by the period).
inline LinearFit fit_exponent(const NormalizedSeries& a, int lo, int hi) {
  if (lo < 1 || hi > a.n_max() || lo >= hi) throw InvalidArgument("fit window outside the series");
  std::vector<double> x, y;
  for (int n = lo; n <= hi; ++n) {
    if (n % a.period != 0) continue;
    double v = to_double(a[n]);
    if (!(v > 0)) throw InvalidArgument("nonpositive value in fit window");
    x.push_back(std::log(static_cast<double>(n)));
    y.push_back(std::log(v));
  }
  return linear_fit(x, y);
}

// ---------------------------------------------------------------------------
// Generating functions

enum class TailModel { PowerLaw, Geometric };

struct GeneratingValue {
  HighFloat partial;
  HighFloat tail_lo;
  HighFloat tail_hi;
  double fitted_exponent = 0;
  HighFloat lo() const { return partial + tail_lo; }
  HighFloat hi() const { return partial + tail_hi; }
  HighFloat mid() const { return partial + (tail_lo + tail_hi) / 2; }
  HighFloat radius() const { return (tail_hi - tail_lo) / 2; }
};

namespace detail {

// sum over m > M of C (d m)^(-g) w^(d m), for 0 < w <= 1 and g > 1 when w = 1.
inline HighFloat power_tail(HighFloat C, HighFloat g, int d, long M, HighFloat w) {
  HighFloat one_minus = 1 - w;
  HighFloat sum = 0;
  HighFloat dd = d;
  if (one_minus * HighFloat(M * d) < HighFloat("1e-25")) {
    if (g <= 1) throw Error("tail-model-diverges: fitted exponent <= 1 at the radius of convergence");
    // Euler-Maclaurin for sum_{m > M} m^(-g).
    HighFloat Mh = M;
    HighFloat z = pow(Mh, 1 - g) / (g - 1) - pow(Mh, -g) / 2 + g * pow(Mh, -g - 1) / 12;
    return C * pow(dd, -g) * z;
  }
  HighFloat wd = pow(w, d);
  HighFloat term_w = pow(w, d * (M + 1));
  for (long m = M + 1; m < M + 50'000'000; ++m) {
    HighFloat t = C * pow(dd * m, -g) * term_w;
    sum += t;
    if (t < sum * HighFloat("1e-45")) return sum;
    term_w *= wd;
  }
  return sum;
}

}  // namespace detail

/*
 * sum_n s_n z^n with a tail interval. PowerLaw fits s_n (rho z)^{-n} ... as
 * C n^{-g} on two trailing windows and brackets the extrapolated tail.
 * Geometric bounds the tail by the worst trailing term ratio.
 */
inline GeneratingValue evaluate_generating(const ProbabilitySeries& s, const HighFloat& z, const SpectralRadius& rho,
                                           TailModel tail = TailModel::PowerLaw) {
  if (z < 0 || z * rho.value > 1 + HighFloat("1e-40")) throw InvalidArgument("z outside [0, 1/rho]");
  GeneratingValue g;
  int N = s.n_max();
  int d = s.period;
  HighFloat zn = 1;
  g.partial = 0;
  for (int n = 0; n <= N; ++n) {
    g.partial += s.high(n) * zn;
    zn *= z;
  }
  g.tail_lo = g.tail_hi = 0;
  if (z == 0) return g;
  HighFloat w = z * rho.value;
  if (w > 1) w = 1;
  long top = N - N % d;
  if (tail == TailModel::Geometric) {
    HighFloat theta = 0;
    for (long n = top / 2; n + d <= top; n += d) {
      HighFloat a = s.high(static_cast<int>(n)) * pow(z, n);
      HighFloat b = s.high(static_cast<int>(n + d)) * pow(z, n + d);
      if (a > 0) theta = std::max(theta, b / a);
    }
    if (theta >= 1) throw Error("tail-model-diverges: trailing term ratios are not below 1");
    g.tail_hi = s.high(static_cast<int>(top)) * pow(z, top) * theta / (1 - theta);
    return g;
  }
  // Fit a_n = s_n / rho^n on [from, top].
  auto fit_from = [&](long from) {
    std::vector<double> x, y;
    std::vector<HighFloat> lx, ly;
    for (long n = from; n <= top; n += d) {
      HighFloat a = s.high(static_cast<int>(n)) / pow(rho.value, n);
      if (!(a > 0)) throw InvalidArgument("nonpositive term in tail window");
      lx.push_back(log(HighFloat(n)));
      ly.push_back(log(a));
    }
    std::vector<std::vector<HighFloat>> X;
    for (auto& v : lx) X.push_back({HighFloat(1), v});
    auto c = least_squares(X, ly);
    return std::pair<HighFloat, HighFloat>{exp(c[0]), -c[1]};
  };
  auto [C1, g1] = fit_from(std::max<long>(d, top / 2 - (top / 2) % d));
  auto [C2, g2] = fit_from(std::max<long>(d, (3 * top) / 4 - ((3 * top) / 4) % d));
  HighFloat t1 = detail::power_tail(C1, g1, d, top / d, w);
  HighFloat t2 = detail::power_tail(C2, g2, d, top / d, w);
  HighFloat spread = abs(t1 - t2);
  HighFloat base_lo = std::min(t1, t2), base_hi = std::max(t1, t2);
  g.tail_lo = std::max(HighFloat(0), base_lo - spread - base_lo / 20);
  g.tail_hi = base_hi + spread + base_hi / 20;
  g.fitted_exponent = to_double(g2);
  return g;
}

// ---------------------------------------------------------------------------
// Smoothness

struct SmoothnessReport {
  bool ok = true;
  bool exact = false;  // comparisons done without rounding
  std::vector<std::string> violations;
  HighFloat c1_even;   // min over even n, k of u_{n-2k} rho^{2k} / u_n
  std::optional<HighFloat> c1_odd;
  std::vector<std::pair<int, HighFloat>> trajectory;  // (n, u_{n+d}/u_n)
  HighFloat rho_power;                                 // rho^d
  int checked = 0;
};

inline SmoothnessReport check_smoothness(const ProbabilitySeries& u, const SpectralRadius& rho) {
  if (u.n_max() < 20) throw InvalidArgument("series too short for the smoothness checks");
  SmoothnessReport rep;
  int N = u.n_max();
  auto rho2q = rho.rho_squared();
  rep.exact = u.exact() && rho2q.has_value();
  auto fail = [&](std::string msg) {
    rep.ok = false;
    if (rep.violations.size() < 20) rep.violations.push_back(std::move(msg));
  };
  HighFloat rho2 = rho.value * rho.value;
  Rational u2 = u.exact() ? u.value(2) : Rational(0);
  for (int k = 1; 2 * k + 2 <= N; ++k) {
    ++rep.checked;
    if (rep.exact) {
      Rational ratio;
      if (u.integer_form())
        ratio = frac(u.numer(2 * k + 2), u.numer(2 * k) * u.base() * u.base());
      else
        ratio = u.value(2 * k + 2) / u.value(2 * k);
      if (ratio < u2) fail("u_2 > u_{2k+2}/u_{2k} at k=" + std::to_string(k));
      if (QuadNumber(ratio) > *rho2q) fail("u_{2k+2}/u_{2k} > rho^2 at k=" + std::to_string(k));
    } else {
      HighFloat ratio = u.high(2 * k + 2) / u.high(2 * k);
      HighFloat tol = (u.error(2 * k + 2) / u.high(2 * k + 2) + u.error(2 * k) / u.high(2 * k)) * ratio +
                      rho.uncertainty * 2 * rho.value;
      if (ratio < u.high(2) - tol) fail("u_2 > u_{2k+2}/u_{2k} at k=" + std::to_string(k));
      if (ratio > rho2 + tol) fail("u_{2k+2}/u_{2k} > rho^2 at k=" + std::to_string(k));
    }
  }
  for (int m = 0; 2 * m + 1 <= N; ++m) {
    bool bad = u.integer_form() ? u.numer(2 * m + 1) > u.numer(2 * m) * u.base()
               : u.exact()      ? u.value(2 * m + 1) > u.value(2 * m)
                                : u.high(2 * m + 1) > u.high(2 * m) + u.error(2 * m) + u.error(2 * m + 1);
    if (bad) fail("u_{2m+1} > u_{2m} at m=" + std::to_string(m));
  }
  // c1 for even n: min_{i < j even} a_i / a_j, via a running minimum.
  HighFloat run_min = 1, c1 = HighFloat(1e9);
  HighFloat pw = 1;
  std::vector<HighFloat> a(static_cast<std::size_t>(N) + 1);
  for (int n = 0; n <= N; ++n) {
    a[static_cast<std::size_t>(n)] = u.high(n) / pw;
    pw *= rho.value;
  }
  for (int n = 2; n <= N; n += 2) {
    c1 = std::min(c1, run_min / a[static_cast<std::size_t>(n)]);
    run_min = std::min(run_min, a[static_cast<std::size_t>(n)]);
  }
  rep.c1_even = c1;
  if (u.period == 1) {
    HighFloat best = HighFloat(1e9);
    for (int n = 1; n <= N; n += 2) {
      if (u.high(n) == 0) continue;
      for (int j = n % 2; j < n; j += 2)
        if (u.high(j) > 0) best = std::min(best, a[static_cast<std::size_t>(j)] / a[static_cast<std::size_t>(n)]);
    }
    if (best < HighFloat(1e9)) rep.c1_odd = best;
  }
  int d = u.period;
  rep.rho_power = pow(rho.value, d);
  for (int n = d; n + d <= N; n *= 2) {
    if (n % d != 0) continue;
    rep.trajectory.push_back({n, u.high(n + d) / u.high(n)});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Export

inline void write_series_csv(std::ostream& os, const ProbabilitySeries& u, const ProbabilitySeries& f,
                             const NormalizedSeries* a, bool exact_columns) {
  os << "n,u_n,f_n,a_n,f_over_u";
  if (exact_columns) os << ",u_exact,f_exact";
  os << '\n';
  for (int n = 0; n <= u.n_max(); ++n) {
    os << n << ',' << to_string(u.high(n), 40) << ',' << to_string(f.high(n), 40) << ',';
    if (a) os << to_string((*a)[n], 40);
    os << ',';
    if (u.high(n) > 0) os << to_string(f.high(n) / u.high(n), 40);
    if (exact_columns) os << ',' << u.value(n).get_str() << ',' << f.value(n).get_str();
    os << '\n';
  }
}

}  // namespace nonuni
