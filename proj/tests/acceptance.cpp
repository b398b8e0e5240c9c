// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Run a single criterion with `acceptance <k>`.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>

#include "nonuni/nonuni.hpp"

using namespace nonuni;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[fail] " << what << "; ";
    }
  }
  template <class T>
  Outcome& note(const T& x) {
    detail << x;
    return *this;
  }
};

LevelIncrementLaw law_of(const WalkModel& m) {
  auto law = increment_law(neighbor_level_profile(m), spectral_radius(m, return_series(m, 30)));
  law.source = m.name();
  return law;
}

QuadInteger lookup(const std::map<long, QuadInteger>& m, long k) {
  auto it = m.find(k);
  return it == m.end() ? QuadInteger() : it->second;
}

// 1. collapsed chain against explicit balls
void ac1(Outcome& o) {
  for (const char* s : {"tree(b=2)", "tree(b=3)", "fixed-end-tree(b=2)", "fixed-end-tree(b=3)", "grandparent(b=2)",
                        "dl(q=2,r=3)"}) {
    auto rep = validate_collapse(*build_model(s), 12);
    o.require(rep.ok && rep.rows.size() == 13, std::string("ball/chain mismatch on ") + s);
  }
  o.note("6 models, n <= 12, exact rationals");
}

// 2. exact anchors
void ac2(Outcome& o) {
  auto tu = return_series(*build_model("tree(b=2)"), 4);
  auto tf = first_return_probabilities(tu);
  o.require(tu.value(2) == Rational(1, 3), "tree u2");
  o.require(tu.value(4) == Rational(5, 27), "tree u4");
  o.require(tf.value(4) == Rational(2, 27), "tree f4");
  auto gu = return_series(*build_model("grandparent(b=2)"), 4);
  auto gf = first_return_probabilities(gu);
  o.require(gu.value(2) == Rational(1, 8) && gf.value(2) == Rational(1, 8), "grandparent u2 = f2 = 1/8");
  o.note("u2=").note(tu.value(2)).note(" u4=").note(tu.value(4)).note(" f4=").note(tf.value(4)).note(" gp u2=").note(gu.value(2));
}

// 3. renewal inversion against taboo DP
void ac3(Outcome& o) {
  for (const char* s : {"tree(b=2)", "grandparent(b=2)"}) {
    auto m = build_model(s);
    auto c = collapse(*m, 200);
    auto u = return_probabilities(c, 200);
    auto f = first_return_probabilities(u);
    auto t = taboo_first_return(c, 200);
    o.require(series_equal(f, t), std::string("renewal != taboo on ") + s);
  }
  o.note("tree, grandparent, n <= 200 exact");
}

// 4. mass transport identities
void ac4(Outcome& o) {
  long rows = 0;
  for (auto [s, r] : std::vector<std::pair<const char*, int>>{{"tree(b=2)", 5},
                                                              {"fixed-end-tree(b=2)", 5},
                                                              {"fixed-end-tree(b=3)", 5},
                                                              {"grandparent(b=2)", 4},
                                                              {"dl(q=2,r=3)", 5},
                                                              {"product(fixed-end-tree(b=2),fixed-end-tree(b=3))", 4}}) {
    auto m = build_model(s);
    o.require(check_neighbor_mtp(neighbor_level_profile(*m)).ok, std::string("t_{1/q} != q t_q on ") + s);
    auto rep = check_mtp(enumerate_ball(*m, r), r - 1);
    for (const auto& row : rep.rows) {
      o.require(row.residual() == 0, std::string("nonzero residual on ") + s);
      ++rows;
    }
  }
  for (const char* s : {"fixed-end-tree(b=2)", "grandparent(b=2)", "dl(q=2,r=3)", "free-product(alpha=3,beta=5)"}) {
    auto m = build_model(s);
    o.require(check_schema(build_orbit_schema(*m)).ok, std::string("schema counts on ") + s);
    if (std::string(s).rfind("free", 0) != 0) o.require(check_schema(build_orbit_schema(*m, true)).ok, std::string("parity schema on ") + s);
  }
  o.note(rows).note(" residual rows, all exactly 0; schemas balanced");
}

// 5. spectral radii: closed form against the ratio-limit estimate
void ac5(Outcome& o) {
  auto dl = build_model("dl(q=2,r=3)");
  auto du = return_series(*dl, 120, Arithmetic::Float);
  auto dr = spectral_radius(*dl, du);
  HighFloat dd = abs(dr.value - *dr.ratio_estimate);
  o.require(dr.exact && dr.exact->str() == QuadNumber(Rational(0), Rational(2, 5), 6).str(), "DL closed form 2 sqrt6/5");
  o.require(dd <= HighFloat("1e-4"), "DL ratio-limit within 1e-4");
  auto gp = build_model("grandparent(b=2)");
  auto gu = return_series(*gp, 200, Arithmetic::Float);
  auto gr = spectral_radius(*gp, gu);
  HighFloat gd = abs(gr.value - *gr.ratio_estimate);
  o.require(gd <= HighFloat("1e-4"), "grandparent ratio-limit within 1e-4");
  o.note("DL |closed - ratio| = ").note(to_double(dd)).note(" (n=120, est. unc ").note(to_double(*dr.ratio_uncertainty))
      .note("); grandparent = ").note(to_double(gd)).note(" (n=200)");
}

// 6. polynomial exponents and the tree constant
void ac6(Outcome& o) {
  auto tree = build_model("tree(b=2)");
  auto u = return_series(*tree, 2000, Arithmetic::Float);
  auto a = normalized_series(u, spectral_radius(*tree, u));
  // a_{2n} against n on [100, 1000]
  std::vector<double> x, y;
  for (int n = 100; n <= 1000; ++n) {
    x.push_back(std::log(static_cast<double>(n)));
    y.push_back(std::log(to_double(a[2 * n])));
  }
  double slope = linear_fit(x, y).slope;
  o.require(std::abs(slope + 1.5) <= 0.05, "tree slope -1.5 +- 0.05");
  double got = to_double(a[2000]) * std::pow(1000.0, 1.5);
  double want = 1 / std::sqrt(2 * M_PI) * 3.0 / 4.0;
  o.require(std::abs(got / want - 1) <= 0.1, "tree a_{2n} n^{3/2} within 10% of the stated constant");
  auto gp = build_model("grandparent(b=2)");
  auto gu = return_series(*gp, 500, Arithmetic::Float);
  auto gfit = fit_exponent(normalized_series(gu, spectral_radius(*gp, gu)), 50, 500);
  o.require(std::abs(gfit.slope + 1.5) <= 0.1, "grandparent slope -1.5 +- 0.1");
  o.note("tree slope ").note(slope).note(", a_2000 1000^1.5 = ").note(got).note(" vs stated ").note(want)
      .note(" (ratio ").note(got / want).note("); grandparent slope ").note(gfit.slope);
}

// 7. stretched-exponential shape on DL
void ac7(Outcome& o) {
  auto dl = build_model("dl(q=2,r=3)");
  auto u = return_series(*dl, 300, Arithmetic::Float);
  auto a = normalized_series(u, spectral_radius(*dl, u));
  std::vector<double> x, y;
  for (int n = 30; n <= 150; ++n) {
    x.push_back(std::cbrt(static_cast<double>(n)));
    y.push_back(std::log(to_double(a[2 * n])));
  }
  auto fit = linear_fit(x, y);
  o.require(fit.r2 >= 0.99, "R^2 >= 0.99");
  o.note("log a_{2n} vs n^{1/3}: slope ").note(fit.slope).note(", R^2 ").note(fit.r2);
}

// 8. ballot DPs: enumeration, completeness, bounded normalized ratios
void ac8(Outcome& o) {
  auto gp = build_model("grandparent(b=2)");
  std::vector<LevelIncrementLaw> laws{simple_law(), law_of(*gp)};
  for (const auto& law : laws) {
    auto e = enumerate_level_paths(law, 12);
    bool same = true;
    for (int n = 1; n <= 12; ++n) {
      same = same && level_return_law(law, n).back().weight == e.returns[static_cast<std::size_t>(n)];
      for (long r = 0; r <= n + 1; ++r) {
        same = same && ballot_probability(law, n, r).weight == lookup(e.ballot[static_cast<std::size_t>(n)], r);
        same = same && max_and_return(law, n, r).weight == lookup(e.max_return[static_cast<std::size_t>(n)], r);
      }
    }
    for (long r = 1; r <= 4; ++r) {
      auto h = hitting_time_law(law, r, 12);
      for (int k = 1; k <= 12; ++k) {
        QuadInteger want = e.hitting.count(r) ? e.hitting.at(r)[static_cast<std::size_t>(k)] : QuadInteger();
        same = same && h[static_cast<std::size_t>(k)].weight == want;
      }
    }
    o.require(same, "enumeration mismatch for " + (law.source.empty() ? std::string("pm1") : law.source));
  }
  // completeness: every n <= 200 (pm1) and <= 100 (grandparent), then {500, 1000}, and 2000 for pm1
  long checked = 0;
  for (std::size_t li = 0; li < laws.size(); ++li) {
    int dense = li == 0 ? 200 : 100;
    for (int n = 1; n <= dense; ++n, ++checked) o.require(max_return_completeness(laws[li], n).ok, "completeness n=" + std::to_string(n));
    std::vector<int> grid{500, 1000};
    if (li == 0) grid.push_back(2000);
    for (int n : grid) {
      o.require(max_return_completeness(laws[li], n).ok, "completeness n=" + std::to_string(n));
      ++checked;
    }
  }
  o.note(checked).note(" completeness identities exact; sups:");
  std::vector<long> rg;
  for (long r = 0; r <= 20; ++r) rg.push_back(r);
  for (const auto& law : laws) {
    auto s = bound_constant_scan(law, {200, 500, 1000, 2000}, rg);
    bool finite = std::isfinite(s.ballot_sup) && std::isfinite(s.max_return_sup) && std::isfinite(s.hitting_sup) &&
                  std::isfinite(s.assembled_sup);
    o.require(finite && s.positive, "bound scan not finite/positive");
    o.note(" [").note(law.source.empty() ? "pm1" : law.source).note(": ballot ").note(s.ballot_sup).note(", max/return ")
        .note(s.max_return_sup).note(", hitting ").note(s.hitting_sup).note(", assembled ").note(s.assembled_sup).note("]");
  }
}

// 9. Doob transform
void ac9(Outcome& o) {
  for (const char* s : {"fixed-end-tree(b=2)", "fixed-end-tree(b=3)", "grandparent(b=2)"}) {
    auto m = build_model(s);
    auto c = collapse(*m, 100);
    auto u = return_probabilities(c, 100);
    auto rho = spectral_radius(*m, u);
    auto dc = doob_chain(c, rho);
    o.require(dc.rows_stochastic && dc.reversible, std::string("doob chain not stochastic/reversible on ") + s);
    auto ex = doob_return_exact(dc, 100);
    for (int n = 0; n <= 100; n += 2)
      o.require(ex[static_cast<std::size_t>(n)] == normalized_exact(u, rho, n), std::string(s) + " n=" + std::to_string(n));
  }
  o.note("fixed-end-tree(2,3), grandparent(2): even n <= 100 exact in Q(sqrt b), reversible");
}

// 10. quasi-transitive parity schema
void ac10(Outcome& o) {
  auto m = build_model("fixed-end-tree(b=2)");
  auto rep = analyze_schema(build_orbit_schema(*m, true));
  HighFloat want = 2 * sqrt(HighFloat(2)) / 3;
  HighFloat err = abs(rep.perron.rho - want);
  o.require(err <= HighFloat("1e-12"), "rho(A) = 2 sqrt2/3");
  o.require(rep.perron.pi.size() == 2 && abs(rep.perron.pi[0] - HighFloat(0.5)) <= HighFloat("1e-12") &&
                abs(rep.perron.pi[1] - HighFloat(0.5)) <= HighFloat("1e-12"),
            "pi = (1/2, 1/2)");
  o.require(rep.stationary.ok, "stationarity / exact mean cancellation");
  o.require(rep.ok(), "schema report");
  auto law = law_of(*m);
  auto c = induced_chain(build_orbit_schema(*m), perron(a_matrix(build_orbit_schema(*m))));
  bool same = c.exact;
  for (int n = 1; n <= 30; ++n)
    for (long r = 0; r <= 5; ++r) same = same && markov_ballot(c, n, r).exact_value(c) == ballot_probability(law, n, r).exact_value(law);
  o.require(same, "L=1 markov_ballot = level-walk ballot");
  o.note("|rho - 2 sqrt2/3| = ").note(to_double(err)).note(", Perron residual ").note(to_double(rep.perron.residual));
}

// 11. conditioned bridges
void ac11(Outcome& o) {
  auto gp = build_model("grandparent(b=2)");
  auto st = mc_bridge_statistics(*gp, 100, 100000, 20240601, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  double worst_z = 0;
  for (const auto& r : st.rows) {
    double e = to_double(to_high(*r.exact_visits));
    o.require(r.visits_within_3se(), "sampled visits off exact at k=" + std::to_string(r.k));
    o.require(r.distinct_mean <= e + 3 * r.distinct_se + 1e-12, "distinct mean above exact visits at k=" + std::to_string(r.k));
    if (r.visits_se > 0) worst_z = std::max(worst_z, std::abs(r.visits_mean - e) / r.visits_se);
    if (r.k >= 3) o.require(r.hit <= r.bound + 3 * r.hit_se, "hitting bound at k=" + std::to_string(r.k));
  }
  for (auto [s, n] : std::vector<std::pair<const char*, int>>{{"tree(b=2)", 4}, {"tree(b=2)", 6}, {"tree(b=3)", 6}}) {
    auto rep = inclusion_symmetry(*build_model(s), n, 2);
    o.require(rep.ok, std::string("inclusion symmetry on ") + s);
  }
  o.note("grandparent n=100, 1e5 samples: max |z| of visits ").note(worst_z).note("; hit(k=3) ")
      .note(st.rows[3].hit).note(" <= ").note(st.rows[3].bound).note("; tree symmetry exact");
}

// 12. first-return ratio and excursion law
void ac12(Outcome& o) {
  auto tree = build_model("tree(b=2)");
  auto u = return_series(*tree, 400);
  auto f = first_return_probabilities(u);
  auto lim = limit_excursion_law(f, spectral_radius(*tree, u));
  double ratio = to_double(f.high(300) / u.high(300));
  double lo = to_double(lim.target_lo()), hi = to_double(lim.target_hi());
  double rel = ratio > hi ? ratio / hi - 1 : ratio < lo ? 1 - ratio / lo : 0.0;
  o.require(rel <= 0.05, "f_300/u_300 within 5% of (1-F)^2");
  auto law = excursion_record_law(u, f, 400);
  o.require(law.mass == 1 && law.empty == f.value(400) / u.value(400), "excursion law normalization");
  double tv = to_double(excursion_tv(law, lim));
  o.note("f/u(300) = ").note(ratio).note(", (1-F)^2 in [").note(lo).note(", ").note(hi).note("], rel. gap ").note(rel)
      .note("; TV(400) = ").note(tv).note(" (diagnostic, target 0.02)");
}

// 13. convolution condition scan
void ac13(Outcome& o) {
  std::vector<Rational> eps{Rational(1, 2), Rational(1, 5), Rational(1, 10)};
  auto report = [&](const std::string& name, const ProbabilitySeries& u, int n_max, bool expect) {
    auto s = cnw_condition_scan(u, eps, n_max);
    o.note(name).note(":");
    for (const auto& r : s.rows) {
      o.require(r.found == expect, name + " eps=" + r.epsilon.get_str());
      o.note(" ").note(r.epsilon.get_str()).note("->").note(r.found ? std::to_string(r.N) : std::string("none"));
    }
    o.note("; ");
  };
  report("tree", return_series(*build_model("tree(b=2)"), 1000), 1000, true);
  report("power", synthetic_sequence(SyntheticCase::Power, {Rational(9, 10), 1.5, 1, 0.5}, 1000), 1000, true);
  report("stretched", synthetic_sequence(SyntheticCase::Stretched, {Rational(1), -1.0 / 6, 2, 1.0 / 3}, 1000), 1000, true);
  report("log-exp", synthetic_sequence(SyntheticCase::LogExponential, {}, 1000), 1000, true);
  report("constant", synthetic_sequence(SyntheticCase::Constant, {}, 1000), 1000, false);
}

// 14. smoothness
void ac14(Outcome& o) {
  for (const char* s : {"tree(b=2)", "tree(b=3)", "fixed-end-tree(b=2)", "grandparent(b=2)", "dl(q=2,r=3)",
                        "product(fixed-end-tree(b=2),fixed-end-tree(b=3))"}) {
    auto m = build_model(s);
    auto u = return_series(*m, 100);
    auto rep = check_smoothness(u, spectral_radius(*m, u));
    o.require(rep.ok, std::string("smoothness on ") + s + (rep.violations.empty() ? "" : ": " + rep.violations[0]));
    o.require(rep.exact, std::string("inexact comparison on ") + s);
  }
  o.note("6 models, n <= 100, exact");
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::function<void(Outcome&)>> all{ac1, ac2, ac3, ac4, ac5, ac6, ac7, ac8, ac9, ac10, ac11, ac12, ac13, ac14};
  int only = argc > 1 ? std::atoi(argv[1]) : 0;
  int failed = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (only && static_cast<int>(i) + 1 != only) continue;
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    try {
      all[i](o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[error] " << e.what();
    }
    double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "AC" << i + 1 << (o.pass ? " PASS " : " FAIL ") << "(" << std::fixed << std::setprecision(1) << sec
              << " s) " << std::defaultfloat << std::setprecision(6) << o.detail.str() << std::endl;
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
