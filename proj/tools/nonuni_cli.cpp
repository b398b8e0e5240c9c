// Command line front end. Every subcommand writes one CSV or JSON document,
// prefixed by a provenance header, to --out or stdout.
//
// Exit codes: 0 ok, 1 usage, 2 computation error, 3 invariant failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "nonuni/nonuni.hpp"

using namespace nonuni;
using json = nlohmann::json;

namespace {

struct ModelArgs {
  std::string model;
  std::string family;
  long b = 2, q = 0, r = 0, alpha = 0, beta = 0;

  void add(CLI::App* app) {
    app->add_option("--model", model, "model spec, e.g. 'grandparent(b=2)'");
    app->add_option("--family", family, "tree | fixed-end-tree | grandparent | dl | free-product");
    app->add_option("--b", b, "branching parameter");
    app->add_option("--q", q, "DL first tree parameter");
    app->add_option("--r", r, "DL second tree parameter");
    app->add_option("--alpha", alpha, "free product: first clique size");
    app->add_option("--beta", beta, "free product: second clique size");
  }

  std::string spec() const {
    if (!model.empty()) return model;
    if (family.empty()) throw CLI::ValidationError("--model or --family", "a model is required");
    if (family == "dl" || family == "diestel-leader")
      return family + "(q=" + std::to_string(q) + ",r=" + std::to_string(r) + ")";
    if (family == "free-product")
      return family + "(alpha=" + std::to_string(alpha) + ",beta=" + std::to_string(beta) + ")";
    return family + "(b=" + std::to_string(b) + ")";
  }
};

struct Common {
  std::string out;
  int threads = 1;
};

json provenance(const std::string& command, const std::string& spec, const std::string& mode,
                std::optional<std::uint64_t> seed = std::nullopt) {
  json p{{"command", command}, {"spec", spec}, {"mode", mode}, {"version", NONUNI_VERSION}};
  p["seed"] = seed ? json(*seed) : json();
  return p;
}

std::string csv_header(const json& p) {
  std::string s;
  for (auto it = p.begin(); it != p.end(); ++it) {
    s += "# " + it.key() + "=" + (it.value().is_string() ? it.value().get<std::string>() : it.value().dump()) + "\n";
  }
  return s;
}

void emit(const Common& c, const std::string& text) {
  if (c.out.empty() || c.out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(c.out, std::ios::binary);
  if (!f) throw Error("cannot write " + c.out);
  f << text;
}

void emit_json(const Common& c, json doc, const json& prov) {
  doc["provenance"] = prov;
  emit(c, doc.dump(2) + "\n");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::pair<int, int> parse_window(const std::string& w) {
  auto p = split(w, ':');
  if (p.size() != 2) throw InvalidArgument("window must be lo:hi");
  return {std::stoi(p[0]), std::stoi(p[1])};
}

Rational parse_rational(const std::string& s) {
  if (s.find('.') == std::string::npos) return Rational(s);
  // decimal: digits after the point become a power-of-ten denominator
  auto dot = s.find('.');
  std::string digits = s.substr(0, dot) + s.substr(dot + 1);
  Rational r(Integer(digits), ipow(Integer(10), s.size() - dot - 1));
  r.canonicalize();
  return r;
}

// ---------------------------------------------------------------------------
// Series cache: exact integer-form series keyed by spec and n_max, stored
// under $NONUNI_CACHE_DIR as plain text.

std::optional<std::filesystem::path> cache_path(const std::string& spec, int n_max) {
  const char* dir = std::getenv("NONUNI_CACHE_DIR");
  if (!dir || !*dir) return std::nullopt;
  std::string key;
  for (char ch : spec) key += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
  return std::filesystem::path(dir) / (key + "_n" + std::to_string(n_max) + ".series");
}

std::optional<ProbabilitySeries> cache_load(const std::string& spec, int n_max) {
  auto p = cache_path(spec, n_max);
  if (!p || !std::filesystem::exists(*p)) return std::nullopt;
  std::ifstream f(*p);
  int period = 0, count = 0;
  std::string base, scale;
  if (!(f >> period >> base >> scale >> count) || count != n_max + 1) return std::nullopt;
  std::vector<Integer> numer(static_cast<std::size_t>(count));
  std::string v;
  for (auto& x : numer) {
    if (!(f >> v)) return std::nullopt;
    x = Integer(v);
  }
  return ProbabilitySeries::from_counts(SeriesKind::Return, period, Integer(base), Integer(scale), std::move(numer), spec);
}

void cache_store(const std::string& spec, int n_max, const ProbabilitySeries& u) {
  auto p = cache_path(spec, n_max);
  if (!p || !u.integer_form()) return;
  std::filesystem::create_directories(p->parent_path());
  auto tmp = *p;
  tmp += ".tmp";
  {
    std::ofstream f(tmp);
    f << u.period << ' ' << u.base().get_str() << ' ' << u.scale().get_str() << ' ' << u.n_max() + 1 << '\n';
    for (int n = 0; n <= u.n_max(); ++n) f << u.numer(n).get_str() << '\n';
  }
  std::filesystem::rename(tmp, *p);
}

ProbabilitySeries series_for(const WalkModel& m, const std::string& spec, int n_max, Arithmetic mode) {
  if (mode == Arithmetic::Exact)
    if (auto s = cache_load(spec, n_max)) return *s;
  auto u = return_series(m, n_max, mode);
  if (mode == Arithmetic::Exact) cache_store(spec, n_max, u);
  return u;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SeriesCmd {
  ModelArgs model;
  int n_max = 100;
  std::string mode = "exact";
  bool exact_columns = false;
  bool normalized = true;

  int run(const Common& c) const {
    auto spec = model.spec();
    auto m = build_model(spec);
    auto u = series_for(*m, spec, n_max, parse_arithmetic(mode));
    auto f = first_return_probabilities(u);
    std::optional<NormalizedSeries> a;
    if (normalized) {
      try {
        a = normalized_series(u, spectral_radius(*m, u));
      } catch (const InvalidArgument&) {
      }
    }
    std::ostringstream os;
    os << csv_header(provenance("series", spec, mode));
    write_series_csv(os, u, f, a ? &*a : nullptr, exact_columns && u.exact());
    emit(c, os.str());
    return 0;
  }
};

struct FitCmd {
  ModelArgs model;
  std::string window = "50:500";
  std::string mode = "float";
  int n_max = 0;

  int run(const Common& c) const {
    auto spec = model.spec();
    auto m = build_model(spec);
    auto [lo, hi] = parse_window(window);
    int N = std::max(n_max, hi);
    auto u = series_for(*m, spec, N, parse_arithmetic(mode));
    auto rho = spectral_radius(*m, u);
    auto a = normalized_series(u, rho);
    auto fit = fit_exponent(a, lo, hi);
    json doc{{"rho", to_string(rho.value, 30)},
             {"rho_exact", rho.exact ? json(rho.exact->str()) : json()},
             {"rho_provenance", rho.provenance},
             {"rho_ratio_estimate", rho.ratio_estimate ? json(to_string(*rho.ratio_estimate, 20)) : json()},
             {"rho_ratio_uncertainty", rho.ratio_uncertainty ? json(to_double(*rho.ratio_uncertainty)) : json()},
             {"window", {lo, hi}},
             {"power_fit", {{"slope", fit.slope}, {"stderr", fit.stderr_slope}, {"r2", fit.r2}, {"points", fit.points}}}};
    // log a_n against n^{1/3}: the stretched-exponential shape.
    std::vector<double> x, y;
    for (int n = lo; n <= hi; ++n)
      if (n % a.period == 0) {
        x.push_back(std::cbrt(static_cast<double>(n)));
        y.push_back(std::log(to_double(a[n])));
      }
    auto sf = linear_fit(x, y);
    doc["stretched_fit"] = {{"slope", sf.slope}, {"r2", sf.r2}};
    emit_json(c, doc, provenance("fit", spec, mode));
    return 0;
  }
};

struct BallotCmd {
  ModelArgs model;
  bool pm1 = false;
  int n = 100;
  std::string r_grid = "0,1,2,4,8";
  std::string n_grid = "";
  std::string mode = "exact";

  int run(const Common& c) const {
    LevelIncrementLaw law;
    std::string spec = "pm1";
    if (pm1) {
      law = simple_law();
    } else {
      spec = model.spec();
      auto m = build_model(spec);
      law = increment_law(neighbor_level_profile(*m), spectral_radius(*m, return_series(*m, 30)));
      law.source = spec;
    }
    auto am = parse_arithmetic(mode);
    json rows = json::array();
    for (const auto& rs : split(r_grid, ',')) {
      long r = std::stol(rs);
      auto b = ballot_probability(law, n, r, am);
      auto mr = max_and_return(law, n, r, am);
      rows.push_back({{"r", r},
                      {"ballot", to_string(b.value, 30)},
                      {"max_and_return", to_string(mr.value, 30)},
                      {"ballot_exact", b.exact ? json(b.exact_value(law).str()) : json()},
                      {"max_and_return_exact", mr.exact ? json(mr.exact_value(law).str()) : json()}});
    }
    json doc{{"law", law.to_json()}, {"n", n}, {"rows", rows}};
    if (am == Arithmetic::Exact) {
      auto comp = max_return_completeness(law, n);
      doc["completeness"] = {{"ok", comp.ok}, {"windows", comp.windows}};
      if (!comp.ok) {
        emit_json(c, doc, provenance("ballot", spec, mode));
        return 3;
      }
    }
    if (!n_grid.empty()) {
      std::vector<int> ng;
      std::vector<long> rg;
      for (const auto& s : split(n_grid, ',')) ng.push_back(std::stoi(s));
      for (const auto& s : split(r_grid, ',')) rg.push_back(std::stol(s));
      doc["bound_scan"] = bound_constant_scan(law, ng, rg).to_json();
    }
    emit_json(c, doc, provenance("ballot", spec, mode));
    return 0;
  }
};

struct LevelsCmd {
  ModelArgs model;
  int n = 100;
  std::string k_grid = "0,1,2,3";
  long samples = 0;
  std::optional<std::uint64_t> seed;
  std::string format = "json";

  int run(const Common& c) const {
    auto spec = model.spec();
    auto m = build_model(spec);
    std::vector<long> ks;
    for (const auto& s : split(k_grid, ',')) ks.push_back(std::stol(s));
    if (samples > 0) {
      if (!seed) throw CLI::ValidationError("--seed", "Monte Carlo runs need an explicit --seed");
      auto st = mc_bridge_statistics(*m, n, samples, *seed, ks);
      auto prov = provenance("levels", spec, "exact+mc", *seed);
      if (format == "csv") {
        std::ostringstream os;
        os << csv_header(prov);
        st.write_csv(os);
        emit(c, os.str());
      } else {
        emit_json(c, st.to_json(), prov);
      }
      return st.distinct_le_visits ? 0 : 3;
    }
    auto chain = collapse(*m, n);
    auto t = bridge_tables(chain, n);
    if (!bridge_normalization(t)) throw InvariantViolation("bridge tables are not normalized");
    json rows = json::array();
    for (long k : ks) {
      auto v = bridge_level_visits(t, k);
      rows.push_back({{"k", k}, {"exact_visits", v.get_str()}, {"exact_visits_float", to_double(to_high(v))}});
    }
    emit_json(c, {{"n", n}, {"t0", t.t0}, {"rows", rows}}, provenance("levels", spec, "exact"));
    return 0;
  }
};

struct ExcursionsCmd {
  ModelArgs model;
  std::string synthetic;
  double alpha = 1.5, c_param = 1.0, beta = 0.5;
  std::string rho_param = "1";
  int n = 200;
  int n_max = 0;
  std::string eps = "0.5,0.2,0.1";
  std::string window;

  int run(const Common& c) const {
    std::vector<Rational> eg;
    for (const auto& s : split(eps, ',')) eg.push_back(parse_rational(s));
    int N = std::max(n, n_max);
    if (!synthetic.empty()) {
      SyntheticParams p{parse_rational(rho_param), alpha, c_param, beta};
      auto u = synthetic_sequence(parse_synthetic_case(synthetic), p, N);
      json doc{{"synthetic", synthetic}, {"cnw", cnw_condition_scan(u, eg, N).to_json()}};
      emit_json(c, doc, provenance("excursions", "synthetic:" + synthetic, "exact"));
      return 0;
    }
    auto spec = model.spec();
    auto m = build_model(spec);
    auto u = series_for(*m, spec, N, Arithmetic::Exact);
    auto f = first_return_probabilities(u);
    auto law = excursion_record_law(u, f, n);
    if (law.mass != 1) throw InvariantViolation("excursion law mass " + law.mass.get_str() + " != 1");
    json doc{{"excursion_law", law.to_json()}, {"cnw", cnw_condition_scan(u, eg, N).to_json()}};
    try {
      auto lim = limit_excursion_law(f, spectral_radius(*m, u));
      doc["limit"] = lim.to_json();
      doc["tv_to_geometric"] = to_double(excursion_tv(law, lim));
      doc["tv_label"] = "conjecture diagnostic";
    } catch (const Error& e) {
      doc["limit_error"] = e.what();
    }
    if (!window.empty()) {
      auto [lo, hi] = parse_window(window);
      doc["first_return_bound"] = first_return_lower_bound_check(u, f, lo, hi).to_json();
    }
    emit_json(c, doc, provenance("excursions", spec, "exact"));
    return 0;
  }
};

struct QuasiCmd {
  ModelArgs model;
  std::string schema_file;
  bool parity = false;
  double tol = 1e-12;

  int run(const Common& c) const {
    OrbitSchema s;
    std::string spec;
    if (!schema_file.empty()) {
      std::ifstream f(schema_file);
      if (!f) throw InvalidArgument("cannot read schema file " + schema_file);
      s = parse_schema(f);
      spec = "schema:" + schema_file;
    } else {
      spec = model.spec();
      s = build_orbit_schema(*build_model(spec), parity);
    }
    auto rep = analyze_schema(s, tol);
    emit_json(c, rep.to_json(), provenance("quasi", spec, "exact+float"));
    return rep.ok() ? 0 : 3;
  }
};

// ---------------------------------------------------------------------------
// check: hard invariants on every family. Conjecture diagnostics are printed
// but never change the exit code.

struct CheckCmd {
  bool quick = false;

  int run(const Common& c) const {
    json items = json::array();
    bool ok = true;
    auto record = [&](const std::string& name, bool pass, json detail = json()) {
      items.push_back({{"check", name}, {"status", pass ? "pass" : "fail"}, {"detail", detail}});
      ok = ok && pass;
    };
    auto diagnostic = [&](const std::string& name, json detail) {
      items.push_back({{"check", name}, {"status", "diagnostic"}, {"detail", detail}});
    };
    const std::vector<std::string> families{"tree(b=2)", "fixed-end-tree(b=2)", "grandparent(b=2)", "dl(q=2,r=3)"};
    int renewal_n = quick ? 30 : 120;
    for (const auto& spec : families) {
      auto m = build_model(spec);
      record("oracle " + spec, validate_collapse(*m, 12).ok);
      auto chain = collapse(*m, renewal_n);
      auto u = return_probabilities(chain, renewal_n);
      auto f = first_return_probabilities(u);
      record("renewal/taboo " + spec, series_equal(f, taboo_first_return(chain, renewal_n)));
      record("neighbor mtp " + spec, check_neighbor_mtp(neighbor_level_profile(*m)).ok);
      if (quick) continue;
      int R = spec.rfind("dl", 0) == 0 ? 4 : 5;
      record("mtp residuals " + spec, check_mtp(enumerate_ball(*m, R), R - 1).ok);
      auto rho = spectral_radius(*m, u);
      record("smoothness " + spec, check_smoothness(u, rho).ok);
      auto t = bridge_tables(chain, 40);
      record("bridge normalization " + spec, bridge_normalization(t));
      auto law = excursion_record_law(u, f, 40);
      record("excursion mass " + spec, law.mass == 1 && law.empty == f.value(40) / u.value(40));
      if (m->basis().unimodular) continue;
      auto dc = doob_chain(chain, rho);
      record("doob chain " + spec, dc.rows_stochastic && dc.reversible);
    }
    for (const auto& spec : {"fixed-end-tree(b=2)", "grandparent(b=2)"}) {
      auto m = build_model(spec);
      auto rep = analyze_schema(build_orbit_schema(*m, true));
      record(std::string("parity schema ") + spec, rep.ok());
    }
    {
      auto law = simple_law();
      auto e = enumerate_level_paths(law, quick ? 8 : 12);
      bool same = true;
      for (int n = 1; n <= e.n_max; ++n)
        for (long r = 0; r <= n + 1; ++r) {
          auto& row = e.ballot[static_cast<std::size_t>(n)];
          QuadInteger want = row.count(r) ? row.at(r) : QuadInteger();
          same = same && ballot_probability(law, n, r).weight == want;
        }
      record("ballot enumeration pm1", same);
      record("max/return completeness pm1", max_return_completeness(law, quick ? 100 : 500).ok);
    }
    if (!quick) {
      auto m = build_model("tree(b=2)");
      auto u = return_series(*m, 400);
      auto f = first_return_probabilities(u);
      auto lim = limit_excursion_law(f, spectral_radius(*m, u));
      json tv = json::array();
      for (int n : {100, 200, 400}) tv.push_back({n, to_double(excursion_tv(excursion_record_law(u, f, n), lim))});
      diagnostic("excursion TV trend (conjecture)", tv);
    }
    json doc{{"quick", quick}, {"ok", ok}, {"checks", items}};
    emit_json(c, doc, provenance("check", quick ? "quick" : "full", "exact"));
    return ok ? 0 : 3;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nonuni: return probabilities on nonunimodular graphs"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--out,-o", common.out, "output file (default stdout)");
  app.add_option("--threads", common.threads, "thread cap (computations run single-threaded)")->check(CLI::PositiveNumber);

  SeriesCmd series;
  auto* s = app.add_subcommand("series", "u_n, f_n, a_n as CSV");
  series.model.add(s);
  s->add_option("--nmax", series.n_max)->check(CLI::NonNegativeNumber);
  s->add_option("--mode", series.mode)->check(CLI::IsMember({"exact", "float"}));
  s->add_flag("--exact-columns", series.exact_columns, "append exact rationals");

  FitCmd fit;
  auto* fi = app.add_subcommand("fit", "spectral radius and exponent fits");
  fit.model.add(fi);
  fi->add_option("--window", fit.window, "lo:hi");
  fi->add_option("--nmax", fit.n_max);
  fi->add_option("--mode", fit.mode)->check(CLI::IsMember({"exact", "float"}));

  BallotCmd ballot;
  auto* ba = app.add_subcommand("ballot", "level walk ballot and max/return probabilities");
  ballot.model.add(ba);
  ba->add_flag("--pm1", ballot.pm1, "use the simple +-1 law");
  ba->add_option("--n", ballot.n)->check(CLI::PositiveNumber);
  ba->add_option("--r-grid", ballot.r_grid, "comma separated r values");
  ba->add_option("--n-grid", ballot.n_grid, "comma separated n values for the bound scan");
  ba->add_option("--mode", ballot.mode)->check(CLI::IsMember({"exact", "float"}));

  LevelsCmd levels;
  auto* le = app.add_subcommand("levels", "level visits of bridges, exact and sampled");
  levels.model.add(le);
  le->add_option("--n", levels.n)->check(CLI::PositiveNumber);
  le->add_option("--k-grid", levels.k_grid);
  le->add_option("--samples", levels.samples)->check(CLI::NonNegativeNumber);
  le->add_option("--seed", levels.seed);
  le->add_option("--format", levels.format)->check(CLI::IsMember({"json", "csv"}));

  ExcursionsCmd exc;
  auto* ex = app.add_subcommand("excursions", "excursion records, limit law, convolution scan");
  exc.model.add(ex);
  ex->add_option("--synthetic", exc.synthetic, "power | stretched | log-exponential | constant");
  ex->add_option("--rho", exc.rho_param, "synthetic: rho as a rational");
  ex->add_option("--exponent", exc.alpha, "synthetic: alpha");
  ex->add_option("--c", exc.c_param, "synthetic: c");
  ex->add_option("--beta-exp", exc.beta, "synthetic: beta");
  ex->add_option("--n", exc.n)->check(CLI::PositiveNumber);
  ex->add_option("--nmax", exc.n_max, "range of the convolution scan");
  ex->add_option("--eps", exc.eps, "comma separated epsilon values");
  ex->add_option("--window", exc.window, "lo:hi for the first-return bound");

  QuasiCmd quasi;
  auto* qu = app.add_subcommand("quasi", "orbit schema analysis");
  quasi.model.add(qu);
  qu->add_option("--schema", quasi.schema_file, "schema file");
  qu->add_flag("--parity", quasi.parity, "parity refinement of the model");
  qu->add_option("--tol", quasi.tol);

  CheckCmd check;
  auto* ch = app.add_subcommand("check", "run the invariant suites");
  ch->add_flag("--quick", check.quick, "oracle equivalences and small cases only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  try {
    if (*s) return series.run(common);
    if (*fi) return fit.run(common);
    if (*ba) return ballot.run(common);
    if (*le) return levels.run(common);
    if (*ex) return exc.run(common);
    if (*qu) return quasi.run(common);
    if (*ch) return check.run(common);
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const InvariantViolation& e) {
    std::cerr << "invariant failure: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
