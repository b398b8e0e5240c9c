/*
 * Graph families, explicit balls and orbit-collapsed chains.
 *
 * Vertices of the tree-like families are encoded relative to the root o in
 * "end coordinates": a vertex (up, down...) is reached by walking `up` steps
 * toward the distinguished end and then down along the listed child indices.
 * Child index 0 of an ancestor of o is the ancestor on the o-path, so the
 * normal form never starts `down` with 0 while up > 0.
 *
 * Level convention: a step toward the end multiplies m by the branching
 * number, i.e. raises the level by one.
 */
#pragma once

#include "arith.hpp"
#include "hashing.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nonuni {

enum class Family { RegularTree, FixedEndTree, Grandparent, DiestelLeader, CartesianProduct, FreeProduct };

struct ModelSpec {
  Family family = Family::RegularTree;
  long b = 2;
  long q = 0;
  long r = 0;
  long alpha = 0;
  long beta = 0;
  std::vector<ModelSpec> factors;

  static ModelSpec regular_tree(long b) { return make(Family::RegularTree, b); }
  static ModelSpec fixed_end_tree(long b) { return make(Family::FixedEndTree, b); }
  static ModelSpec grandparent(long b) { return make(Family::Grandparent, b); }
  static ModelSpec diestel_leader(long q, long r) {
    ModelSpec s;
    s.family = Family::DiestelLeader;
    s.q = q;
    s.r = r;
    return s;
  }
  static ModelSpec product(ModelSpec left, ModelSpec right) {
    ModelSpec s;
    s.family = Family::CartesianProduct;
    s.factors = {std::move(left), std::move(right)};
    return s;
  }
  static ModelSpec free_product(long alpha, long beta) {
    ModelSpec s;
    s.family = Family::FreeProduct;
    s.alpha = alpha;
    s.beta = beta;
    return s;
  }

  int nesting_depth() const {
    if (family != Family::CartesianProduct) return 0;
    return 1 + std::max(factors.at(0).nesting_depth(), factors.at(1).nesting_depth());
  }

  void validate() const {
    switch (family) {
      case Family::RegularTree:
      case Family::FixedEndTree:
      case Family::Grandparent:
        if (b < 2) throw InvalidArgument("branching number b must be >= 2");
        if (b > 1000) throw InvalidArgument("branching number b too large");
        break;
      case Family::DiestelLeader:
        if (q < 2 || r < 2) throw InvalidArgument("DL(q,r) needs q,r >= 2");
        if (q == r) throw InvalidArgument("DL(q,q) is unimodular; only q != r is supported");
        if (q > 1000 || r > 1000) throw InvalidArgument("DL parameters too large");
        break;
      case Family::FreeProduct:
        if (alpha < 2 || beta < 2 || std::max(alpha, beta) <= 2)
          throw InvalidArgument("free product needs alpha,beta >= 2 and max(alpha,beta) > 2");
        if (alpha > 1000 || beta > 1000) throw InvalidArgument("free product parameters too large");
        break;
      case Family::CartesianProduct:
        if (factors.size() != 2) throw InvalidArgument("product needs exactly two factors");
        if (nesting_depth() > 2) throw InvalidArgument("product nesting depth exceeds 2");
        factors[0].validate();
        factors[1].validate();
        break;
    }
  }

  std::string str() const {
    std::ostringstream os;
    switch (family) {
      case Family::RegularTree: os << "tree(b=" << b << ")"; break;
      case Family::FixedEndTree: os << "fixed-end-tree(b=" << b << ")"; break;
      case Family::Grandparent: os << "grandparent(b=" << b << ")"; break;
      case Family::DiestelLeader: os << "dl(q=" << q << ",r=" << r << ")"; break;
      case Family::FreeProduct: os << "free-product(alpha=" << alpha << ",beta=" << beta << ")"; break;
      case Family::CartesianProduct:
        os << "product(" << factors.at(0).str() << "," << factors.at(1).str() << ")";
        break;
    }
    return os.str();
  }

  // Grammar: name(key=value,...) or product(spec,spec).
  static ModelSpec parse(std::string_view text) {
    std::string s;
    for (char c : text)
      if (!std::isspace(static_cast<unsigned char>(c))) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::size_t pos = 0;
    ModelSpec spec = parse_at(s, pos);
    if (pos != s.size()) throw InvalidArgument("trailing characters in model spec: " + std::string(text));
    spec.validate();
    return spec;
  }

  // key=value form: family, b, q, r, alpha, beta, left, right.
  static ModelSpec from_config(const std::map<std::string, std::string>& kv) {
    auto get = [&](const std::string& k) -> std::string {
      auto it = kv.find(k);
      if (it == kv.end()) throw InvalidArgument("config is missing key '" + k + "'");
      return it->second;
    };
    auto num = [&](const std::string& k) { return parse_long(get(k)); };
    Family f = family_from_name(get("family"));
    ModelSpec s;
    s.family = f;
    switch (f) {
      case Family::RegularTree:
      case Family::FixedEndTree:
      case Family::Grandparent: s.b = num("b"); break;
      case Family::DiestelLeader:
        s.q = num("q");
        s.r = num("r");
        break;
      case Family::FreeProduct:
        s.alpha = num("alpha");
        s.beta = num("beta");
        break;
      case Family::CartesianProduct: s.factors = {parse(get("left")), parse(get("right"))}; break;
    }
    s.validate();
    return s;
  }

  static ModelSpec from_config_text(std::string_view text) {
    std::map<std::string, std::string> kv;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      auto eq = line.find('=');
      auto trim = [](std::string x) {
        auto a = x.find_first_not_of(" \t\r");
        auto b = x.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : x.substr(a, b - a + 1);
      };
      if (trim(line).empty()) continue;
      if (eq == std::string::npos) throw InvalidArgument("config line without '=': " + line);
      kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return from_config(kv);
  }

  static Family family_from_name(const std::string& n) {
    if (n == "tree" || n == "regular-tree") return Family::RegularTree;
    if (n == "fixed-end-tree" || n == "fixed-end") return Family::FixedEndTree;
    if (n == "grandparent") return Family::Grandparent;
    if (n == "dl" || n == "diestel-leader") return Family::DiestelLeader;
    if (n == "product" || n == "cartesian") return Family::CartesianProduct;
    if (n == "free-product") return Family::FreeProduct;
    throw InvalidArgument("unknown model family '" + n + "'");
  }

 private:
  static ModelSpec make(Family f, long b) {
    ModelSpec s;
    s.family = f;
    s.b = b;
    return s;
  }

  static long parse_long(const std::string& v) {
    std::size_t used = 0;
    long x = 0;
    try {
      x = std::stol(v, &used);
    } catch (const std::exception&) {
      throw InvalidArgument("expected an integer, got '" + v + "'");
    }
    if (used != v.size()) throw InvalidArgument("expected an integer, got '" + v + "'");
    return x;
  }

  static ModelSpec parse_at(const std::string& s, std::size_t& pos) {
    auto open = s.find('(', pos);
    if (open == std::string::npos) throw InvalidArgument("model spec needs '(': " + s);
    ModelSpec spec;
    spec.family = family_from_name(s.substr(pos, open - pos));
    pos = open + 1;
    if (spec.family == Family::CartesianProduct) {
      ModelSpec left = parse_at(s, pos);
      if (pos >= s.size() || s[pos] != ',') throw InvalidArgument("product needs two factors");
      ++pos;
      ModelSpec right = parse_at(s, pos);
      if (pos >= s.size() || s[pos] != ')') throw InvalidArgument("unterminated product spec");
      ++pos;
      spec.factors = {std::move(left), std::move(right)};
      return spec;
    }
    auto close = s.find(')', pos);
    if (close == std::string::npos) throw InvalidArgument("unterminated model spec");
    std::map<std::string, std::string> kv;
    std::string body = s.substr(pos, close - pos);
    pos = close + 1;
    std::istringstream in(body);
    std::string item;
    while (std::getline(in, item, ',')) {
      if (item.empty()) continue;
      auto eq = item.find('=');
      if (eq == std::string::npos) throw InvalidArgument("expected key=value in '" + item + "'");
      kv[item.substr(0, eq)] = item.substr(eq + 1);
    }
    auto need = [&](const char* k) {
      auto it = kv.find(k);
      if (it == kv.end()) throw InvalidArgument(std::string("missing parameter ") + k);
      return parse_long(it->second);
    };
    switch (spec.family) {
      case Family::DiestelLeader:
        spec.q = need("q");
        spec.r = need("r");
        break;
      case Family::FreeProduct:
        spec.alpha = need("alpha");
        spec.beta = need("beta");
        break;
      default: spec.b = need("b"); break;
    }
    return spec;
  }
};

// ---------------------------------------------------------------------------
// Levels

// Exponent pair over the generators (g1, g2): m(v)/m(o) = g1^a * g2^b.
struct Level {
  long a = 0;
  long b = 0;
  friend Level operator+(Level x, Level y) { return {x.a + y.a, x.b + y.b}; }
  friend Level operator-(Level x, Level y) { return {x.a - y.a, x.b - y.b}; }
  friend bool operator==(Level x, Level y) { return x.a == y.a && x.b == y.b; }
  friend bool operator<(Level x, Level y) { return x.a != y.a ? x.a < y.a : x.b < y.b; }
};

// Smallest root: g = root^k with k maximal. g must be a positive rational.
inline std::pair<Rational, long> primitive_root(const Rational& g) {
  if (g <= 0) throw InvalidArgument("primitive_root: nonpositive value");
  if (g == 1) return {Rational(1), 0};
  Integer p = g.get_num(), q = g.get_den();
  long max_k = static_cast<long>(std::max(mpz_sizeinbase(p.get_mpz_t(), 2), mpz_sizeinbase(q.get_mpz_t(), 2)));
  for (long k = max_k; k >= 2; --k) {
    Integer rp, rq;
    bool ep = mpz_root(rp.get_mpz_t(), p.get_mpz_t(), static_cast<unsigned long>(k)) != 0;
    bool eq = mpz_root(rq.get_mpz_t(), q.get_mpz_t(), static_cast<unsigned long>(k)) != 0;
    if (ep && eq) {
      Rational root(rp, rq);
      root.canonicalize();
      return {root, k};
    }
  }
  return {g, 1};
}

struct LevelBasis {
  bool unimodular = false;
  Rational g1{1};
  Rational g2{1};
  // Lattice form, when both generators are powers of one base > 1.
  bool lattice = false;
  Rational base{1};
  long k1 = 0;
  long k2 = 0;

  static LevelBasis trivial() {
    LevelBasis b;
    b.unimodular = true;
    return b;
  }

  static LevelBasis make(Rational g1, Rational g2 = Rational(1)) {
    LevelBasis lb;
    if (g1 < 1) g1 = 1 / g1;
    if (g2 < 1) g2 = 1 / g2;
    lb.g1 = g1;
    lb.g2 = g2;
    auto [r1, e1] = primitive_root(g1);
    auto [r2, e2] = primitive_root(g2);
    if (e1 == 0 && e2 == 0) {
      lb.unimodular = true;
    } else if (e1 == 0 || e2 == 0 || r1 == r2) {
      lb.lattice = true;
      lb.base = e1 != 0 ? r1 : r2;
      lb.k1 = e1;
      lb.k2 = e2;
    }
    return lb;
  }

  int generators() const { return unimodular ? 0 : (g2 == 1 ? 1 : 2); }

  Rational ratio(Level l) const { return rpow(g1, l.a) * rpow(g2, l.b); }

  long lattice_level(Level l) const {
    if (unimodular) return 0;
    if (!lattice) throw InvalidArgument("level set is not a lattice");
    return l.a * k1 + l.b * k2;
  }

  HighFloat log_value(Level l) const {
    HighFloat v = 0;
    if (l.a != 0) v += HighFloat(l.a) * boost::multiprecision::log(to_high(g1));
    if (l.b != 0) v += HighFloat(l.b) * boost::multiprecision::log(to_high(g2));
    return v;
  }

  HighFloat log_base() const {
    return lattice ? boost::multiprecision::log(to_high(base)) : HighFloat(0);
  }
};

struct ProfileEntry {
  Rational q;
  long count = 0;
  Level level;
};

struct LevelProfile {
  long degree = 0;
  std::vector<ProfileEntry> entries;  // sorted by q descending
  LevelBasis basis;

  long total() const {
    long t = 0;
    for (const auto& e : entries) t += e.count;
    return t;
  }
  // t0 in lattice units (0 in unimodular mode).
  long t0_lattice() const {
    long t = 0;
    for (const auto& e : entries) t = std::max(t, basis.lattice_level(e.level));
    return t;
  }
  HighFloat t0_log() const {
    HighFloat t = 0;
    for (const auto& e : entries) t = std::max(t, basis.log_value(e.level));
    return t;
  }
  long count_at(const Rational& q) const {
    for (const auto& e : entries)
      if (e.q == q) return e.count;
    return 0;
  }
};

// ---------------------------------------------------------------------------
// Models

using VertexCode = std::vector<std::int32_t>;
using StateKey = std::array<std::int32_t, 4>;

namespace detail {

struct TreeCoord {
  std::int32_t up = 0;
  std::vector<std::int32_t> down;

  long height() const { return static_cast<long>(up) - static_cast<long>(down.size()); }
};

inline TreeCoord tree_parent(TreeCoord c) {
  if (c.down.empty())
    ++c.up;
  else
    c.down.pop_back();
  return c;
}

inline TreeCoord tree_child(TreeCoord c, std::int32_t i) {
  if (c.down.empty() && c.up > 0 && i == 0)
    --c.up;
  else
    c.down.push_back(i);
  return c;
}

inline void encode(const TreeCoord& c, VertexCode& out, bool with_length) {
  out.push_back(c.up);
  if (with_length) out.push_back(static_cast<std::int32_t>(c.down.size()));
  out.insert(out.end(), c.down.begin(), c.down.end());
}

// Reads a coordinate starting at pos; `len < 0` means "rest of the code".
inline TreeCoord decode(const VertexCode& v, std::size_t& pos, bool with_length) {
  TreeCoord c;
  c.up = v.at(pos++);
  std::size_t len = with_length ? static_cast<std::size_t>(v.at(pos++)) : v.size() - pos;
  c.down.assign(v.begin() + static_cast<long>(pos), v.begin() + static_cast<long>(pos + len));
  pos += len;
  return c;
}

inline VertexCode single(const TreeCoord& c) {
  VertexCode v;
  encode(c, v, false);
  return v;
}

inline TreeCoord single(const VertexCode& v) {
  std::size_t pos = 0;
  return decode(v, pos, false);
}

// Orbit moves of one fixed-end tree with b children: (s, t) -> (s', t') x count.
struct Move {
  std::int32_t s, t;
  long count;
};

inline void tree_up(std::int32_t s, std::int32_t t, std::vector<Move>& out) {
  if (t >= 1)
    out.push_back({s, t - 1, 1});
  else
    out.push_back({s + 1, 0, 1});
}

inline void tree_down(std::int32_t s, std::int32_t t, long b, std::vector<Move>& out) {
  if (t >= 1) {
    out.push_back({s, t + 1, b});
  } else if (s >= 1) {
    out.push_back({s - 1, 0, 1});
    if (b > 1) out.push_back({s, 1, b - 1});
  } else {
    out.push_back({0, 1, b});
  }
}

// |Gamma_o x| for x in orbit (s,t) of a fixed-end tree with b children.
inline Integer tree_orbit_size(std::int32_t s, std::int32_t t, long b) {
  if (t == 0) return 1;
  if (s == 0) return ipow(Integer(b), static_cast<unsigned long>(t));
  return Integer(b - 1) * ipow(Integer(b), static_cast<unsigned long>(t - 1));
}

}  // namespace detail

class WalkModel {
 public:
  explicit WalkModel(ModelSpec spec) : spec_(std::move(spec)) {}
  virtual ~WalkModel() = default;

  const ModelSpec& spec() const { return spec_; }
  std::string name() const { return spec_.str(); }

  // Closed-form degree of the family.
  virtual long degree() const = 0;
  virtual const LevelBasis& basis() const = 0;
  virtual VertexCode root() const = 0;
  virtual void neighbors(const VertexCode& v, std::vector<VertexCode>& out) const = 0;
  virtual Level level(const VertexCode& v) const = 0;
  // 2 for bipartite families.
  virtual int period() const = 0;
  // True when Gamma is transitive, so the neighbor profile is vertex independent.
  virtual bool transitive() const { return true; }
  // True when the modular structure comes from an amenable closed subgroup, so
  // rho is given by the harmonic sum over the neighbor profile.
  virtual bool amenable_mode() const { return false; }
  // True when a_n decays like exp(-c n^(1/3)) rather than polynomially.
  virtual bool stretched_tail() const { return false; }

  virtual std::optional<QuadNumber> closed_form_rho() const { return std::nullopt; }
  virtual std::optional<QuadNumber> closed_form_rho_squared() const {
    auto q = closed_form_rho();
    if (q) return *q * *q;
    return std::nullopt;
  }
  virtual std::optional<HighFloat> closed_form_rho_high() const {
    auto q = closed_form_rho();
    if (q) return q->to_high();
    return std::nullopt;
  }

  // Orbit collapse under the root stabilizer.
  virtual bool has_collapse() const { return false; }
  virtual StateKey root_state() const { return {0, 0, 0, 0}; }
  virtual void state_moves(const StateKey&, std::vector<std::pair<StateKey, long>>&) const {
    throw InvalidArgument(name() + " has no orbit-collapsed chain");
  }
  virtual Level state_level(const StateKey&) const { throw InvalidArgument(name() + " has no orbit-collapsed chain"); }
  virtual Integer orbit_size(const StateKey&) const { throw InvalidArgument(name() + " has no orbit-collapsed chain"); }
  virtual StateKey vertex_state(const VertexCode&) const {
    throw InvalidArgument(name() + " has no orbit-collapsed chain");
  }
  // Rough number of chain states within graph distance D of the root.
  virtual double estimated_states(long D) const { return static_cast<double>(D + 1) * (D + 1); }

 private:
  ModelSpec spec_;
};

using ModelPtr = std::shared_ptr<const WalkModel>;

class RegularTreeModel final : public WalkModel {
 public:
  explicit RegularTreeModel(ModelSpec s) : WalkModel(std::move(s)), b_(spec().b), basis_(LevelBasis::trivial()) {}

  long degree() const override { return b_ + 1; }
  const LevelBasis& basis() const override { return basis_; }
  VertexCode root() const override { return {0}; }
  void neighbors(const VertexCode& v, std::vector<VertexCode>& out) const override {
    auto c = detail::single(v);
    out.push_back(detail::single(detail::tree_parent(c)));
    for (std::int32_t i = 0; i < b_; ++i) out.push_back(detail::single(detail::tree_child(c, i)));
  }
  Level level(const VertexCode&) const override { return {}; }
  int period() const override { return 2; }
  std::optional<QuadNumber> closed_form_rho() const override {
    return QuadNumber(Rational(0), frac(2, b_ + 1), b_);
  }

  bool has_collapse() const override { return true; }
  void state_moves(const StateKey& k, std::vector<std::pair<StateKey, long>>& out) const override {
    if (k[0] == 0) {
      out.push_back({{1, 0, 0, 0}, b_ + 1});
    } else {
      out.push_back({{k[0] - 1, 0, 0, 0}, 1});
      out.push_back({{k[0] + 1, 0, 0, 0}, b_});
    }
  }
  Level state_level(const StateKey&) const override { return {}; }
  Integer orbit_size(const StateKey& k) const override {
    if (k[0] == 0) return 1;
    return Integer(b_ + 1) * ipow(Integer(b_), static_cast<unsigned long>(k[0] - 1));
  }
  StateKey vertex_state(const VertexCode& v) const override {
    auto c = detail::single(v);
    return {c.up + static_cast<std::int32_t>(c.down.size()), 0, 0, 0};
  }
  double estimated_states(long D) const override { return static_cast<double>(D + 2); }

 private:
  long b_;
  LevelBasis basis_;
};

class FixedEndTreeModel : public WalkModel {
 public:
  explicit FixedEndTreeModel(ModelSpec s)
      : WalkModel(std::move(s)), b_(spec().b), basis_(LevelBasis::make(Rational(spec().b))) {}

  long degree() const override { return b_ + 1; }
  const LevelBasis& basis() const override { return basis_; }
  VertexCode root() const override { return {0}; }
  void neighbors(const VertexCode& v, std::vector<VertexCode>& out) const override {
    auto c = detail::single(v);
    out.push_back(detail::single(detail::tree_parent(c)));
    for (std::int32_t i = 0; i < b_; ++i) out.push_back(detail::single(detail::tree_child(c, i)));
  }
  Level level(const VertexCode& v) const override { return {detail::single(v).height(), 0}; }
  int period() const override { return 2; }
  bool amenable_mode() const override { return true; }
  std::optional<QuadNumber> closed_form_rho() const override {
    return QuadNumber(Rational(0), frac(2, b_ + 1), b_);
  }

  bool has_collapse() const override { return true; }
  void state_moves(const StateKey& k, std::vector<std::pair<StateKey, long>>& out) const override {
    std::vector<detail::Move> m;
    detail::tree_up(k[0], k[1], m);
    detail::tree_down(k[0], k[1], b_, m);
    for (const auto& x : m) out.push_back({{x.s, x.t, 0, 0}, x.count});
  }
  Level state_level(const StateKey& k) const override { return {static_cast<long>(k[0]) - k[1], 0}; }
  Integer orbit_size(const StateKey& k) const override { return detail::tree_orbit_size(k[0], k[1], b_); }
  StateKey vertex_state(const VertexCode& v) const override {
    auto c = detail::single(v);
    return {c.up, static_cast<std::int32_t>(c.down.size()), 0, 0};
  }
  double estimated_states(long D) const override { return 0.5 * static_cast<double>(D + 2) * (D + 2); }

 protected:
  long b_;
  LevelBasis basis_;
};

// Fixed-end tree plus edges to grandparent and grandchildren.
class GrandparentModel final : public FixedEndTreeModel {
 public:
  using FixedEndTreeModel::FixedEndTreeModel;

  long degree() const override { return b_ * b_ + b_ + 2; }
  void neighbors(const VertexCode& v, std::vector<VertexCode>& out) const override {
    auto c = detail::single(v);
    auto p = detail::tree_parent(c);
    out.push_back(detail::single(p));
    out.push_back(detail::single(detail::tree_parent(p)));
    for (std::int32_t i = 0; i < b_; ++i) {
      auto ch = detail::tree_child(c, i);
      out.push_back(detail::single(ch));
      for (std::int32_t j = 0; j < b_; ++j) out.push_back(detail::single(detail::tree_child(ch, j)));
    }
  }
  int period() const override { return 1; }
  std::optional<QuadNumber> closed_form_rho() const override {
    return QuadNumber(frac(2 * b_, degree()), frac(2, degree()), b_);
  }
  void state_moves(const StateKey& k, std::vector<std::pair<StateKey, long>>& out) const override {
    std::vector<detail::Move> one, two;
    detail::tree_up(k[0], k[1], one);
    detail::tree_up(one[0].s, one[0].t, two);
    one.push_back(two[0]);
    std::vector<detail::Move> down;
    detail::tree_down(k[0], k[1], b_, down);
    for (const auto& d : down) {
      one.push_back(d);
      std::vector<detail::Move> dd;
      detail::tree_down(d.s, d.t, b_, dd);
      for (const auto& e : dd) one.push_back({e.s, e.t, e.count * d.count});
    }
    merge_into(one, out);
  }
  double estimated_states(long D) const override { return 2.0 * static_cast<double>(D + 2) * (D + 2); }

 private:
  static void merge_into(const std::vector<detail::Move>& moves, std::vector<std::pair<StateKey, long>>& out) {
    std::map<std::pair<std::int32_t, std::int32_t>, long> acc;
    for (const auto& m : moves) acc[{m.s, m.t}] += m.count;
    for (const auto& [st, c] : acc) out.push_back({{st.first, st.second, 0, 0}, c});
  }
};

// Horocyclic product of fixed-end trees T_q (first) and T_r (second); heights
// sum to zero. A first-tree up step has modular ratio q/r.
class DiestelLeaderModel final : public WalkModel {
 public:
  explicit DiestelLeaderModel(ModelSpec s)
      : WalkModel(std::move(s)),
        q_(spec().q),
        r_(spec().r),
        basis_(LevelBasis::make(frac(spec().q, spec().r))),
        sign_(spec().q > spec().r ? 1 : -1) {}

  long degree() const override { return q_ + r_; }
  const LevelBasis& basis() const override { return basis_; }
  VertexCode root() const override { return {0, 0, 0}; }
  void neighbors(const VertexCode& v, std::vector<VertexCode>& out) const override {
    auto [x1, x2] = split(v);
    auto p1 = detail::tree_parent(x1);
    for (std::int32_t j = 0; j < r_; ++j) out.push_back(join(p1, detail::tree_child(x2, j)));
    auto p2 = detail::tree_parent(x2);
    for (std::int32_t i = 0; i < q_; ++i) out.push_back(join(detail::tree_child(x1, i), p2));
  }
  Level level(const VertexCode& v) const override { return {sign_ * split(v).first.height(), 0}; }
  int period() const override { return 2; }
  bool amenable_mode() const override { return true; }
  bool stretched_tail() const override { return true; }
  std::optional<QuadNumber> closed_form_rho() const override {
    return QuadNumber(Rational(0), frac(2, q_ + r_), q_ * r_);
  }

  bool has_collapse() const override { return true; }
  void state_moves(const StateKey& k, std::vector<std::pair<StateKey, long>>& out) const override {
    std::vector<detail::Move> u1, d1, u2, d2;
    detail::tree_up(k[0], k[1], u1);
    detail::tree_down(k[0], k[1], q_, d1);
    detail::tree_up(k[2], k[3], u2);
    detail::tree_down(k[2], k[3], r_, d2);
    for (const auto& a : u1)
      for (const auto& c : d2) out.push_back({{a.s, a.t, c.s, c.t}, a.count * c.count});
    for (const auto& a : d1)
      for (const auto& c : u2) out.push_back({{a.s, a.t, c.s, c.t}, a.count * c.count});
  }
  Level state_level(const StateKey& k) const override { return {sign_ * (static_cast<long>(k[0]) - k[1]), 0}; }
  Integer orbit_size(const StateKey& k) const override {
    return detail::tree_orbit_size(k[0], k[1], q_) * detail::tree_orbit_size(k[2], k[3], r_);
  }
  StateKey vertex_state(const VertexCode& v) const override {
    auto [x1, x2] = split(v);
    return {x1.up, static_cast<std::int32_t>(x1.down.size()), x2.up, static_cast<std::int32_t>(x2.down.size())};
  }
  double estimated_states(long D) const override {
    double d = static_cast<double>(D + 2);
    return d * d * d / 2.0;
  }

  static std::pair<detail::TreeCoord, detail::TreeCoord> split(const VertexCode& v) {
    std::size_t pos = 0;
    auto a = detail::decode(v, pos, true);
    auto b = detail::decode(v, pos, false);
    return {std::move(a), std::move(b)};
  }
  static VertexCode join(const detail::TreeCoord& a, const detail::TreeCoord& b) {
    VertexCode v;
    detail::encode(a, v, true);
    detail::encode(b, v, false);
    return v;
  }

 private:
  long q_, r_;
  LevelBasis basis_;
  long sign_;
};

/*
 * Free product of complete graphs K_alpha * K_beta, viewed as a tree of
 * cliques with a fixed end. A vertex of type A (even up + |down|) has an
 * alpha-clique toward the end and beta - 1 children in its beta-clique; type B
 * is the mirror image. Moving up from type A multiplies m by alpha - 1, from
 * type B by beta - 1.
 */
class FreeProductModel final : public WalkModel {
 public:
  explicit FreeProductModel(ModelSpec s)
      : WalkModel(std::move(s)),
        alpha_(spec().alpha),
        beta_(spec().beta),
        basis_(LevelBasis::make(Rational(spec().alpha - 1), Rational(spec().beta - 1))) {}

  long degree() const override { return alpha_ + beta_ - 2; }
  const LevelBasis& basis() const override { return basis_; }
  VertexCode root() const override { return {0}; }
  void neighbors(const VertexCode& v, std::vector<VertexCode>& out) const override {
    auto c = detail::single(v);
    auto p = detail::tree_parent(c);
    out.push_back(detail::single(p));
    for (std::int32_t i = 0; i < children(c); ++i) out.push_back(detail::single(detail::tree_child(c, i)));
    std::int32_t own = c.down.empty() ? 0 : c.down.back();
    for (std::int32_t j = 0; j < children(p); ++j)
      if (j != own) out.push_back(detail::single(detail::tree_child(p, j)));
  }
  Level level(const VertexCode& v) const override {
    auto c = detail::single(v);
    Level l;
    for (std::int32_t i = 0; i < c.up; ++i) l = l + up_gain(i % 2 == 0);
    for (std::size_t k = 1; k <= c.down.size(); ++k) l = l - up_gain((c.up + static_cast<long>(k)) % 2 == 0);
    return l;
  }
  int period() const override { return 1; }
  bool transitive() const override { return false; }

  static bool type_a(const VertexCode& v) {
    auto c = detail::single(v);
    return (c.up + static_cast<long>(c.down.size())) % 2 == 0;
  }

 private:
  std::int32_t children(const detail::TreeCoord& c) const {
    bool a = (c.up + static_cast<long>(c.down.size())) % 2 == 0;
    return static_cast<std::int32_t>(a ? beta_ - 1 : alpha_ - 1);
  }
  static Level up_gain(bool type_a) { return type_a ? Level{1, 0} : Level{0, 1}; }

  long alpha_, beta_;
  LevelBasis basis_;
};

ModelPtr build_model(const ModelSpec& spec);

// Cartesian product G1 x G2. Only used for ball oracles; series come from the
// binomial combinator in return_series.
class ProductModel final : public WalkModel {
 public:
  explicit ProductModel(ModelSpec s) : WalkModel(std::move(s)) {
    left_ = build_model(spec().factors.at(0));
    right_ = build_model(spec().factors.at(1));
    const auto& bl = left_->basis();
    const auto& br = right_->basis();
    if (bl.generators() > 1 || br.generators() > 1)
      throw InvalidArgument("product factors must have at most one level generator each");
    if (bl.unimodular && br.unimodular) {
      basis_ = LevelBasis::trivial();
    } else if (bl.unimodular || br.unimodular || bl.g1 == br.g1) {
      basis_ = LevelBasis::make(bl.unimodular ? br.g1 : bl.g1);
      merged_ = true;
    } else {
      basis_ = LevelBasis::make(bl.g1, br.g1);
    }
  }

  const WalkModel& left() const { return *left_; }
  const WalkModel& right() const { return *right_; }

  long degree() const override { return left_->degree() + right_->degree(); }
  const LevelBasis& basis() const override { return basis_; }
  VertexCode root() const override { return join(left_->root(), right_->root()); }
  void neighbors(const VertexCode& v, std::vector<VertexCode>& out) const override {
    auto [x, y] = split(v);
    std::vector<VertexCode> tmp;
    left_->neighbors(x, tmp);
    for (const auto& n : tmp) out.push_back(join(n, y));
    tmp.clear();
    right_->neighbors(y, tmp);
    for (const auto& n : tmp) out.push_back(join(x, n));
  }
  Level level(const VertexCode& v) const override {
    auto [x, y] = split(v);
    Level a = left_->level(x), b = right_->level(y);
    if (basis_.unimodular) return {};
    if (merged_) return {a.a + b.a, 0};
    return {a.a, b.a};
  }
  int period() const override { return left_->period() == 2 && right_->period() == 2 ? 2 : 1; }
  bool transitive() const override { return left_->transitive() && right_->transitive(); }
  bool amenable_mode() const override { return left_->amenable_mode() && right_->amenable_mode(); }
  bool stretched_tail() const override { return left_->stretched_tail() || right_->stretched_tail(); }
  std::optional<QuadNumber> closed_form_rho() const override {
    auto a = left_->closed_form_rho(), b = right_->closed_form_rho();
    if (!a || !b) return std::nullopt;
    try {
      return (*a * QuadNumber(Rational(left_->degree())) + *b * QuadNumber(Rational(right_->degree()))) /
             QuadNumber(Rational(degree()));
    } catch (const Error&) {
      return std::nullopt;  // factors live in different quadratic fields
    }
  }
  // (d1 r1 + d2 r2)^2 / d^2 stays quadratic when r1^2 and r2^2 are rational:
  // the cross term is sqrt(r1^2 r2^2).
  std::optional<QuadNumber> closed_form_rho_squared() const override {
    if (auto q = closed_form_rho()) return *q * *q;
    auto a = left_->closed_form_rho_squared(), b = right_->closed_form_rho_squared();
    if (!a || !b || !a->is_rational() || !b->is_rational()) return std::nullopt;
    Rational d1(left_->degree()), d2(right_->degree()), d(degree());
    Rational x = a->rational_part(), y = b->rational_part();
    QuadNumber cross = QuadNumber::sqrt_of(x * y) * QuadNumber(2 * d1 * d2);
    return (QuadNumber(x * d1 * d1 + y * d2 * d2) + cross) / QuadNumber(d * d);
  }
  std::optional<HighFloat> closed_form_rho_high() const override {
    auto a = left_->closed_form_rho_high(), b = right_->closed_form_rho_high();
    if (!a || !b) return std::nullopt;
    return (*a * left_->degree() + *b * right_->degree()) / degree();
  }

  static std::pair<VertexCode, VertexCode> split(const VertexCode& v) {
    std::size_t n = static_cast<std::size_t>(v.at(0));
    return {VertexCode(v.begin() + 1, v.begin() + 1 + static_cast<long>(n)),
            VertexCode(v.begin() + 1 + static_cast<long>(n), v.end())};
  }
  static VertexCode join(const VertexCode& x, const VertexCode& y) {
    VertexCode v;
    v.reserve(1 + x.size() + y.size());
    v.push_back(static_cast<std::int32_t>(x.size()));
    v.insert(v.end(), x.begin(), x.end());
    v.insert(v.end(), y.begin(), y.end());
    return v;
  }

 private:
  ModelPtr left_, right_;
  LevelBasis basis_;
  bool merged_ = false;
};

inline ModelPtr build_model(const ModelSpec& spec) {
  spec.validate();
  ModelPtr m;
  switch (spec.family) {
    case Family::RegularTree: m = std::make_shared<RegularTreeModel>(spec); break;
    case Family::FixedEndTree: m = std::make_shared<FixedEndTreeModel>(spec); break;
    case Family::Grandparent: m = std::make_shared<GrandparentModel>(spec); break;
    case Family::DiestelLeader: m = std::make_shared<DiestelLeaderModel>(spec); break;
    case Family::FreeProduct: m = std::make_shared<FreeProductModel>(spec); break;
    case Family::CartesianProduct: m = std::make_shared<ProductModel>(spec); break;
  }
  // The closed-form degree must match the actual neighbor list of the root.
  std::vector<VertexCode> nb;
  m->neighbors(m->root(), nb);
  if (static_cast<long>(nb.size()) != m->degree())
    throw InvariantViolation(spec.str() + ": enumerated root degree differs from closed form");
  return m;
}

inline ModelPtr build_model(std::string_view text) { return build_model(ModelSpec::parse(text)); }

// ---------------------------------------------------------------------------
// Neighbor profile

// Profile of the neighbors of v (the root by default).
inline LevelProfile neighbor_level_profile(const WalkModel& model, const VertexCode* at = nullptr) {
  VertexCode v = at ? *at : model.root();
  LevelProfile p;
  p.degree = model.degree();
  p.basis = model.basis();
  std::vector<VertexCode> nb;
  model.neighbors(v, nb);
  Level lv = model.level(v);
  std::map<Level, long> counts;
  for (const auto& y : nb) counts[model.level(y) - lv] += 1;
  for (const auto& [l, c] : counts) p.entries.push_back({p.basis.ratio(l), c, l});
  std::sort(p.entries.begin(), p.entries.end(), [](const auto& x, const auto& y) { return x.q > y.q; });
  if (p.total() != p.degree) throw InvariantViolation("profile counts do not sum to the degree");
  return p;
}

// ---------------------------------------------------------------------------
// Explicit balls

struct ExplicitGraph {
  LevelBasis basis;
  long degree = 0;
  int radius = 0;
  std::vector<VertexCode> codes;
  std::vector<std::vector<int>> adj;
  std::vector<Level> level;
  std::vector<int> dist;
  std::unordered_map<VertexCode, int, VectorHash> index;

  std::size_t size() const { return codes.size(); }
  int root() const { return 0; }
  int find(const VertexCode& v) const {
    auto it = index.find(v);
    return it == index.end() ? -1 : it->second;
  }
  long lattice_level(int v) const { return basis.lattice_level(level[static_cast<std::size_t>(v)]); }

  void write_csv(std::ostream& os) const {
    os << "vertex_id,neighbor_id,level\n";
    for (std::size_t v = 0; v < size(); ++v) {
      std::string lv = basis.lattice || basis.unimodular ? std::to_string(basis.lattice_level(level[v]))
                                                         : std::to_string(level[v].a) + ";" + std::to_string(level[v].b);
      for (int w : adj[v]) os << v << ',' << w << ',' << lv << '\n';
    }
  }
};

inline constexpr std::size_t kDefaultBallCap = 4'000'000;

// All vertices within graph distance `radius` of the root, in BFS order.
// Adjacency lists hold every neighbor inside the ball; they are complete for
// vertices at distance < radius.
inline ExplicitGraph enumerate_ball(const WalkModel& model, int radius, std::size_t cap = kDefaultBallCap) {
  if (radius < 0) throw InvalidArgument("radius must be >= 0");
  ExplicitGraph g;
  g.basis = model.basis();
  g.degree = model.degree();
  g.radius = radius;
  auto add = [&](VertexCode v, int d) {
    int id = static_cast<int>(g.codes.size());
    g.index.emplace(v, id);
    g.level.push_back(model.level(v));
    g.codes.push_back(std::move(v));
    g.dist.push_back(d);
    return id;
  };
  add(model.root(), 0);
  std::size_t begin = 0;
  std::size_t prev_sphere = 1;
  std::vector<VertexCode> nb;
  for (int d = 0; d < radius; ++d) {
    std::size_t end = g.codes.size();
    std::size_t sphere = end - begin;
    double growth = prev_sphere ? static_cast<double>(sphere) / static_cast<double>(prev_sphere) : 1.0;
    double estimate = static_cast<double>(end) + static_cast<double>(sphere) * std::max(growth, 1.0) *
                                                   static_cast<double>(radius - d);
    if (d > 0 && estimate > static_cast<double>(cap)) {
      std::ostringstream os;
      os << "ball of radius " << radius << " around " << model.name() << " estimated at " << static_cast<long long>(estimate)
         << " vertices, above the cap " << cap;
      throw BudgetExceeded(os.str());
    }
    for (std::size_t v = begin; v < end; ++v) {
      nb.clear();
      model.neighbors(g.codes[v], nb);
      for (auto& y : nb)
        if (!g.index.count(y)) add(std::move(y), d + 1);
      if (g.codes.size() > cap) throw BudgetExceeded("ball enumeration exceeded the vertex cap");
    }
    prev_sphere = sphere;
    begin = end;
  }
  g.adj.resize(g.codes.size());
  for (std::size_t v = 0; v < g.codes.size(); ++v) {
    nb.clear();
    model.neighbors(g.codes[v], nb);
    for (const auto& y : nb) {
      int w = g.find(y);
      if (w >= 0) g.adj[v].push_back(w);
    }
  }
  return g;
}

// Number of closed walks o -> o of each length 0..n inside the ball
// (exact for n <= 2 * radius).
inline std::vector<Integer> ball_closed_walks(const ExplicitGraph& g, int n) {
  if (n > 2 * g.radius) throw InvalidArgument("ball too small for the requested walk length");
  std::vector<Integer> cur(g.size()), nxt(g.size());
  std::vector<Integer> out(static_cast<std::size_t>(n) + 1);
  cur[0] = 1;
  out[0] = 1;
  for (int k = 1; k <= n; ++k) {
    for (auto& x : nxt) x = 0;
    for (std::size_t v = 0; v < g.size(); ++v) {
      if (cur[v] == 0) continue;
      for (int w : g.adj[v]) nxt[static_cast<std::size_t>(w)] += cur[v];
    }
    std::swap(cur, nxt);
    out[static_cast<std::size_t>(k)] = cur[0];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Collapsed chains

struct Transition {
  int target = 0;
  long count = 0;
};

/*
 * Quotient of simple random walk by the root stabilizer, truncated to the
 * states within distance `interior` of the root plus one frontier layer.
 * Transition probabilities are count / degree; frontier states have no rows
 * because no walk that reaches them can return within the horizon.
 */
struct CollapsedChain {
  std::string model;
  long degree = 0;
  int period = 1;
  int horizon = 0;
  int interior = 0;
  LevelBasis basis;
  std::vector<StateKey> states;
  std::vector<long> level;       // lattice level (0 when unimodular)
  std::vector<Level> raw_level;  // exponent pair
  std::vector<int> depth;        // graph distance from the root
  std::vector<Integer> orbit;    // |Gamma_o x|
  std::vector<std::vector<Transition>> rows;
  std::vector<std::size_t> depth_end;  // states[0, depth_end[k]) have depth <= k
  std::unordered_map<StateKey, int, ArrayHash> index;

  std::size_t size() const { return states.size(); }
  int root() const { return 0; }
  bool has_row(std::size_t i) const { return !rows[i].empty(); }
  Rational probability(std::size_t i, std::size_t k) const { return frac(rows[i][k].count, degree); }
  // Number of states at depth <= k (clamped to the whole chain).
  std::size_t prefix(long k) const {
    if (k < 0) return 0;
    if (static_cast<std::size_t>(k) >= depth_end.size()) return size();
    return depth_end[static_cast<std::size_t>(k)];
  }
  int find(const StateKey& s) const {
    auto it = index.find(s);
    return it == index.end() ? -1 : it->second;
  }
};

inline constexpr double kDefaultStateCap = 2.5e7;
inline constexpr double kOrbitByteCap = 2e9;

inline CollapsedChain collapse(const WalkModel& model, int n_max, double state_cap = kDefaultStateCap) {
  if (n_max < 0) throw InvalidArgument("n_max must be >= 0");
  if (!model.has_collapse()) throw InvalidArgument(model.name() + " has no orbit-collapsed chain");
  int interior = (n_max + 1) / 2;
  if (model.estimated_states(interior + 1) > state_cap) {
    std::ostringstream os;
    os << "collapsed chain for " << model.name() << " at horizon " << n_max << " needs about "
       << static_cast<long long>(model.estimated_states(interior + 1)) << " states, above the cap";
    throw BudgetExceeded(os.str());
  }
  // Orbit sizes grow like degree^depth, so their storage dominates at long horizons.
  double orbit_bytes = model.estimated_states(interior + 1) * (interior + 1) * std::log2(static_cast<double>(model.degree())) / 8;
  if (orbit_bytes > kOrbitByteCap) {
    std::ostringstream os;
    os << "collapsed chain for " << model.name() << " at horizon " << n_max << " needs about " << orbit_bytes / 1e9
       << " GB of orbit sizes, above the cap";
    throw BudgetExceeded(os.str());
  }
  CollapsedChain c;
  c.model = model.name();
  c.degree = model.degree();
  c.period = model.period();
  c.horizon = n_max;
  c.interior = n_max == 0 ? 0 : interior;
  c.basis = model.basis();
  auto add = [&](const StateKey& s, int d) {
    int id = static_cast<int>(c.states.size());
    c.index.emplace(s, id);
    c.states.push_back(s);
    c.raw_level.push_back(model.state_level(s));
    c.level.push_back(c.basis.lattice_level(c.raw_level.back()));
    c.depth.push_back(d);
    c.orbit.push_back(model.orbit_size(s));
    c.rows.emplace_back();
    return id;
  };
  add(model.root_state(), 0);
  std::vector<std::pair<StateKey, long>> moves;
  // BFS keeps states sorted by depth. With n_max == 0 only the root remains.
  for (std::size_t i = 0; i < c.states.size() && n_max > 0; ++i) {
    if (c.depth[i] > c.interior) break;
    moves.clear();
    model.state_moves(c.states[i], moves);
    long total = 0;
    std::vector<Transition> row;
    row.reserve(moves.size());
    for (const auto& [s, cnt] : moves) {
      int j = c.find(s);
      if (j < 0) j = add(s, c.depth[i] + 1);
      row.push_back({j, cnt});
      total += cnt;
    }
    if (total != c.degree) throw InvariantViolation(c.model + ": collapsed row does not sum to the degree");
    c.rows[i] = std::move(row);
    if (static_cast<double>(c.states.size()) > state_cap) throw BudgetExceeded("collapsed chain exceeded the state cap");
  }
  int maxd = c.depth.back();
  c.depth_end.assign(static_cast<std::size_t>(maxd) + 1, 0);
  for (std::size_t i = 0; i < c.size(); ++i) c.depth_end[static_cast<std::size_t>(c.depth[i])] = i + 1;
  for (std::size_t k = 1; k < c.depth_end.size(); ++k) c.depth_end[k] = std::max(c.depth_end[k], c.depth_end[k - 1]);
  return c;
}

// Exact number of closed walks of each length n <= n_max from the chain
// (u_n = W_n / d^n). Sources deeper than min(k, n_max - k) cannot contribute.
inline std::vector<Integer> chain_closed_walks(const CollapsedChain& c, int n_max) {
  if (n_max > c.horizon) throw InvalidArgument("n_max exceeds the chain horizon");
  std::vector<Integer> cur(c.size()), nxt(c.size());
  std::vector<Integer> out(static_cast<std::size_t>(n_max) + 1);
  cur[0] = 1;
  out[0] = 1;
  for (int k = 1; k <= n_max; ++k) {
    std::size_t src = c.prefix(std::min(k - 1, n_max - k + 1));
    std::size_t dst = c.prefix(std::min(k, n_max - k));
    for (std::size_t i = 0; i < dst; ++i) nxt[i] = 0;
    for (std::size_t i = 0; i < src; ++i) {
      if (cur[i] == 0) continue;
      for (const auto& t : c.rows[i])
        if (static_cast<std::size_t>(t.target) < dst) mpz_addmul_ui(nxt[t.target].get_mpz_t(), cur[i].get_mpz_t(), static_cast<unsigned long>(t.count));
    }
    std::swap(cur, nxt);
    out[static_cast<std::size_t>(k)] = cur[0];
  }
  return out;
}

struct ValidationReport {
  bool ok = true;
  std::string model;
  struct Row {
    int n;
    Rational ball;
    Rational chain;
    bool equal;
  };
  std::vector<Row> rows;
};

inline ValidationReport validate_collapse(const WalkModel& model, int n_check = 12) {
  ValidationReport rep;
  rep.model = model.name();
  auto ball = enumerate_ball(model, (n_check + 1) / 2);
  auto wb = ball_closed_walks(ball, n_check);
  auto chain = collapse(model, n_check);
  auto wc = chain_closed_walks(chain, n_check);
  Integer dn = 1;
  for (int n = 0; n <= n_check; ++n) {
    Rational a = frac(wb[static_cast<std::size_t>(n)], dn), b = frac(wc[static_cast<std::size_t>(n)], dn);
    bool eq = a == b;
    rep.ok = rep.ok && eq;
    rep.rows.push_back({n, a, b, eq});
    dn *= model.degree();
  }
  return rep;
}

}  // namespace nonuni
