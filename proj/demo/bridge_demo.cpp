// Return probabilities and bridge level visits on the grandparent graph.
//
//   bridge_demo [n] [samples] [seed]

#include <cstdlib>
#include <iostream>

#include "nonuni/nonuni.hpp"

using namespace nonuni;

int main(int argc, char** argv) {
  int n = argc > 1 ? std::atoi(argv[1]) : 60;
  long samples = argc > 2 ? std::atol(argv[2]) : 2000;
  std::uint64_t seed = argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 1;

  auto model = build_model("grandparent(b=2)");
  auto u = return_series(*model, n);
  auto rho = spectral_radius(*model, u);
  std::cout << model->name() << "  rho = " << rho.str() << "\n";
  std::cout << "u_" << n << " = " << to_string(u.high(n), 20) << "\n\n";

  auto st = mc_bridge_statistics(*model, n, samples, seed, {0, 1, 2, 3, 4, 5});
  std::cout << "k  exact visits  sampled visits  distinct  P[reach k t0]  bound\n";
  for (const auto& r : st.rows)
    std::cout << r.k << "  " << to_double(to_high(*r.exact_visits)) << "  " << r.visits_mean << " +- " << r.visits_se
              << "  " << r.distinct_mean << "  " << r.hit << "  " << r.bound << "\n";
}
