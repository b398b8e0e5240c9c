#pragma once

#include "arith.hpp"

#include <cmath>
#include <vector>

namespace nonuni {

struct LinearFit {
  double slope = 0;
  double stderr_slope = 0;
  double intercept = 0;
  double r2 = 0;
  std::size_t points = 0;
};

// Ordinary least squares y = intercept + slope * x.
inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InvalidArgument("linear_fit: size mismatch");
  std::size_t n = x.size();
  if (n < 3) throw InvalidArgument("linear_fit: need at least 3 points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) throw InvalidArgument("linear_fit: degenerate window");
  LinearFit f;
  f.points = n;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double e = y[i] - f.intercept - f.slope * x[i];
    sse += e * e;
  }
  f.stderr_slope = std::sqrt(sse / static_cast<double>(n - 2) / sxx);
  f.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
  return f;
}

// Least squares solution of X c = y by Householder QR, in high precision.
// X is row-major with rows.size() >= columns.
inline std::vector<HighFloat> least_squares(std::vector<std::vector<HighFloat>> X, std::vector<HighFloat> y) {
  std::size_t m = X.size();
  if (m == 0) throw InvalidArgument("least_squares: no rows");
  std::size_t n = X[0].size();
  if (m < n) throw InvalidArgument("least_squares: underdetermined");
  for (std::size_t j = 0; j < n; ++j) {
    HighFloat norm = 0;
    for (std::size_t i = j; i < m; ++i) norm += X[i][j] * X[i][j];
    norm = sqrt(norm);
    if (norm == 0) throw InvalidArgument("least_squares: rank deficient");
    HighFloat alpha = X[j][j] > 0 ? HighFloat(-norm) : norm;
    std::vector<HighFloat> v(m, HighFloat(0));
    v[j] = X[j][j] - alpha;
    for (std::size_t i = j + 1; i < m; ++i) v[i] = X[i][j];
    HighFloat vv = 0;
    for (std::size_t i = j; i < m; ++i) vv += v[i] * v[i];
    if (vv == 0) continue;
    for (std::size_t k = j; k < n; ++k) {
      HighFloat s = 0;
      for (std::size_t i = j; i < m; ++i) s += v[i] * X[i][k];
      s = 2 * s / vv;
      for (std::size_t i = j; i < m; ++i) X[i][k] -= s * v[i];
    }
    HighFloat s = 0;
    for (std::size_t i = j; i < m; ++i) s += v[i] * y[i];
    s = 2 * s / vv;
    for (std::size_t i = j; i < m; ++i) y[i] -= s * v[i];
  }
  std::vector<HighFloat> c(n);
  for (std::size_t jj = n; jj-- > 0;) {
    HighFloat s = y[jj];
    for (std::size_t k = jj + 1; k < n; ++k) s -= X[jj][k] * c[k];
    c[jj] = s / X[jj][jj];
  }
  return c;
}

}  // namespace nonuni
