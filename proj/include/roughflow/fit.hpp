#pragma once

// Least-squares fits used for convergence orders and decay exponents.

#include <cmath>
#include <vector>

#include "roughflow/error.hpp"

namespace roughflow {

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  int samples = 0;
};

inline LinearFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size(), ErrorCode::invalid_argument, "fit inputs differ in length");
  require(x.size() >= 2, ErrorCode::insufficient_samples, "need at least two samples to fit");
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  require(sxx > 0.0, ErrorCode::insufficient_samples, "fit abscissae are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.samples = static_cast<int>(x.size());
  return f;
}

/// Slope of log y against log x; every sample must be positive.
inline LinearFit log_log_fit(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0.0 && y[i] > 0.0, ErrorCode::invalid_argument, "log-log fit needs positive samples");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  return least_squares(lx, ly);
}

/// Convergence order of errors measured at grid spacings h: slope of log e vs log h.
inline double convergence_order(const std::vector<double>& h, const std::vector<double>& errors) {
  return log_log_fit(h, errors).slope;
}

}  // namespace roughflow
