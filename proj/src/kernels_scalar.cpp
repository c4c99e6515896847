#include "calib/kernels.hpp"

namespace calib::kernels {

namespace {

double sum_scalar(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

CentralSums central_sums_scalar(const double* x, std::size_t n, double mean) {
  CentralSums c;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - mean;
    const double d2 = d * d;
    c.s2 += d2;
    c.s3 += d2 * d;
    c.s4 += d2 * d2;
  }
  return c;
}

double lagged_product_scalar(const double* x, std::size_t n, std::size_t lag, double mean) {
  double s = 0.0;
  for (std::size_t t = 0; t + lag < n; ++t) s += (x[t] - mean) * (x[t + lag] - mean);
  return s;
}

double squared_distance_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void accumulate_weighted_sq_diff_scalar(double* out, const double* col, std::size_t n, double x, double w) {
  for (std::size_t j = 0; j < n; ++j) {
    const double d = col[j] - x;
    out[j] += w * d * d;
  }
}

}  // namespace

const KernelTable& detail::scalar_table() {
  static const KernelTable t{sum_scalar,           dot_scalar,
                             central_sums_scalar,  lagged_product_scalar,
                             squared_distance_scalar, accumulate_weighted_sq_diff_scalar};
  return t;
}

}  // namespace calib::kernels
