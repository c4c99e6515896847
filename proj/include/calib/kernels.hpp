#pragma once

// Data-parallel inner loops used by the losses and surrogates. Each kernel has a
// scalar reference implementation and an AVX2 variant; the variant is chosen once
// at runtime from the CPU features (override with CALIB_SIMD=scalar|avx2).

#include <cstddef>
#include <span>
#include <string_view>

namespace calib::kernels {

enum class Backend { Scalar, Avx2 };

std::string_view to_string(Backend b);

struct CentralSums {
  double s2 = 0.0;  ///< sum of (x - mean)^2
  double s3 = 0.0;
  double s4 = 0.0;
};

struct KernelTable {
  double (*sum)(const double* x, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  CentralSums (*central_sums)(const double* x, std::size_t n, double mean);
  /// sum_{t < n - lag} (x[t] - mean) * (x[t + lag] - mean)
  double (*lagged_product)(const double* x, std::size_t n, std::size_t lag, double mean);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  /// out[j] += w * (col[j] - x)^2
  void (*accumulate_weighted_sq_diff)(double* out, const double* col, std::size_t n, double x, double w);
};

const KernelTable& table(Backend backend);
bool backend_available(Backend backend);

Backend active_backend();
/// Forces a backend (tests and benchmarks). Throws if the CPU lacks it.
void set_backend(Backend backend);

double sum(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
CentralSums central_sums(std::span<const double> x, double mean);
double lagged_product(std::span<const double> x, std::size_t lag, double mean);
double squared_distance(std::span<const double> a, std::span<const double> b);
void accumulate_weighted_sq_diff(std::span<double> out, std::span<const double> col, double x, double w);

namespace detail {
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
}  // namespace detail

}  // namespace calib::kernels
