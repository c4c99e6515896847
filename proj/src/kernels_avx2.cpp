// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "calib/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace calib::kernels {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i];
  return s;
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

CentralSums central_sums_avx2(const double* x, std::size_t n, double mean) {
  const __m256d m = _mm256_set1_pd(mean);
  __m256d a2 = _mm256_setzero_pd();
  __m256d a3 = _mm256_setzero_pd();
  __m256d a4 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), m);
    const __m256d d2 = _mm256_mul_pd(d, d);
    a2 = _mm256_add_pd(a2, d2);
    a3 = _mm256_fmadd_pd(d2, d, a3);
    a4 = _mm256_fmadd_pd(d2, d2, a4);
  }
  CentralSums c{hsum(a2), hsum(a3), hsum(a4)};
  for (; i < n; ++i) {
    const double d = x[i] - mean;
    const double d2 = d * d;
    c.s2 += d2;
    c.s3 += d2 * d;
    c.s4 += d2 * d2;
  }
  return c;
}

double lagged_product_avx2(const double* x, std::size_t n, std::size_t lag, double mean) {
  if (lag >= n) return 0.0;
  const std::size_t len = n - lag;
  const __m256d m = _mm256_set1_pd(mean);
  __m256d acc = _mm256_setzero_pd();
  std::size_t t = 0;
  for (; t + 4 <= len; t += 4) {
    const __m256d u = _mm256_sub_pd(_mm256_loadu_pd(x + t), m);
    const __m256d v = _mm256_sub_pd(_mm256_loadu_pd(x + t + lag), m);
    acc = _mm256_fmadd_pd(u, v, acc);
  }
  double s = hsum(acc);
  for (; t < len; ++t) s += (x[t] - mean) * (x[t + lag] - mean);
  return s;
}

double squared_distance_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void accumulate_weighted_sq_diff_avx2(double* out, const double* col, std::size_t n, double x, double w) {
  const __m256d vx = _mm256_set1_pd(x);
  const __m256d vw = _mm256_set1_pd(w);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(col + j), vx);
    const __m256d wd = _mm256_mul_pd(vw, d);
    _mm256_storeu_pd(out + j, _mm256_fmadd_pd(wd, d, _mm256_loadu_pd(out + j)));
  }
  for (; j < n; ++j) {
    const double d = col[j] - x;
    out[j] += w * d * d;
  }
}

}  // namespace

const KernelTable* detail::avx2_table() {
  static const KernelTable t{sum_avx2,           dot_avx2,
                             central_sums_avx2,  lagged_product_avx2,
                             squared_distance_avx2, accumulate_weighted_sq_diff_avx2};
  return &t;
}

}  // namespace calib::kernels

#else

namespace calib::kernels {
const KernelTable* detail::avx2_table() { return nullptr; }
}  // namespace calib::kernels

#endif
