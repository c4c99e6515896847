#include <doctest.h>

#include <cmath>
#include <vector>

#include "calib/core.hpp"
#include "calib/kernels.hpp"

using namespace calib;
using namespace calib::kernels;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * (2.0 * uniform01(rng) - 1.0) + 0.3 * scale;
  return v;
}

bool close(double a, double b, double scale) { return std::abs(a - b) <= 1e-12 * std::max(1.0, scale); }

}  // namespace

TEST_CASE("active backend is reported") {
  const auto b = active_backend();
  CHECK(backend_available(b));
  MESSAGE("active SIMD backend: " << to_string(b));
}

TEST_CASE("vector kernels agree with the scalar reference") {
  if (!backend_available(Backend::Avx2)) {
    MESSAGE("AVX2 not available; equivalence test skipped");
    return;
  }
  const auto& ref = table(Backend::Scalar);
  const auto& simd = table(Backend::Avx2);
  Rng rng(11);
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 9u, 15u, 16u, 17u, 100u, 1023u}) {
    CAPTURE(n);
    for (int rep = 0; rep < 10; ++rep) {
      const auto a = random_vector(rng, n, 10.0);
      const auto b = random_vector(rng, n, 3.0);
      double abs_sum = 0.0;
      for (double x : a) abs_sum += std::abs(x);
      CHECK(close(ref.sum(a.data(), n), simd.sum(a.data(), n), abs_sum));
      CHECK(close(ref.dot(a.data(), b.data(), n), simd.dot(a.data(), b.data(), n), abs_sum * 3.0));
      CHECK(close(ref.squared_distance(a.data(), b.data(), n), simd.squared_distance(a.data(), b.data(), n),
                  n * 200.0));
      const double mean = n ? ref.sum(a.data(), n) / static_cast<double>(n) : 0.0;
      const auto c1 = ref.central_sums(a.data(), n, mean);
      const auto c2 = simd.central_sums(a.data(), n, mean);
      CHECK(close(c1.s2, c2.s2, n * 200.0));
      CHECK(close(c1.s3, c2.s3, n * 3000.0));
      CHECK(close(c1.s4, c2.s4, n * 40000.0));
      for (std::size_t lag : {0u, 1u, 2u, 5u, 13u}) {
        CHECK(close(ref.lagged_product(a.data(), n, lag, mean), simd.lagged_product(a.data(), n, lag, mean),
                    n * 200.0));
      }
      std::vector<double> o1(n, 0.5), o2(n, 0.5);
      ref.accumulate_weighted_sq_diff(o1.data(), b.data(), n, 0.7, 2.5);
      simd.accumulate_weighted_sq_diff(o2.data(), b.data(), n, 0.7, 2.5);
      for (std::size_t j = 0; j < n; ++j) CHECK(close(o1[j], o2[j], 100.0));
    }
  }
}

TEST_CASE("backend can be forced for comparisons") {
  const auto before = active_backend();
  set_backend(Backend::Scalar);
  CHECK(active_backend() == Backend::Scalar);
  const std::vector<double> x{1, 2, 3, 4, 5};
  CHECK(sum(x) == 15.0);
  CHECK(lagged_product(x, 1, 3.0) == (-2.0 * -1.0 + -1.0 * 0.0 + 0.0 * 1.0 + 1.0 * 2.0));
  set_backend(before);
}
