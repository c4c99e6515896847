#include "calib/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "calib/errors.hpp"

namespace calib::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend detect() {
  const bool avx2 = backend_available(Backend::Avx2);
  if (const char* env = std::getenv("CALIB_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Backend::Scalar;
    if (v == "avx2" && avx2) return Backend::Avx2;
  }
  return avx2 ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{&table(detect())};
  return slot;
}

const KernelTable& active() { return *active_slot().load(std::memory_order_relaxed); }

void check_same_size(std::size_t a, std::size_t b) {
  if (a != b) throw DomainError("kernel operands differ in length");
}

}  // namespace

std::string_view to_string(Backend b) { return b == Backend::Avx2 ? "avx2" : "scalar"; }

bool backend_available(Backend backend) {
  if (backend == Backend::Scalar) return true;
  static const bool avx2 = detail::avx2_table() != nullptr && cpu_has_avx2();
  return avx2;
}

const KernelTable& table(Backend backend) {
  if (backend == Backend::Avx2) {
    if (!backend_available(Backend::Avx2)) throw std::runtime_error("AVX2 kernels are not available on this CPU");
    return *detail::avx2_table();
  }
  return detail::scalar_table();
}

Backend active_backend() { return &active() == &detail::scalar_table() ? Backend::Scalar : Backend::Avx2; }

void set_backend(Backend backend) { active_slot().store(&table(backend), std::memory_order_relaxed); }

double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

double dot(std::span<const double> a, std::span<const double> b) {
  check_same_size(a.size(), b.size());
  return active().dot(a.data(), b.data(), a.size());
}

CentralSums central_sums(std::span<const double> x, double mean) {
  return active().central_sums(x.data(), x.size(), mean);
}

double lagged_product(std::span<const double> x, std::size_t lag, double mean) {
  return active().lagged_product(x.data(), x.size(), lag, mean);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  check_same_size(a.size(), b.size());
  return active().squared_distance(a.data(), b.data(), a.size());
}

void accumulate_weighted_sq_diff(std::span<double> out, std::span<const double> col, double x, double w) {
  check_same_size(out.size(), col.size());
  active().accumulate_weighted_sq_diff(out.data(), col.data(), out.size(), x, w);
}

}  // namespace calib::kernels
