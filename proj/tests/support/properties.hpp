#pragma once

// Randomized invariant checks, one function per module. Each property runs at least
// `min_cases` random cases and records the first counterexample it finds.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace calib::prop {

struct PropertyResult {
  std::string module;
  std::string name;
  std::size_t cases = 0;
  std::size_t failures = 0;
  std::size_t min_cases = 100;
  std::string first_failure;
  std::string note;  ///< summary statistic for aggregate properties

  bool ok() const { return failures == 0 && cases >= min_cases; }
};

struct Environment {
  std::uint64_t seed = 20240611;
  std::string cli;                  ///< path of the calib executable (cli properties skip when empty)
  std::filesystem::path scratch;    ///< writable directory for cli properties
};

std::vector<PropertyResult> core_properties(const Environment& env);
std::vector<PropertyResult> loss_properties(const Environment& env);
std::vector<PropertyResult> surrogate_properties(const Environment& env);
std::vector<PropertyResult> sampler_properties(const Environment& env);
std::vector<PropertyResult> scheduler_properties(const Environment& env);
std::vector<PropertyResult> model_properties(const Environment& env);
std::vector<PropertyResult> calibrator_properties(const Environment& env);
std::vector<PropertyResult> cli_properties(const Environment& env);

std::vector<PropertyResult> all_properties(const Environment& env);

}  // namespace calib::prop
