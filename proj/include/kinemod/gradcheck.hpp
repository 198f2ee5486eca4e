#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "kinemod/encoder.hpp"

namespace kinemod {

struct GradSuiteOptions {
  std::size_t coords = 200;
  double tolerance = 1e-4;
  double step = 1e-5;
  std::uint64_t seed = 7;
  std::size_t batch = 4;
  std::size_t bank = 8;
  std::size_t modalities = 3;
  std::size_t frames = 12;
  std::size_t hidden = 8;
  std::size_t feature = 8;
  std::size_t embed_dim = 6;
};

struct LossGradCheck {
  std::string loss;
  GradCheckReport report;
};

// Finite-difference checks of info_nce, ikem, ekem and distill losses through freshly
// initialized reference encoders on random toy skeletons.
std::vector<LossGradCheck> run_gradient_suite(const GradSuiteOptions& options);

}  // namespace kinemod
