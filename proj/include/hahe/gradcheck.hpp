#pragma once

// Finite-difference check of the full training loss on a toy model
// (12 entities, 6 hyperedges) at 64-bit precision.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hahe/config.hpp"
#include "hahe/model.hpp"

namespace hahe {

struct GradcheckOptions {
  double tolerance = 1e-4;
  double eps = 1e-5;
  std::uint64_t seed = 7;
  // Test hook: may modify the analytic gradient of a named tensor before
  // the comparison.
  std::function<void(const std::string&, Tensor&)> corrupt;
};

struct GradcheckGroup {
  std::string name;
  std::size_t count = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<GradcheckGroup> groups;
  double tolerance = 0.0;
  bool passed = true;
  std::string to_text() const;
};

// Toy sizes: d = 8, one global layer, two local layers, two heads.
TrainConfig gradcheck_config();

// Toy facts over 12 entities and 4 relations. Six facts, so six
// hyperedges, covering every edge type.
Dataset gradcheck_dataset();

// |a - n| / max(|a|, |n|, 1e-6).
double gradient_relative_error(double analytic, double numeric);

GradcheckReport run_gradcheck(const TrainConfig& config, const GradcheckOptions& options = {});

}  // namespace hahe
