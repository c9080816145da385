#pragma once

#include <string>
#include <vector>

#include "sevis/harness.hpp"

namespace sevis {

/// Everything a study needs: the simulated world, the estimator
/// configurations to compare and the batch parameters.
struct HarnessConfig {
  SimConfig sim;
  std::vector<EstimatorConfig> estimators;
  int runs = 50;
  std::uint64_t seed = 42;
  int workers = 0;  // <= 0: hardware concurrency
  std::string out_dir = "out";

  /// The three-way study configuration (VIO / full SLAM / SEVIS).
  static HarnessConfig defaults();
};

/// Parses a JSON config file. Missing fields keep their defaults; estimator
/// entries start from the preset of their "mode" and apply overrides.
HarnessConfig load_config(const std::string& path);

std::string config_to_json(const HarnessConfig& cfg);

}  // namespace sevis
