#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "grouprobe/experiment.hpp"

namespace testsupport {

namespace gp = grouprobe;

// Fresh empty directory under the system temp dir.
inline std::string temp_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  const fs::path p = fs::temp_directory_path() / ("grouprobe_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

inline gp::Vec random_vec(std::mt19937_64& rng, gp::Index n, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  return gp::Vec::NullaryExpr(n, [&] { return normal(rng); });
}

// Short reg-MTL / ERM config for fast trainer tests.
inline gp::FitConfig quick_fit(gp::Index epochs = 20, double lr = 1e-2, gp::Index batch = 64) {
  gp::FitConfig f;
  f.optim.learning_rate = lr;
  f.optim.batch_size = batch;
  f.optim.epochs = epochs;
  f.optim.seed = 3;
  return f;
}

}  // namespace testsupport
