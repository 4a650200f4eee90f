#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace grouprobe {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using IVec = Eigen::VectorXi;

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr int kNumGroups = 4;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated data-spec / configuration preconditions.
class InvalidSpec : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Inputs for which a quantity is undefined (zero norms, zero denominators).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class Diverged : public Error {
 public:
  Diverged(const std::string& what, Index epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  Index epoch() const { return epoch_; }

 private:
  Index epoch_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// SplitMix64 finaliser; used to derive independent sub-stream seeds from a
// run seed and a stream tag.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace grouprobe
