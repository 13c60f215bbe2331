#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <source_location>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sculpt {

// Row-major so that a row is one token / patch / voxel feature vector.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (shapes, ranges, ordering).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// NaN / Inf appeared in a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad user configuration: unknown ids, out-of-range settings, missing files.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Orchestration failure that is neither numeric nor configuration.
class PipelineError : public Error {
 public:
  using Error::Error;
};

void require(bool condition, std::string_view message,
             std::source_location where = std::source_location::current());

bool all_finite(const Matrix& m);
std::string shape_string(const Matrix& m);

// Seeded generator used for every random draw in the project. Built on
// std::mt19937_64 (its output sequence is fixed by the standard) with our own
// uniform/normal transforms, so draws do not depend on the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double normal();
  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stable 64-bit seed derivation: the same (seed, label) always yields the
// same child seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);
std::uint64_t fnv1a(std::string_view bytes);

Matrix normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace sculpt
