#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace aft {

using Vec = Eigen::VectorXd;
// Particles are rows; row-major so a particle is contiguous in memory.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VecRef = Eigen::Ref<Vec>;
using CVecRef = Eigen::Ref<const Vec>;

// Raised for malformed configuration; the message names the offending key.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a run cannot continue (weight collapse, non-finite log Z).
struct RunAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace aft
