#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace qmix {

using cplx = std::complex<double>;
using Block = Eigen::MatrixXcd;

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PreconditionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct BudgetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace qmix
