#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace idsee {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct NonFinite : std::runtime_error {
  explicit NonFinite(const std::string& what) : std::runtime_error(what) {}
};
struct OutOfRange : std::runtime_error {
  explicit OutOfRange(const std::string& what) : std::runtime_error(what) {}
};
struct InvalidTolerance : std::runtime_error {
  explicit InvalidTolerance(const std::string& what) : std::runtime_error(what) {}
};
struct MisalignedAtom : std::runtime_error {
  explicit MisalignedAtom(const std::string& what) : std::runtime_error(what) {}
};
struct KernelUnbounded : std::runtime_error {
  explicit KernelUnbounded(const std::string& what) : std::runtime_error(what) {}
};
struct EstimatorNotFitted : std::runtime_error {
  explicit EstimatorNotFitted(const std::string& what) : std::runtime_error(what) {}
};
struct UnderdeterminedFit : std::runtime_error {
  explicit UnderdeterminedFit(const std::string& what) : std::runtime_error(what) {}
};
struct SingularNormalMatrix : std::runtime_error {
  explicit SingularNormalMatrix(const std::string& what) : std::runtime_error(what) {}
};
struct Blowup : std::runtime_error {
  explicit Blowup(const std::string& what) : std::runtime_error(what) {}
};
struct NoConvergence : std::runtime_error {
  explicit NoConvergence(const std::string& what) : std::runtime_error(what) {}
};
struct StepTooSmall : std::runtime_error {
  explicit StepTooSmall(const std::string& what) : std::runtime_error(what) {}
};
struct SingularWeight : std::runtime_error {
  explicit SingularWeight(const std::string& what) : std::runtime_error(what) {}
};
struct ConfigInvalid : std::runtime_error {
  explicit ConfigInvalid(const std::string& what) : std::runtime_error(what) {}
};
struct StiffRiccati : std::runtime_error {
  explicit StiffRiccati(const std::string& what) : std::runtime_error(what) {}
};
struct Unsupported : std::runtime_error {
  explicit Unsupported(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace idsee
