#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace smdlab {

/// Flat parameter vector holding every weight of a model.
using ParamVector = Eigen::VectorXd;
/// Image of a ParamVector under a mirror map.
using DualVector = Eigen::VectorXd;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base of every error raised by the library. `exit_code()` is what the CLI
/// returns when the error reaches the top level.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 2; }
};

#define SMDLAB_DEFINE_ERROR(Name, Code)                        \
  class Name : public Error {                                  \
   public:                                                     \
    using Error::Error;                                        \
    int exit_code() const override { return Code; }            \
  };

SMDLAB_DEFINE_ERROR(DomainError, 2)
SMDLAB_DEFINE_ERROR(ArgumentError, 1)
SMDLAB_DEFINE_ERROR(NumericError, 2)
SMDLAB_DEFINE_ERROR(DegenerateDataError, 2)
SMDLAB_DEFINE_ERROR(CapabilityError, 2)
SMDLAB_DEFINE_ERROR(PreconditionError, 2)
SMDLAB_DEFINE_ERROR(OracleError, 2)
SMDLAB_DEFINE_ERROR(ExperimentError, 2)
SMDLAB_DEFINE_ERROR(ConfigError, 1)
SMDLAB_DEFINE_ERROR(DataError, 1)
SMDLAB_DEFINE_ERROR(FormatError, 3)
SMDLAB_DEFINE_ERROR(IoError, 3)

#undef SMDLAB_DEFINE_ERROR

namespace detail {

inline void require_same_size(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw ArgumentError(std::string(what) + ": dimension mismatch (" + std::to_string(a) +
                        " vs " + std::to_string(b) + ")");
  }
}

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  return m.allFinite();
}

}  // namespace detail
}  // namespace smdlab
