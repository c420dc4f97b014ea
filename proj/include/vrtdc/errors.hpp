#pragma once

#include <stdexcept>
#include <string>

namespace vrtdc {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define VRTDC_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

VRTDC_DEFINE_ERROR(SingularMatrix);
VRTDC_DEFINE_ERROR(NotSymmetric);
VRTDC_DEFINE_ERROR(DimensionMismatch);
VRTDC_DEFINE_ERROR(InvalidParams);
VRTDC_DEFINE_ERROR(NotErgodic);
VRTDC_DEFINE_ERROR(CoverageViolation);
VRTDC_DEFINE_ERROR(SingularA);
VRTDC_DEFINE_ERROR(SingularC);
VRTDC_DEFINE_ERROR(NotNegativeDefinite);
VRTDC_DEFINE_ERROR(TrajectoryTooShort);
VRTDC_DEFINE_ERROR(InvalidMixing);
VRTDC_DEFINE_ERROR(InvalidEpsilon);
VRTDC_DEFINE_ERROR(EmptyInput);
VRTDC_DEFINE_ERROR(ParseError);
VRTDC_DEFINE_ERROR(ValidationError);
VRTDC_DEFINE_ERROR(IoError);

#undef VRTDC_DEFINE_ERROR

}  // namespace vrtdc
