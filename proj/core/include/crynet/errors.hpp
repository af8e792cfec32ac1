#pragma once

#include <stdexcept>
#include <string>

namespace crynet {

/// Base for every error raised by the library. Each subclass maps to one
/// failure category; the CLI turns categories into stable exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CRYNET_DEFINE_ERROR(Name)        \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

// Audio ingestion.
CRYNET_DEFINE_ERROR(ParseError);
CRYNET_DEFINE_ERROR(UnsupportedFormat);
CRYNET_DEFINE_ERROR(EmptyAudio);
CRYNET_DEFINE_ERROR(UnsupportedRate);
CRYNET_DEFINE_ERROR(TooShort);

// Configuration and numerics.
CRYNET_DEFINE_ERROR(ConfigError);
CRYNET_DEFINE_ERROR(ShapeError);
CRYNET_DEFINE_ERROR(LabelError);
CRYNET_DEFINE_ERROR(NumericalError);
CRYNET_DEFINE_ERROR(StabilityError);

// Data handling.
CRYNET_DEFINE_ERROR(IoError);
CRYNET_DEFINE_ERROR(DataError);
CRYNET_DEFINE_ERROR(NamingError);
CRYNET_DEFINE_ERROR(SplitError);
CRYNET_DEFINE_ERROR(LeakageError);

// Calibration and fusion.
CRYNET_DEFINE_ERROR(CalibrationError);
CRYNET_DEFINE_ERROR(CaseStudyFailure);

#undef CRYNET_DEFINE_ERROR

}  // namespace crynet
