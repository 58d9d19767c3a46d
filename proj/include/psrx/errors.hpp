#pragma once

#include <stdexcept>
#include <string>

namespace psrx {

// Base for every error this library throws.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define PSRX_DEFINE_ERROR(Name)                                                \
  class Name : public Error {                                                  \
  public:                                                                      \
    explicit Name(const std::string &what) : Error(#Name ": " + what) {}       \
  }

PSRX_DEFINE_ERROR(ZeroProbabilityObservation);
PSRX_DEFINE_ERROR(ImpossibleHistory);
PSRX_DEFINE_ERROR(ParseError);
PSRX_DEFINE_ERROR(ValidationError);
PSRX_DEFINE_ERROR(SteppedTerminal);
PSRX_DEFINE_ERROR(UnknownAction);
PSRX_DEFINE_ERROR(UnknownSymbol);
PSRX_DEFINE_ERROR(DimensionMismatch);
PSRX_DEFINE_ERROR(RankNotConverged);
PSRX_DEFINE_ERROR(SingularCoreMatrix);
PSRX_DEFINE_ERROR(AllSourcesDegenerate);
PSRX_DEFINE_ERROR(ConfigError);

#undef PSRX_DEFINE_ERROR

} // namespace psrx
