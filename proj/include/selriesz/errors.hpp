#pragma once

#include <stdexcept>
#include <string>

namespace selriesz {

// Every library failure derives from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SELRIESZ_DEFINE_ERROR(Name)   \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  }

SELRIESZ_DEFINE_ERROR(ParseError);
SELRIESZ_DEFINE_ERROR(SchemaError);
SELRIESZ_DEFINE_ERROR(ConsistencyError);
SELRIESZ_DEFINE_ERROR(StratificationError);
SELRIESZ_DEFINE_ERROR(ConfigError);
SELRIESZ_DEFINE_ERROR(SingularNodeError);
SELRIESZ_DEFINE_ERROR(TrainError);
SELRIESZ_DEFINE_ERROR(DimensionError);
SELRIESZ_DEFINE_ERROR(SeparationError);
SELRIESZ_DEFINE_ERROR(DomainError);
SELRIESZ_DEFINE_ERROR(NumericalError);
SELRIESZ_DEFINE_ERROR(GroupError);

#undef SELRIESZ_DEFINE_ERROR

}  // namespace selriesz
