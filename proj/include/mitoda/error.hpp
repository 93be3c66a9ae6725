#pragma once

#include <stdexcept>
#include <string>

namespace mitoda {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MITODA_DEFINE_ERROR(Name)              \
  class Name : public Error {                  \
   public:                                     \
    explicit Name(const std::string& what)     \
        : Error(std::string(#Name ": ") + what) {} \
  }

MITODA_DEFINE_ERROR(IoError);
MITODA_DEFINE_ERROR(GeometryError);
MITODA_DEFINE_ERROR(LabelError);
MITODA_DEFINE_ERROR(SplitError);
MITODA_DEFINE_ERROR(SamplingError);
MITODA_DEFINE_ERROR(ArgumentError);
MITODA_DEFINE_ERROR(ShapeError);
MITODA_DEFINE_ERROR(SelectionError);
MITODA_DEFINE_ERROR(TrainingError);
MITODA_DEFINE_ERROR(ConfigError);
MITODA_DEFINE_ERROR(RegistrationError);

#undef MITODA_DEFINE_ERROR

}  // namespace mitoda
