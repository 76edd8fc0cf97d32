#ifndef WEAKHAR_ERROR_HPP
#define WEAKHAR_ERROR_HPP

#include <stdexcept>
#include <string>

namespace weakhar {

// Base of every error raised by the pipeline. Stages catch this to attach
// participant context before rethrowing.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define WEAKHAR_DEFINE_ERROR(Name)          \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  };

WEAKHAR_DEFINE_ERROR(FormatError)      // malformed file header or body
WEAKHAR_DEFINE_ERROR(ShapeError)       // dimension or index out of range
WEAKHAR_DEFINE_ERROR(DataError)        // non-finite or missing values
WEAKHAR_DEFINE_ERROR(AlignmentError)   // clip/time ranges do not line up
WEAKHAR_DEFINE_ERROR(ConfigError)      // invalid user configuration
WEAKHAR_DEFINE_ERROR(NumericalError)   // factorization or loss blew up
WEAKHAR_DEFINE_ERROR(StateError)       // operation not valid in current state
WEAKHAR_DEFINE_ERROR(EmptyInputError)  // nothing to work with

#undef WEAKHAR_DEFINE_ERROR

// Call from a catch block: rethrows the active error as the same type with
// "context: " prepended. Anything that is not a weakhar::Error passes through.
[[noreturn]] inline void rethrow_with_context(const std::string& context) {
  try {
    throw;
  }
#define WEAKHAR_RETHROW(Name) \
  catch (const Name& e) { throw Name(context + ": " + e.what()); }
  WEAKHAR_RETHROW(FormatError)
  WEAKHAR_RETHROW(ShapeError)
  WEAKHAR_RETHROW(DataError)
  WEAKHAR_RETHROW(AlignmentError)
  WEAKHAR_RETHROW(ConfigError)
  WEAKHAR_RETHROW(NumericalError)
  WEAKHAR_RETHROW(StateError)
  WEAKHAR_RETHROW(EmptyInputError)
  WEAKHAR_RETHROW(Error)
#undef WEAKHAR_RETHROW
}

}  // namespace weakhar

#endif  // WEAKHAR_ERROR_HPP
