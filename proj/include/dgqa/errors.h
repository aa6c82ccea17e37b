#ifndef DGQA_ERRORS_H_
#define DGQA_ERRORS_H_

#include <stdexcept>
#include <string>

namespace dgqa {

// Precondition on an argument was violated (sizes, ranges, empty inputs).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Lookup of a distortion family that is not registered.
class RegistryError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// A correlation metric is undefined for the given inputs (e.g. constant data).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// File system or codec failure; the message carries the offending path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Wraps an error raised inside a named pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace dgqa

#endif  // DGQA_ERRORS_H_
