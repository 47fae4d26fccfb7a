#ifndef GFCA_ERROR_HPP
#define GFCA_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gfca {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument: wrong shape, out-of-range count, empty input.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Input data that cannot be processed (non-finite entries and similar).
class DataError : public Error {
 public:
  using Error::Error;
};

class MissingClassError : public Error {
 public:
  explicit MissingClassError(int class_id)
      : Error("class " + std::to_string(class_id) + " has no samples"),
        class_id_(class_id) {}
  int class_id() const noexcept { return class_id_; }

 private:
  int class_id_;
};

/// Data whose statistics collapse, e.g. all pooled rows identical.
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

/// A generated feature vector was zero before normalization.
class DegenerateSampleError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  LoadError(const std::string& what, std::ptrdiff_t row = -1)
      : Error(row >= 0 ? what + " (row " + std::to_string(row) + ")" : what),
        row_(row) {}
  std::ptrdiff_t row() const noexcept { return row_; }

 private:
  std::ptrdiff_t row_;
};

/// A loss term evaluated to NaN or infinity.
class NumericError : public Error {
 public:
  NumericError(const std::string& term, const std::string& what)
      : Error(term + ": " + what), term_(term) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

class UnsupportedGraphError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given inputs (e.g. empty subset).
class MetricError : public Error {
 public:
  using Error::Error;
};

class AggregationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace gfca

#endif  // GFCA_ERROR_HPP
