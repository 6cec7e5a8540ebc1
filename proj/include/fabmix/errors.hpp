#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fabmix {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Covariance could not be made positive definite by the jitter ladder.
class SingularCovariance : public Error {
 public:
  using Error::Error;
};

// A component's soft count fell below the count floor.
class DegenerateComponent : public Error {
 public:
  DegenerateComponent(std::size_t component, double count, std::string where = {})
      : Error("degenerate component " + std::to_string(component) + " (soft count " +
              std::to_string(count) + ")" + (where.empty() ? "" : " at " + where)),
        component_(component),
        count_(count) {}

  std::size_t component() const { return component_; }
  double count() const { return count_; }

 private:
  std::size_t component_;
  double count_;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace fabmix
