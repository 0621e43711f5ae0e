#pragma once

#include <stdexcept>
#include <string>

namespace pyra {

// Base class for all library errors.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

// Shape/rank mismatch in a tensor operation.
class dimension_error : public error {
 public:
  using error::error;
};

// Out-of-range row/column/token index.
class index_error : public error {
 public:
  using error::error;
};

// Invalid or infeasible merge schedule.
class schedule_error : public error {
 public:
  using error::error;
};

// Invalid token partition request.
class partition_error : public error {
 public:
  using error::error;
};

// Invalid run configuration (bad key, bad value, inconsistent combination).
class config_error : public error {
 public:
  using error::error;
};

// Malformed checkpoint or serialized document.
class format_error : public error {
 public:
  using error::error;
};

// Violation of an internal API contract (misuse of the library).
class contract_error : public error {
 public:
  using error::error;
};

// Non-finite value where a finite one is required (NaN gradient, diverged
// loss).
class numeric_error : public error {
 public:
  using error::error;
};

}  // namespace pyra
