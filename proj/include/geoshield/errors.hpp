#pragma once

#include <stdexcept>
#include <string>

namespace geoshield {

// Invalid argument or value outside a documented domain.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Codec failure inside a robustness transform.
class TransformError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An encoder lacks a capability the caller requires (e.g. input gradients).
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated an interface contract (missing bundle entry, shape mismatch).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// image_feature and z_non_geo coincide, so no geographic direction remains.
class DegenerateDecompositionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Network failure, timeout or refusal. Retriable.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The remote answered but the payload is unusable (empty, malformed).
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, int iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

// Input data does not line up (manifest/prediction id mismatch, bad records).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace geoshield
