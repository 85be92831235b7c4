#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gmw {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Shapes, joint counts or skeletons that do not line up.
class StructuralError : public Error {
public:
  using Error::Error;
};

/// Malformed or out-of-contract data (files, configs, non-finite values).
class ValidationError : public Error {
public:
  using Error::Error;
};

/// A bone vector too short to define a direction.
class DegenerateBoneError : public Error {
public:
  DegenerateBoneError(std::size_t frame, std::size_t joint, const std::string &joint_name)
      : Error("degenerate bone at frame " + std::to_string(frame) + ", joint " +
              std::to_string(joint) + " (" + joint_name + ")"),
        frame_(frame), joint_(joint) {}

  std::size_t frame() const noexcept { return frame_; }
  std::size_t joint() const noexcept { return joint_; }

private:
  std::size_t frame_;
  std::size_t joint_;
};

class BudgetExhausted : public Error {
public:
  using Error::Error;
};

/// The connection to an external classifier failed (timeout, closed stream).
class TransportError : public Error {
public:
  using Error::Error;
};

/// The external classifier answered with something the protocol does not allow.
class ProtocolError : public Error {
public:
  using Error::Error;
};

class InitializationError : public Error {
public:
  using Error::Error;
};

} // namespace gmw
