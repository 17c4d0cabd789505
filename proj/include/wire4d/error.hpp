#pragma once

#include <stdexcept>
#include <string>

namespace wire4d {

/// Parameter outside the spline domain, or a malformed size/shape argument.
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Geometry at or behind the camera near plane.
class ClipError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or malformed input file (wire, camera, mesh, polyline, config).
class InputError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Failure talking to the external guidance bridge.
class BridgeError : public std::runtime_error {
public:
  enum class Kind { Timeout, Protocol, Dimension, Connection, Remote };

  BridgeError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

private:
  Kind kind_;
};

}  // namespace wire4d
