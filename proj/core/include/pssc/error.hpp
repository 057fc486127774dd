#pragma once

#include <stdexcept>
#include <string>

namespace pssc {

/// Raised when reading or writing a file fails or a container is malformed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an operation needs data the input does not carry
/// (e.g. factor metadata on an image-only dataset).
class UnsupportedOperation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a checkpoint manifest disagrees with the requested architecture.
class IncompatibleCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the trainer when a loss becomes non-finite.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, long step, double loss_d, double loss_g, double loss_ps)
      : std::runtime_error(what), step(step), loss_d(loss_d), loss_g(loss_g), loss_ps(loss_ps) {}

  long step;
  double loss_d;
  double loss_g;
  double loss_ps;
};

}  // namespace pssc
