#pragma once

#include <stdexcept>
#include <string>

namespace rnnpb {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inputs with inconsistent shapes or values outside an operation's domain.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class NoEquilibriumError : public Error {
 public:
  NoEquilibriumError(const std::string& what, double last_residual)
      : Error(what), last_residual_(last_residual) {}
  double last_residual() const { return last_residual_; }

 private:
  double last_residual_;
};

// The equilibrium input is on or outside the input polytope.
class InfeasibleEquilibrium : public Error {
 public:
  using Error::Error;
};

// The locality requirement vbar_i(h_i) >= |v_eq,i| fails for some channel.
class LocalityViolation : public Error {
 public:
  LocalityViolation(const std::string& what, int channel)
      : Error(what), channel_(channel) {}
  int channel() const { return channel_; }

 private:
  int channel_;
};

class SynthesisFailed : public Error {
 public:
  using Error::Error;
};

class DegenerateCertificate : public Error {
 public:
  using Error::Error;
};

// Closed loop started outside the robust invariant set.
class OutsideInvariantSet : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, int epoch)
      : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace rnnpb
