#pragma once

#include <string>

namespace fedsde {

enum class ScheduleKind { constant, power_decay, inverse_sqrt };

/// A learning-rate schedule eta(t), t >= 0, with closed-form integrals.
///
///   constant(c):     c
///   power_decay(b):  1 / (t + 1)^b
///   inverse_sqrt:    1 / sqrt(t + 1)      (power_decay with b = 1/2)
class Schedule {
 public:
  static Schedule constant(double value);
  static Schedule power_decay(double exponent);
  static Schedule inverse_time() { return power_decay(1.0); }
  static Schedule inverse_sqrt();

  ScheduleKind kind() const noexcept { return kind_; }
  /// c for constant, b for power_decay, 1/2 for inverse_sqrt.
  double parameter() const noexcept { return parameter_; }

  double operator()(double t) const;
  /// integral_0^t eta(s) ds
  double integral(double t) const;
  /// integral_0^t eta(s)^2 ds
  double integral_of_square(double t) const;
  /// Inverse of integral(): the t with integral(t) = value.
  double inverse_integral(double value) const;

  bool strictly_positive() const noexcept;
  std::string describe() const;

  friend bool operator==(const Schedule&, const Schedule&) = default;

 private:
  Schedule(ScheduleKind kind, double parameter) : kind_(kind), parameter_(parameter) {}

  double exponent() const noexcept;

  ScheduleKind kind_;
  double parameter_;
};

}  // namespace fedsde
