#include "fedsde/schedule.hpp"

#include <cmath>
#include <sstream>

#include "fedsde/errors.hpp"

namespace fedsde {
namespace {

// integral_0^t (s + 1)^{-p} ds
double power_integral(double p, double t) {
  if (p == 1.0) return std::log1p(t);
  return std::expm1((1.0 - p) * std::log1p(t)) / (1.0 - p);
}

}  // namespace

Schedule Schedule::constant(double value) {
  // Zero is allowed so a server rate can be switched off; samplers reject it.
  if (!(value >= 0.0) || !std::isfinite(value)) {
    throw InvalidArgument("constant schedule value must be finite and >= 0");
  }
  return Schedule(ScheduleKind::constant, value);
}

Schedule Schedule::power_decay(double exponent) {
  if (!(exponent >= 0.0) || !std::isfinite(exponent)) {
    throw InvalidArgument("power-decay exponent must be finite and >= 0");
  }
  return Schedule(ScheduleKind::power_decay, exponent);
}

Schedule Schedule::inverse_sqrt() { return Schedule(ScheduleKind::inverse_sqrt, 0.5); }

double Schedule::exponent() const noexcept {
  return kind_ == ScheduleKind::constant ? 0.0 : parameter_;
}

double Schedule::operator()(double t) const {
  if (kind_ == ScheduleKind::constant) return parameter_;
  return std::pow(t + 1.0, -exponent());
}

double Schedule::integral(double t) const {
  if (kind_ == ScheduleKind::constant) return parameter_ * t;
  return power_integral(exponent(), t);
}

double Schedule::integral_of_square(double t) const {
  if (kind_ == ScheduleKind::constant) return parameter_ * parameter_ * t;
  return power_integral(2.0 * exponent(), t);
}

double Schedule::inverse_integral(double value) const {
  if (kind_ == ScheduleKind::constant) {
    if (parameter_ == 0.0) throw InvalidArgument("zero schedule has no inverse integral");
    return value / parameter_;
  }
  const double p = exponent();
  if (p == 1.0) return std::expm1(value);
  return std::expm1(std::log1p((1.0 - p) * value) / (1.0 - p));
}

bool Schedule::strictly_positive() const noexcept {
  return kind_ != ScheduleKind::constant || parameter_ > 0.0;
}

std::string Schedule::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case ScheduleKind::constant: os << "constant(" << parameter_ << ")"; break;
    case ScheduleKind::power_decay: os << "1/(t+1)^" << parameter_; break;
    case ScheduleKind::inverse_sqrt: os << "1/sqrt(t+1)"; break;
  }
  return os.str();
}

}  // namespace fedsde
