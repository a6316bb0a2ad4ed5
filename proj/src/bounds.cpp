#include "fedsde/bounds.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <cstdio>
#include <ostream>

#include "fedsde/csv.hpp"
#include "fedsde/errors.hpp"

namespace fedsde {

BoundInputs BoundInputs::from_problem(const Problem& problem, const SmoothnessConstants& constants,
                                      const FedAvgConfig& config, double vstar, const WeightVector& w_init,
                                      const WeightVector& w_star, double tau) {
  BoundInputs in;
  in.L = constants.L;
  in.mu = constants.mu;
  for (const auto& c : problem.clients()) {
    in.weights.push_back(c.weight);
    in.noise_traces.push_back(c.noise_cov.trace());
  }
  in.local_steps = config.local_steps;
  in.h = config.h;
  in.vstar = vstar;
  in.f_init = global_loss(problem, w_init);
  in.f_star = global_loss(problem, w_star);
  in.distance_init = (w_init - w_star).norm();
  in.tau = tau;
  in.server_rate = config.server_schedule(0.0);
  in.dimension = static_cast<std::size_t>(problem.dimension());
  return in;
}

void BoundInputs::validate() const {
  if (!(L >= 0.0) || !(mu >= 0.0)) throw InvalidArgument("L and mu must be >= 0");
  if (weights.size() != noise_traces.size()) throw InvalidArgument("weights and traces differ in length");
  for (double tr : noise_traces) {
    if (!(tr >= 0.0)) throw InvalidArgument("noise traces must be >= 0");
  }
  if (local_steps < 1) throw InvalidArgument("E must be >= 1");
  if (!(h > 0.0)) throw InvalidArgument("h must be > 0");
  if (!(vstar >= 0.0) || !std::isfinite(vstar)) throw InvalidArgument("V* must be finite and >= 0");
  if (!(distance_init >= 0.0)) throw InvalidArgument("distance must be >= 0");
}

double BoundInputs::drift_scale() const {
  double s = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k] * (L + std::sqrt(noise_traces[k]));
  return s;
}

double BoundInputs::c1() const {
  const double e = local_steps;
  return e * e * L * mu * drift_scale() / 2.0;
}

double BoundInputs::c2() const {
  const double e = local_steps;
  return mu * e * e * drift_scale();
}

double BoundInputs::c3() const {
  return static_cast<double>(dimension) * h * server_rate * server_rate * vstar / 2.0 +
         server_rate * c2() * distance_init;
}

namespace {

// Exponent as a small fraction when it is one ("1/4"), else %g.
std::string exponent_label(double x) {
  for (int den = 1; den <= 64; ++den) {
    const double num = std::round(x * den);
    if (std::abs(num / den - x) < 1e-12) {
      if (den == 1) return std::to_string(static_cast<long long>(num));
      return std::to_string(static_cast<long long>(num)) + "/" + std::to_string(den);
    }
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

}  // namespace

double phi(const Schedule& schedule, double t) {
  if (!(t >= 0.0)) throw InvalidArgument("phi needs t >= 0");
  return schedule.integral(t);
}

double theorem1_rhs(const BoundInputs& in, const Schedule& schedule, double t) {
  in.validate();
  if (!(t > 0.0)) throw InvalidArgument("theorem1_rhs undefined at t = 0");
  const double e_phi = in.local_steps * phi(schedule, t);
  const double noise = (in.c1() + in.h * in.vstar * in.L / 2.0) * schedule.integral_of_square(t);
  return in.loss_gap() / e_phi + noise / e_phi;
}

Corollary1Result corollary1_rhs(const BoundInputs& in, double b, double t) {
  if (!(b > 0.0 && b <= 1.0)) throw InvalidArgument("corollary 1 needs b in (0, 1]");
  if (!(t > 0.0)) throw InvalidArgument("corollary 1 needs t > 0");
  in.validate();
  const double e = in.local_steps;
  const double noise = in.c1() + in.h * in.vstar * in.L / 2.0;
  if (b == 1.0) return {(in.loss_gap() + noise) / (e * std::log1p(t)), "1/log(t)"};
  if (b == 0.5) {
    const double phi_t = 2.0 * std::sqrt(t + 1.0) - 2.0;
    return {in.loss_gap() / (e * phi_t) + noise * std::log1p(t) / (e * phi_t), "log(t)/√t"};
  }
  const double value = theorem1_rhs(in, Schedule::power_decay(b), t);
  return {value, "1/t^{" + exponent_label(b < 0.5 ? b : 1.0 - b) + "}"};
}

Corollary2Result corollary2_rhs(const BoundInputs& in, double eta_c, double t) {
  in.validate();
  if (!(eta_c > 0.0)) throw InvalidArgument("eta_c must be > 0");
  if (!(t > 0.0)) throw InvalidArgument("corollary 2 needs t > 0");
  const double e = in.local_steps;
  const double first = (in.loss_gap() + eta_c * eta_c * in.h * in.vstar * in.L / 2.0) / (e * eta_c * std::log1p(t));
  const double limit_displayed = eta_c * in.c1();
  const double limit_scaled = eta_c * in.c1() / e;
  return {first + limit_displayed, first + limit_scaled, limit_displayed, limit_scaled};
}

double theorem2_rhs(const BoundInputs& in, const Schedule& schedule, double t) {
  in.validate();
  if (!(in.tau > 0.0)) throw InvalidArgument("tau must be > 0");
  if (!(in.server_rate > 0.0)) throw InvalidArgument("theorem 2 needs a positive constant server rate");
  if (!(t > 0.0)) throw InvalidArgument("theorem2_rhs undefined at t = 0");
  const double e = in.local_steps;
  const double eta0 = in.server_rate;
  const double denom = in.tau * eta0 * phi(schedule, t);
  const double sqrt_h_vstar = std::sqrt(in.h) * in.vstar;
  auto integrand = [&](double s) {
    const double rate = schedule(s);
    return rate * rate * (in.L * e * schedule.integral(s) + sqrt_h_vstar * std::sqrt(schedule.integral_of_square(s)));
  };
  const double outer =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 0.0, t, 20, 1e-13);
  return in.distance_init / denom + eta0 * eta0 * in.c2() * outer / denom +
         in.c3() * schedule.integral_of_square(t) / denom;
}

double corollary4_rhs(const BoundInputs& in, double t) {
  in.validate();
  if (!(in.tau > 0.0)) throw InvalidArgument("tau must be > 0");
  if (!(t > 0.0)) throw InvalidArgument("corollary4_rhs undefined at t = 0");
  const double eta0 = in.server_rate;
  const double e = in.local_steps;
  const double log_t = std::log1p(t);
  const double c2 = in.c2();
  return eta0 * eta0 * c2 * in.L * e / (in.tau * eta0) * (t - log_t) / (t * log_t) +
         (in.distance_init + in.c3() + eta0 * eta0 * c2 * std::sqrt(in.h) * in.vstar) / (in.tau * eta0 * log_t);
}

double drift_bound(int i, double eta, double L, double noise_trace) {
  if (i < 0) throw InvalidArgument("drift_bound needs i >= 0");
  return i * eta * (L + std::sqrt(noise_trace));
}

double estimate_vstar(std::span<const MomentEstimate> estimates, const Schedule& client_schedule) {
  if (estimates.empty()) throw InvalidArgument("estimate_vstar needs at least one state");
  double vstar = 0.0;
  for (const auto& est : estimates) {
    const double eta = client_schedule(est.t);
    vstar = std::max(vstar, spectral_norm(est.cov) / (eta * eta));
  }
  return vstar;
}

BoundReport compare_bound(std::string name, std::span<const Measurement> measured,
                          const std::function<double(double)>& rhs) {
  if (measured.empty()) throw InvalidArgument("compare_bound needs checkpoints");
  BoundReport report{std::move(name), {}, true};
  for (const auto& m : measured) {
    const double r = rhs(m.t);
    const bool ok = m.mean <= r + 3.0 * m.standard_error;
    report.checkpoints.push_back({m.t, m.mean, m.standard_error, r, r - m.mean, ok});
    report.pass = report.pass && ok;
  }
  return report;
}

BoundReport compare_bound(std::string name, std::span<const Measurement> measured,
                          std::span<const std::pair<double, double>> rhs_table) {
  if (rhs_table.size() != measured.size()) throw InvalidArgument("checkpoint grids differ in length");
  for (std::size_t i = 0; i < measured.size(); ++i) {
    if (rhs_table[i].first != measured[i].t) throw InvalidArgument("checkpoint grids differ");
  }
  std::size_t next = 0;
  return compare_bound(std::move(name), measured, [&](double) { return rhs_table[next++].second; });
}

Measurement measure_time_average(std::span<const Trajectory> runs, const TimeSampler& sampler,
                                 const std::function<double(const TrajectoryRecord&)>& functional,
                                 std::size_t samples_per_run, const StreamKey& key) {
  if (runs.empty() || samples_per_run == 0) throw InvalidArgument("measurement needs runs and samples");
  std::vector<double> per_run;
  per_run.reserve(runs.size());
  for (std::size_t r = 0; r < runs.size(); ++r) {
    Stream stream(key.child(r));
    double acc = 0.0;
    for (std::size_t s = 0; s < samples_per_run; ++s) {
      acc += functional(runs[r].at_time(sample_time_point(sampler, stream)));
    }
    per_run.push_back(acc / static_cast<double>(samples_per_run));
  }
  const double n = static_cast<double>(per_run.size());
  double mean = 0.0;
  for (double v : per_run) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : per_run) var += (v - mean) * (v - mean);
  const double se = per_run.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
  return {sampler.horizon(), mean, se};
}

void write_comparison_csv(std::ostream& out, const BoundReport& report) {
  out << "t,lhs_mean,lhs_se,rhs,margin\n";
  for (const auto& c : report.checkpoints) {
    out << format_real(c.t) << ',' << format_real(c.lhs_mean) << ',' << format_real(c.lhs_se) << ','
        << format_real(c.rhs) << ',' << format_real(c.margin) << '\n';
  }
}

}  // namespace fedsde
