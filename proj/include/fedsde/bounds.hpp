#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedsde/discrete.hpp"
#include "fedsde/model.hpp"
#include "fedsde/schedule.hpp"
#include "fedsde/sde.hpp"
#include "fedsde/stats.hpp"

namespace fedsde {

/// Everything the convergence bounds consume. All values are plain numbers
/// so measured and hand-picked constants go through the same evaluators.
struct BoundInputs {
  double L = 0.0;
  double mu = 0.0;
  std::vector<double> weights;        // p_k
  std::vector<double> noise_traces;   // Tr(Sigma_k)
  int local_steps = 1;                // E
  double h = 1.0;
  double vstar = 0.0;                 // estimated sup of ||V1-hat||_S
  double f_init = 0.0;                // F(w0(0))
  double f_star = 0.0;                // F(w0*)
  double distance_init = 0.0;         // ||w0(0) - w0*||
  double tau = 1.0;
  double server_rate = 1.0;           // constant eta0
  std::size_t dimension = 1;          // d

  static BoundInputs from_problem(const Problem& problem, const SmoothnessConstants& constants,
                                  const FedAvgConfig& config, double vstar, const WeightVector& w_init,
                                  const WeightVector& w_star, double tau = 1.0);

  void validate() const;
  double loss_gap() const { return f_init - f_star; }
  /// Weighted client drift scale sum_k p_k (L + sqrt(Tr Sigma_k)).
  double drift_scale() const;
  /// E^2 L mu sum_k p_k (L + sqrt(Tr Sigma_k)) / 2
  double c1() const;
  /// mu E^2 sum_k p_k (L + sqrt(Tr Sigma_k))
  double c2() const;
  /// d h eta0^2 V* / 2 + eta0 C2 ||w0(0) - w0*||
  double c3() const;
};

/// integral_0^t eta.
double phi(const Schedule& schedule, double t);

/// Non-convex stationarity bound (server rate 1):
/// gap / (E phi) + (1 / (E phi)) int_0^t [C1 eta^2 + h eta^2 V* L / 2].
double theorem1_rhs(const BoundInputs& in, const Schedule& schedule, double t);

struct Corollary1Result {
  double value;
  /// "1/t^{b}" for b < 1/2, "log(t)/√t", "1/t^{1-b}" for 1/2 < b < 1,
  /// "1/log(t)"; exponents are printed as values, e.g. "1/t^{1/4}".
  std::string rate_class;
};

/// b = 1 and b = 1/2 use the displayed closed forms (which bound the
/// integral of eta^2 by its limit); other b evaluate the general bound with
/// eta = 1/(t+1)^b. Rejects b outside (0, 1].
Corollary1Result corollary1_rhs(const BoundInputs& in, double b, double t);

struct Corollary2Result {
  double displayed;          // (gap + eta_c^2 h V* L / 2) / (E eta_c log(t+1)) + eta_c C1
  double scaled;             // same first term + eta_c C1 / E
  double limit_displayed;    // eta_c C1
  double limit_scaled;       // eta_c C1 / E
};

/// Constant client rate eta_c, server rate 1/(t+1).
Corollary2Result corollary2_rhs(const BoundInputs& in, double eta_c, double t);

/// Weakly quasi-convex global bound with constant server rate. The outer
/// integral runs through adaptive Gauss-Kronrod quadrature.
double theorem2_rhs(const BoundInputs& in, const Schedule& schedule, double t);

/// Displayed closed form for eta = 1/(t+1).
double corollary4_rhs(const BoundInputs& in, double t);

/// i eta (L + sqrt(Tr Sigma_k)).
double drift_bound(int i, double eta, double L, double noise_trace);

/// max over visited states of ||V-hat / eta(t)^2||_S.
double estimate_vstar(std::span<const MomentEstimate> estimates, const Schedule& client_schedule);

struct Measurement {
  double t;
  double mean;
  double standard_error;
};

struct BoundCheckpoint {
  double t;
  double lhs_mean;
  double lhs_se;
  double rhs;
  double margin;   // rhs - lhs_mean
  bool pass;       // lhs_mean <= rhs + 3 se
};

struct BoundReport {
  std::string name;
  std::vector<BoundCheckpoint> checkpoints;
  bool pass = false;
};

BoundReport compare_bound(std::string name, std::span<const Measurement> measured,
                          const std::function<double(double)>& rhs);
/// Table form: the rhs grid must list exactly the measured times.
BoundReport compare_bound(std::string name, std::span<const Measurement> measured,
                          std::span<const std::pair<double, double>> rhs_table);

/// Monte Carlo estimate of E_{t~, G}[functional(w0(t~))] over independent
/// runs: each run averages `samples_per_run` time points drawn from
/// `sampler`; the SE is taken across runs.
Measurement measure_time_average(std::span<const Trajectory> runs, const TimeSampler& sampler,
                                 const std::function<double(const TrajectoryRecord&)>& functional,
                                 std::size_t samples_per_run, const StreamKey& key);

/// CSV: t,lhs_mean,lhs_se,rhs,margin
void write_comparison_csv(std::ostream& out, const BoundReport& report);

}  // namespace fedsde
