#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fedsde/model.hpp"

namespace fedsde {

/// How the noise terms of the E-step local update are combined.
///
/// paper_verbatim composes the displayed Gaussian terms by adding their
/// standard deviations:  K = eta S Sigma^{1/2} + E eta Sigma^{1/2},
/// cov = K K^T, with S = sum_{j<E} sum_{i=1..j} (I - eta U)^{j-i} U.
/// exact_moment propagates the covariance through the linear recursion:
/// cov = sum_{i<E} eta^2 (I - eta U)^i Sigma (I - eta U)^{iT}.
enum class MomentMode { paper_verbatim, exact_moment };

std::string to_string(MomentMode mode);
MomentMode moment_mode_from_string(const std::string& name);

struct LocalUpdateDistribution {
  WeightVector mean;
  Matrix cov;
};

/// Distribution of a client's weights after E local SGD steps from w0 with
/// constant rate eta on F(w) = 1/2 (w - a)^T U (w - a) and noise N(0, Sigma).
LocalUpdateDistribution local_update_distribution(const Matrix& curvature, const WeightVector& center,
                                                  const Matrix& noise_cov, double eta, int local_steps,
                                                  const WeightVector& w0, MomentMode mode);

struct QuadraticClient1D {
  double weight;
  double curvature;   // U_k > 0
  double center;      // a_k
  double noise_var;   // Sigma_k >= 0
};

/// Single-variate quadratic clients with a shared constant client rate.
struct QuadraticCase1D {
  std::vector<QuadraticClient1D> clients;
  double eta = 0.1;
  int local_steps = 1;
  double w_init = 0.0;

  /// Requires d = 1 and all-quadratic clients.
  static QuadraticCase1D from_problem(const Problem& problem, double eta, int local_steps, double w_init);

  void validate() const;
  /// |1 - eta U_k| < 1 for every client.
  bool locally_contracting() const;
};

/// Coefficients of the linear SDE dX = -A (X - C4) dt + sqrt(eta) B dB, in
/// the time units where one unit of drift is A (not scaled by eta).
struct SdeCoefficients {
  double A;    // sum_k p_k sum_{j<E} (1 - eta U_k)^j U_k
  double B;    // E + sum_k sum_{j<E} sum_{i=1..j} p_k sqrt(Sigma_k) (1 - eta U_k)^{j-i} U_k
  double C4;   // sum_k p_k c_k a_k / A with c_k the k-th drift weight
};

SdeCoefficients sde_coefficients(const QuadraticCase1D& c);

/// Mean and variance of a scalar linear SDE dX = -rate (X - center) dt + b dB,
/// X(0) = w_init.
///
/// paper_verbatim: rate = A, b^2 = eta B^2 (time measured in drift units).
/// exact_moment:   the FedAvg server SDE with step h and constant server rate
///                 eta0, rate = eta0 * (per-round drift slope), b^2 =
///                 eta0^2 h V with V = sum_k p_k^2 cov_k(exact); time is the
///                 integrator's continuous time t = round * h.
class AnalyticSolution {
 public:
  AnalyticSolution(MomentMode mode, double rate, double center, double diffusion_sq, double w_init);

  MomentMode mode() const noexcept { return mode_; }
  double rate() const noexcept { return rate_; }
  double center() const noexcept { return center_; }
  double diffusion_sq() const noexcept { return diffusion_sq_; }
  double w_init() const noexcept { return w_init_; }

  double mean(double t) const;
  /// Solution of dv/dt = -2 rate v + b^2, v(0) = 0.
  double variance(double t) const;
  /// Same prefactor with exp(-rate t) in place of exp(-2 rate t).
  double variance_paper_form(double t) const;
  double stationary_variance() const;

 private:
  MomentMode mode_;
  double rate_;
  double center_;
  double diffusion_sq_;
  double w_init_;
};

AnalyticSolution analytic_solution(const QuadraticCase1D& c, MomentMode mode, double h = 1.0,
                                   double server_rate = 1.0);

/// Paper-verbatim m0(t) = C4 + (w_init - C4) exp(-A t).
double analytic_mean(const QuadraticCase1D& c, double t);

struct AnalyticVariance {
  double ode;          // eta B^2 / (2A) (1 - exp(-2 A t))
  double paper_form;   // eta B^2 / (2A) (1 - exp(-A t))
};

/// Throws InvalidArgument when A <= 0.
AnalyticVariance analytic_variance(const QuadraticCase1D& c, double t);

/// (C4, stationary ODE variance) in paper-verbatim mode.
std::pair<double, double> stationary_limit(const QuadraticCase1D& c);

}  // namespace fedsde
