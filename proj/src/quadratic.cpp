#include "fedsde/quadratic.hpp"

#include <cmath>

#include "fedsde/errors.hpp"
#include "fedsde/sde.hpp"

namespace fedsde {

std::string to_string(MomentMode mode) {
  return mode == MomentMode::paper_verbatim ? "paper-verbatim" : "exact-moment";
}

MomentMode moment_mode_from_string(const std::string& name) {
  if (name == "paper-verbatim") return MomentMode::paper_verbatim;
  if (name == "exact-moment") return MomentMode::exact_moment;
  throw InvalidArgument("unknown moment mode '" + name + "'");
}

LocalUpdateDistribution local_update_distribution(const Matrix& curvature, const WeightVector& center,
                                                  const Matrix& noise_cov, double eta, int local_steps,
                                                  const WeightVector& w0, MomentMode mode) {
  const auto d = w0.size();
  if (curvature.rows() != d || curvature.cols() != d || center.size() != d || noise_cov.rows() != d ||
      noise_cov.cols() != d) {
    throw InvalidArgument("local_update_distribution operands are not conformable");
  }
  if (local_steps < 1) throw InvalidArgument("E must be >= 1");

  const Matrix identity = Matrix::Identity(d, d);
  const Matrix contraction = identity - eta * curvature;

  // powers[j] = (I - eta U)^j
  std::vector<Matrix> powers{identity};
  for (int j = 1; j < local_steps; ++j) powers.push_back(powers.back() * contraction);

  Matrix drift_sum = Matrix::Zero(d, d);
  for (const auto& p : powers) drift_sum += p;
  LocalUpdateDistribution out;
  out.mean = w0 - eta * drift_sum * curvature * (w0 - center);

  if (mode == MomentMode::exact_moment) {
    out.cov = Matrix::Zero(d, d);
    for (const auto& p : powers) out.cov += eta * eta * p * noise_cov * p.transpose();
  } else {
    Matrix nested = Matrix::Zero(d, d);
    for (int j = 0; j < local_steps; ++j) {
      for (int i = 1; i <= j; ++i) nested += powers[static_cast<std::size_t>(j - i)] * curvature;
    }
    const Matrix noise_root = matrix_sqrt_psd(noise_cov);
    const Matrix spread = eta * nested * noise_root + local_steps * eta * noise_root;
    out.cov = spread * spread.transpose();
  }
  return out;
}

QuadraticCase1D QuadraticCase1D::from_problem(const Problem& problem, double eta, int local_steps,
                                              double w_init) {
  if (problem.dimension() != 1) throw InvalidArgument("quadratic case needs a 1-D problem");
  if (!problem.all_quadratic()) throw InvalidArgument("quadratic case needs quadratic clients");
  QuadraticCase1D c;
  c.eta = eta;
  c.local_steps = local_steps;
  c.w_init = w_init;
  for (const auto& client : problem.clients()) {
    c.clients.push_back({client.weight, client.loss.curvature()(0, 0), client.loss.center()(0),
                         client.noise_cov(0, 0)});
  }
  c.validate();
  return c;
}

void QuadraticCase1D::validate() const {
  if (clients.empty()) throw InvalidArgument("quadratic case needs clients");
  if (!(eta > 0.0)) throw InvalidArgument("eta must be > 0");
  if (local_steps < 1) throw InvalidArgument("E must be >= 1");
  double total = 0.0;
  for (const auto& k : clients) {
    if (!(k.curvature > 0.0)) throw InvalidArgument("U_k must be > 0");
    if (!(k.noise_var >= 0.0)) throw InvalidArgument("Sigma_k must be >= 0");
    total += k.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("client weights must sum to 1");
}

bool QuadraticCase1D::locally_contracting() const {
  for (const auto& k : clients) {
    if (!(std::abs(1.0 - eta * k.curvature) < 1.0)) return false;
  }
  return true;
}

SdeCoefficients sde_coefficients(const QuadraticCase1D& c) {
  c.validate();
  double A = 0.0;
  double weighted_center = 0.0;
  double B = static_cast<double>(c.local_steps);
  for (const auto& k : c.clients) {
    const double contraction = 1.0 - c.eta * k.curvature;
    double drift_weight = 0.0;
    for (int j = 0; j < c.local_steps; ++j) {
      drift_weight += std::pow(contraction, j) * k.curvature;
      for (int i = 1; i <= j; ++i) {
        B += k.weight * std::sqrt(k.noise_var) * std::pow(contraction, j - i) * k.curvature;
      }
    }
    A += k.weight * drift_weight;
    weighted_center += k.weight * drift_weight * k.center;
  }
  return {A, B, weighted_center / A};
}

AnalyticSolution::AnalyticSolution(MomentMode mode, double rate, double center, double diffusion_sq,
                                   double w_init)
    : mode_(mode), rate_(rate), center_(center), diffusion_sq_(diffusion_sq), w_init_(w_init) {
  if (!(rate_ > 0.0)) throw InvalidArgument("drift rate must be > 0 for the analytic solution");
  if (!(diffusion_sq_ >= 0.0)) throw InvalidArgument("diffusion must be >= 0");
}

double AnalyticSolution::mean(double t) const {
  return center_ + (w_init_ - center_) * std::exp(-rate_ * t);
}

double AnalyticSolution::variance(double t) const {
  return diffusion_sq_ / (2.0 * rate_) * -std::expm1(-2.0 * rate_ * t);
}

double AnalyticSolution::variance_paper_form(double t) const {
  return diffusion_sq_ / (2.0 * rate_) * -std::expm1(-rate_ * t);
}

double AnalyticSolution::stationary_variance() const { return diffusion_sq_ / (2.0 * rate_); }

AnalyticSolution analytic_solution(const QuadraticCase1D& c, MomentMode mode, double h, double server_rate) {
  c.validate();
  if (mode == MomentMode::paper_verbatim) {
    const auto coef = sde_coefficients(c);
    return AnalyticSolution(mode, coef.A, coef.C4, c.eta * coef.B * coef.B, c.w_init);
  }
  if (!(h > 0.0)) throw InvalidArgument("h must be > 0");
  // Per-round drift sum_k p_k (mean_k(w) - w) is affine in w; read its slope
  // and root off the exact local-update distribution at w = 0 and w = 1.
  auto drift_at = [&](double w) {
    double m = 0.0;
    for (const auto& k : c.clients) {
      const auto dist = local_update_distribution(
          Matrix::Constant(1, 1, k.curvature), WeightVector::Constant(1, k.center),
          Matrix::Constant(1, 1, k.noise_var), c.eta, c.local_steps, WeightVector::Constant(1, w),
          MomentMode::exact_moment);
      m += k.weight * (dist.mean(0) - w);
    }
    return m;
  };
  double round_variance = 0.0;
  for (const auto& k : c.clients) {
    const auto dist = local_update_distribution(
        Matrix::Constant(1, 1, k.curvature), WeightVector::Constant(1, k.center),
        Matrix::Constant(1, 1, k.noise_var), c.eta, c.local_steps, WeightVector::Constant(1, 0.0),
        MomentMode::exact_moment);
    round_variance += k.weight * k.weight * dist.cov(0, 0);
  }
  const double m0 = drift_at(0.0);
  const double slope = drift_at(1.0) - m0;   // = -rate per round
  const double center = -m0 / slope;
  return AnalyticSolution(mode, -server_rate * slope, center, server_rate * server_rate * h * round_variance,
                          c.w_init);
}

double analytic_mean(const QuadraticCase1D& c, double t) {
  return analytic_solution(c, MomentMode::paper_verbatim).mean(t);
}

AnalyticVariance analytic_variance(const QuadraticCase1D& c, double t) {
  const auto sol = analytic_solution(c, MomentMode::paper_verbatim);
  return {sol.variance(t), sol.variance_paper_form(t)};
}

std::pair<double, double> stationary_limit(const QuadraticCase1D& c) {
  const auto sol = analytic_solution(c, MomentMode::paper_verbatim);
  return {sol.center(), sol.stationary_variance()};
}

}  // namespace fedsde
