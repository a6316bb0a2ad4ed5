#include "fedsde/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <numbers>
#include <string>

#include "fedsde/errors.hpp"

namespace fedsde {
namespace {

constexpr double kWeightSumTolerance = 1e-12;

bool all_finite(const Matrix& m) { return m.allFinite(); }

// Range of sin over [lo, hi].
std::pair<double, double> sin_range(double lo, double hi) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (hi - lo >= two_pi) return {-1.0, 1.0};
  double low = std::min(std::sin(lo), std::sin(hi));
  double high = std::max(std::sin(lo), std::sin(hi));
  // Peaks at pi/2 + 2 pi n, troughs at -pi/2 + 2 pi n.
  const double first_peak = std::ceil((lo - std::numbers::pi / 2) / two_pi);
  if (std::numbers::pi / 2 + two_pi * first_peak <= hi) high = 1.0;
  const double first_trough = std::ceil((lo + std::numbers::pi / 2) / two_pi);
  if (-std::numbers::pi / 2 + two_pi * first_trough <= hi) low = -1.0;
  return {low, high};
}

double sup_abs_cos(double lo, double hi) {
  const auto [low, high] = sin_range(lo + std::numbers::pi / 2, hi + std::numbers::pi / 2);
  return std::max(std::abs(low), std::abs(high));
}

double spectral_norm_symmetric(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix symmetric_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

Matrix global_hessian(const Problem& problem, const WeightVector& w) {
  const auto d = problem.dimension();
  Matrix h = Matrix::Zero(d, d);
  for (const auto& c : problem.clients()) {
    h += c.weight * c.loss.curvature();
    if (c.loss.kind() == LossKind::synthetic_smooth) {
      h.diagonal() -= c.weight * c.loss.amplitude() * w.array().sin().matrix();
    }
  }
  return h;
}

}  // namespace

void require_symmetric_psd(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) throw NotPsdError(std::string(what) + " must be square");
  if (!all_finite(m)) throw NotPsdError(std::string(what) + " has non-finite entries");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > kPsdTolerance * scale) {
    throw NotPsdError(std::string(what) + " is not symmetric");
  }
  if (m.size() == 0) return;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  const double smallest = eig.eigenvalues().minCoeff();
  if (smallest < -kPsdTolerance) {
    throw NotPsdError(std::string(what) + " has negative eigenvalue " + std::to_string(smallest));
  }
}

// ---------------------------------------------------------------------------
// ClientLoss

ClientLoss::ClientLoss(LossKind kind, Matrix curvature, WeightVector center, double amplitude)
    : kind_(kind), curvature_(std::move(curvature)), center_(std::move(center)), amplitude_(amplitude) {
  if (center_.size() < 1) throw InvalidArgument("loss center must have dimension >= 1");
  if (curvature_.rows() != center_.size() || curvature_.cols() != center_.size()) {
    throw InvalidArgument("curvature matrix does not match center dimension");
  }
  if (!center_.allFinite()) throw InvalidArgument("loss center has non-finite entries");
  require_symmetric_psd(curvature_, "curvature U_k");
  if (!(amplitude_ >= 0.0) || !std::isfinite(amplitude_)) {
    throw InvalidArgument("synthetic_smooth amplitude must be finite and >= 0");
  }
}

ClientLoss ClientLoss::quadratic(Matrix curvature, WeightVector center) {
  return ClientLoss(LossKind::quadratic, std::move(curvature), std::move(center), 0.0);
}

ClientLoss ClientLoss::synthetic_smooth(Matrix curvature, WeightVector center, double amplitude) {
  return ClientLoss(LossKind::synthetic_smooth, std::move(curvature), std::move(center), amplitude);
}

double ClientLoss::value(const WeightVector& w) const {
  const WeightVector diff = w - center_;
  double v = 0.5 * diff.dot(curvature_ * diff);
  if (kind_ == LossKind::synthetic_smooth) v += amplitude_ * w.array().sin().sum();
  return v;
}

WeightVector ClientLoss::gradient(const WeightVector& w) const {
  WeightVector out(w.size());
  WeightVector scratch(w.size());
  gradient_into(w, out, scratch);
  return out;
}

void ClientLoss::gradient_into(const WeightVector& w, WeightVector& out, WeightVector& scratch) const {
  scratch = w - center_;
  out.noalias() = curvature_ * scratch;
  if (kind_ == LossKind::synthetic_smooth && amplitude_ != 0.0) {
    out.array() += amplitude_ * w.array().cos();
  }
}

WeightVector ClientLoss::hessian_diagonal(const WeightVector& w) const {
  WeightVector diag = curvature_.diagonal();
  if (kind_ == LossKind::synthetic_smooth) diag.array() -= amplitude_ * w.array().sin();
  return diag;
}

// ---------------------------------------------------------------------------
// Problem

Problem::Problem(std::vector<Client> clients) : clients_(std::move(clients)), dimension_(0) {
  if (clients_.empty()) throw InvalidArgument("problem needs at least one client");
  dimension_ = clients_.front().loss.dimension();
  double total = 0.0;
  noise_sqrt_.reserve(clients_.size());
  for (std::size_t k = 0; k < clients_.size(); ++k) {
    const auto& c = clients_[k];
    if (!(c.weight >= 0.0 && c.weight <= 1.0)) {
      throw InvalidArgument("client weight p_" + std::to_string(k) + " outside [0, 1]");
    }
    if (c.loss.dimension() != dimension_) {
      throw InvalidArgument("client " + std::to_string(k) + " has mismatched dimension");
    }
    if (c.noise_cov.rows() != dimension_ || c.noise_cov.cols() != dimension_) {
      throw InvalidArgument("noise covariance of client " + std::to_string(k) + " is not d x d");
    }
    require_symmetric_psd(c.noise_cov, "noise covariance Sigma_k");
    noise_sqrt_.push_back(symmetric_sqrt(0.5 * (c.noise_cov + c.noise_cov.transpose())));
    total += c.weight;
  }
  if (std::abs(total - 1.0) > kWeightSumTolerance) {
    throw InvalidArgument("client weights sum to " + std::to_string(total) + ", expected 1");
  }
}

bool Problem::all_quadratic() const noexcept {
  return std::all_of(clients_.begin(), clients_.end(),
                     [](const Client& c) { return c.loss.is_quadratic(); });
}

// ---------------------------------------------------------------------------
// Box

Box Box::cube(Eigen::Index dimension, double half_width) {
  return Box{WeightVector::Constant(dimension, -half_width), WeightVector::Constant(dimension, half_width)};
}

void Box::validate(Eigen::Index dimension) const {
  if (lower.size() != dimension || upper.size() != dimension) {
    throw InvalidArgument("box dimension does not match problem");
  }
  if (!lower.allFinite() || !upper.allFinite()) throw InvalidArgument("box must be bounded");
  if ((upper.array() < lower.array()).any()) throw InvalidArgument("box has upper < lower");
}

bool Box::contains(const WeightVector& w) const {
  return (w.array() >= lower.array()).all() && (w.array() <= upper.array()).all();
}

Box Box::scaled(double factor) const {
  const WeightVector center = 0.5 * (lower + upper);
  const WeightVector half = 0.5 * (upper - lower) * factor;
  return Box{center - half, center + half};
}

// ---------------------------------------------------------------------------
// Operations

WeightVector client_gradient(const Problem& problem, std::size_t k, const WeightVector& w) {
  WeightVector g = problem.client(k).loss.gradient(w);
  if (!g.allFinite()) throw NumericalAbort("non-finite client gradient", static_cast<double>(k));
  return g;
}

std::pair<double, WeightVector> global_loss_and_gradient(const Problem& problem, const WeightVector& w) {
  double loss = 0.0;
  WeightVector grad = WeightVector::Zero(problem.dimension());
  for (const auto& c : problem.clients()) {
    loss += c.weight * c.loss.value(w);
    grad += c.weight * c.loss.gradient(w);
  }
  return {loss, grad};
}

double global_loss(const Problem& problem, const WeightVector& w) {
  double loss = 0.0;
  for (const auto& c : problem.clients()) loss += c.weight * c.loss.value(w);
  return loss;
}

Matrix empirical_gradient_covariance(std::span<const WeightVector> sample_gradients, std::size_t batch_size) {
  const std::size_t n = sample_gradients.size();
  if (n < 2) throw DegenerateSampleError("gradient covariance needs at least 2 samples");
  if (batch_size < 1 || batch_size > n) throw InvalidArgument("batch size must be in [1, N_k]");
  const auto d = sample_gradients.front().size();
  WeightVector mean = WeightVector::Zero(d);
  for (const auto& g : sample_gradients) mean += g;
  mean /= static_cast<double>(n);
  Matrix scatter = Matrix::Zero(d, d);
  for (const auto& g : sample_gradients) {
    const WeightVector dev = g - mean;
    scatter.noalias() += dev * dev.transpose();
  }
  const double prefactor = (1.0 / static_cast<double>(batch_size) - 1.0 / static_cast<double>(n)) /
                           static_cast<double>(n - 1);
  return prefactor * scatter;
}

SmoothnessConstants smoothness_constants(const Problem& problem, const Box& box) {
  box.validate(problem.dimension());
  const auto d = problem.dimension();
  const WeightVector center = 0.5 * (box.lower + box.upper);
  const WeightVector half = 0.5 * (box.upper - box.lower);

  double L = 0.0;
  double mu = 0.0;
  for (const auto& c : problem.clients()) {
    const Matrix& U = c.loss.curvature();
    const double eps = c.loss.kind() == LossKind::synthetic_smooth ? c.loss.amplitude() : 0.0;
    // sup over the box of |(U (w - a))_j| is attained at a vertex: the
    // centre value plus the absolute row sum weighted by half-widths.
    const WeightVector at_center = U * (center - c.loss.center());
    const WeightVector spread = U.cwiseAbs() * half;
    for (Eigen::Index j = 0; j < d; ++j) {
      double grad_sup = std::abs(at_center(j)) + spread(j);
      double hess_sup = U(j, j);
      if (eps > 0.0) {
        grad_sup += eps * sup_abs_cos(box.lower(j), box.upper(j));
        const auto [s_lo, s_hi] = sin_range(box.lower(j), box.upper(j));
        hess_sup = std::max(std::abs(U(j, j) - eps * s_lo), std::abs(U(j, j) - eps * s_hi));
      }
      L = std::max({L, grad_sup, std::abs(hess_sup)});
    }
    mu = std::max(mu, spectral_norm_symmetric(U) + eps);
  }
  return SmoothnessConstants{L, mu, box};
}

WqcResult wqc_check(const Problem& problem, const WeightVector& w_star, double tau,
                    std::span<const WeightVector> probes) {
  if (!(tau > 0.0)) throw InvalidArgument("tau must be positive");
  if (probes.empty()) throw InvalidArgument("wqc_check needs at least one probe");
  WqcResult result{true, std::numeric_limits<double>::infinity(), 0, 0};
  for (std::size_t k = 0; k < problem.client_count(); ++k) {
    const auto& loss = problem.client(k).loss;
    const double f_star = loss.value(w_star);
    for (std::size_t i = 0; i < probes.size(); ++i) {
      const WeightVector& w = probes[i];
      const double lhs = loss.gradient(w).dot(w - w_star);
      const double rhs = tau * (loss.value(w) - f_star);
      const double margin = lhs - rhs;
      if (margin < result.worst_margin) {
        result.worst_margin = margin;
        result.worst_client = k;
        result.worst_probe = i;
      }
    }
  }
  // Rounding can leave an exact-equality probe a few ulps negative.
  const double slack = 1e-12 * std::max(1.0, w_star.squaredNorm());
  result.holds = result.worst_margin >= -slack;
  return result;
}

WeightVector quadratic_global_minimizer(const Problem& problem) {
  if (!problem.all_quadratic()) {
    throw InvalidArgument("closed-form minimizer requires all-quadratic clients");
  }
  const auto d = problem.dimension();
  Matrix H = Matrix::Zero(d, d);
  WeightVector rhs = WeightVector::Zero(d);
  for (const auto& c : problem.clients()) {
    H += c.weight * c.loss.curvature();
    rhs += c.weight * (c.loss.curvature() * c.loss.center());
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(H, Eigen::EigenvaluesOnly);
  const double largest = eig.eigenvalues().cwiseAbs().maxCoeff();
  const double smallest = eig.eigenvalues().minCoeff();
  if (!(largest > 0.0) || smallest <= 1e-12 * largest) {
    throw SingularMatrixError("aggregate Hessian sum p_k U_k is singular");
  }
  return H.ldlt().solve(rhs);
}

std::pair<WeightVector, double> numeric_global_minimum(const Problem& problem,
                                                       std::span<const WeightVector> starts,
                                                       double gradient_tolerance) {
  if (starts.empty()) throw InvalidArgument("numeric_global_minimum needs a start point");
  double mu = 0.0;
  for (const auto& c : problem.clients()) {
    mu += c.weight * (spectral_norm_symmetric(c.loss.curvature()) + c.loss.amplitude());
  }
  const double fallback_step = mu > 0.0 ? 1.0 / mu : 1.0;

  WeightVector best;
  double best_value = std::numeric_limits<double>::infinity();
  for (const auto& start : starts) {
    WeightVector w = start;
    auto [value, grad] = global_loss_and_gradient(problem, w);
    for (int it = 0; it < 10000 && grad.lpNorm<Eigen::Infinity>() > gradient_tolerance; ++it) {
      // Newton direction where the Hessian is positive definite, gradient otherwise.
      WeightVector step = -fallback_step * grad;
      Eigen::LLT<Matrix> llt(global_hessian(problem, w));
      if (llt.info() == Eigen::Success) step = -llt.solve(grad);
      double alpha = 1.0;
      const double slope = grad.dot(step);
      WeightVector trial = w + step;
      double trial_value = global_loss(problem, trial);
      while (trial_value > value + 1e-4 * alpha * slope && alpha > 1e-12) {
        alpha *= 0.5;
        trial = w + alpha * step;
        trial_value = global_loss(problem, trial);
      }
      if (trial_value > value) break;
      w = trial;
      std::tie(value, grad) = global_loss_and_gradient(problem, w);
    }
    if (value < best_value) {
      best_value = value;
      best = w;
    }
  }
  return {best, best_value};
}

}  // namespace fedsde
