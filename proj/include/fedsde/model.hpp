#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fedsde/types.hpp"

namespace fedsde {

enum class LossKind { quadratic, synthetic_smooth };

/// Per-client loss landscape.
///
///   quadratic:        F(w) = 1/2 (w - a)^T U (w - a)
///   synthetic_smooth: F(w) = 1/2 (w - a)^T U (w - a) + eps * sum_j sin(w_j)
///
/// U must be symmetric PSD. synthetic_smooth with eps = 0 is the quadratic.
class ClientLoss {
 public:
  static ClientLoss quadratic(Matrix curvature, WeightVector center);
  static ClientLoss synthetic_smooth(Matrix curvature, WeightVector center, double amplitude);

  LossKind kind() const noexcept { return kind_; }
  const Matrix& curvature() const noexcept { return curvature_; }
  const WeightVector& center() const noexcept { return center_; }
  double amplitude() const noexcept { return amplitude_; }
  Eigen::Index dimension() const noexcept { return center_.size(); }
  bool is_quadratic() const noexcept { return kind_ == LossKind::quadratic || amplitude_ == 0.0; }

  double value(const WeightVector& w) const;
  WeightVector gradient(const WeightVector& w) const;
  /// Allocation-free gradient; `scratch` must have the problem dimension.
  void gradient_into(const WeightVector& w, WeightVector& out, WeightVector& scratch) const;
  WeightVector hessian_diagonal(const WeightVector& w) const;

 private:
  ClientLoss(LossKind kind, Matrix curvature, WeightVector center, double amplitude);

  LossKind kind_;
  Matrix curvature_;
  WeightVector center_;
  double amplitude_;
};

struct Client {
  double weight;        // p_k
  ClientLoss loss;
  Matrix noise_cov;     // Sigma_k
};

/// The federated objective F(w) = sum_k p_k F^k(w) together with the
/// per-client Gaussian gradient-noise covariances.
///
/// Construction validates everything: weights in [0, 1] summing to 1 within
/// 1e-12, conformable dimensions, symmetric PSD curvatures and covariances.
/// Immutable afterwards and safe to share across threads.
class Problem {
 public:
  explicit Problem(std::vector<Client> clients);

  std::size_t client_count() const noexcept { return clients_.size(); }
  Eigen::Index dimension() const noexcept { return dimension_; }
  const Client& client(std::size_t k) const { return clients_.at(k); }
  std::span<const Client> clients() const noexcept { return clients_; }
  /// Symmetric PSD square root of Sigma_k, used to draw gradient noise.
  const Matrix& noise_sqrt(std::size_t k) const { return noise_sqrt_.at(k); }
  bool all_quadratic() const noexcept;

 private:
  std::vector<Client> clients_;
  std::vector<Matrix> noise_sqrt_;
  Eigen::Index dimension_;
};

/// Axis-aligned box [lower, upper].
struct Box {
  WeightVector lower;
  WeightVector upper;

  static Box cube(Eigen::Index dimension, double half_width);
  void validate(Eigen::Index dimension) const;
  bool contains(const WeightVector& w) const;
  Box scaled(double factor) const;
};

struct SmoothnessConstants {
  double L;    // sup of gradient and Hessian-diagonal infinity norms
  double mu;   // smoothness modulus
  Box box;
};

struct WqcResult {
  bool holds;
  double worst_margin;
  std::size_t worst_client;
  std::size_t worst_probe;
};

/// Throws NotPsdError unless `m` is symmetric with eigenvalues >= -1e-10.
void require_symmetric_psd(const Matrix& m, const char* what);

WeightVector client_gradient(const Problem& problem, std::size_t k, const WeightVector& w);

/// F(w) and grad F(w) as p_k-weighted sums.
std::pair<double, WeightVector> global_loss_and_gradient(const Problem& problem,
                                                         const WeightVector& w);
double global_loss(const Problem& problem, const WeightVector& w);

/// (1/S - 1/N_k) * (1/(N_k - 1)) * sum_i (g_i - mean)(g_i - mean)^T,
/// with N_k the number of per-sample gradients.
Matrix empirical_gradient_covariance(std::span<const WeightVector> sample_gradients,
                                     std::size_t batch_size);

/// Constants over `box`. L is an exact sup for the quadratic part plus the
/// worst-case sine contribution, so it upper-bounds every client's gradient
/// and Hessian-diagonal infinity norm inside the box.
SmoothnessConstants smoothness_constants(const Problem& problem, const Box& box);

/// Checks <grad F^k(w), w - w*> >= tau (F^k(w) - F^k(w*)) for every client
/// and probe; reports the smallest slack.
WqcResult wqc_check(const Problem& problem, const WeightVector& w_star, double tau,
                    std::span<const WeightVector> probes);

/// (sum p_k U_k)^{-1} sum p_k U_k a_k for all-quadratic problems.
WeightVector quadratic_global_minimizer(const Problem& problem);

/// Numerical minimum of F by gradient descent from every start point; used
/// where no closed-form minimizer exists (synthetic_smooth clients).
std::pair<WeightVector, double> numeric_global_minimum(const Problem& problem,
                                                       std::span<const WeightVector> starts,
                                                       double gradient_tolerance = 1e-12);

}  // namespace fedsde
