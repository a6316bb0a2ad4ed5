#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "fedsde/discrete.hpp"

namespace fedsde {

/// Monte Carlo drift and diffusion of the server SDE at one state.
/// mean is M-hat (before eta0 scaling), cov is the unbiased sample
/// covariance V-hat and cov_sqrt * cov_sqrt^T reproduces it.
struct MomentEstimate {
  WeightVector mean;
  Matrix cov;
  Matrix cov_sqrt;
  std::size_t replicates = 0;
  WeightVector standard_errors;
  double clamp_magnitude = 0.0;   // sum of |negative eigenvalues| zeroed in the root
  double t = 0.0;
};

struct PsdRoot {
  Matrix root;
  double clamped = 0.0;
};

/// Symmetric PSD square root by eigendecomposition. Eigenvalues in
/// [-1e-10, 0) (scaled by max(1, max|V|)) are clamped to zero; anything
/// more negative throws NotPsdError.
PsdRoot matrix_sqrt_psd_detail(const Matrix& v);
inline Matrix matrix_sqrt_psd(const Matrix& v) { return matrix_sqrt_psd_detail(v).root; }

/// Spectral norm of a symmetric matrix.
double spectral_norm(const Matrix& m);

/// Mean and unbiased covariance of `replicates` draws of A at w0, time t.
/// Requires replicates >= 2.
MomentEstimate estimate_moments(const WeightVector& w0, const Problem& problem, const FedAvgConfig& config,
                                double t, std::size_t replicates, std::optional<StreamKey> key = std::nullopt);

struct IntegratorConfig {
  double t_max = 1.0;
  std::size_t inner_replicates = 16;   // R_inner
  std::size_t paths = 1;               // R_paths
  std::uint64_t seed = 0;
  std::vector<double> checkpoints;     // empty: every step
  int threads = 1;

  void validate(double h) const;
};

struct CheckpointSummary {
  double t;
  WeightVector mean;
  WeightVector variance;          // unbiased, per coordinate
  WeightVector standard_error;    // sqrt(variance / paths)
};

struct PathEnsemble {
  std::vector<double> times;                          // recorded checkpoint times
  std::vector<std::vector<WeightVector>> states;      // [path][checkpoint]

  std::vector<CheckpointSummary> summary() const;
};

/// Euler-Maruyama for dw = eta0(t) M(w) dt + eta0(t) sqrt(h) V^{1/2}(w) dB
/// with step fedavg.h, re-estimating M and V at every step from fresh inner
/// rollouts. Inner streams are keyed (seed, path, step, replicate) and the
/// Brownian increment (seed, path, step), so every path is reproducible on
/// its own.
PathEnsemble integrate(const Problem& problem, const IntegratorConfig& config, const FedAvgConfig& fedavg,
                       const WeightVector& w_init);

/// dX = -rate (X - center) dt + diffusion dB in one dimension.
struct LinearSde1D {
  double rate;
  double center;
  double diffusion;
};

/// Euler-Maruyama ensemble for a scalar linear SDE with step h.
PathEnsemble integrate_linear_1d(const LinearSde1D& sde, double x0, double h, const IntegratorConfig& config);

/// CSV: path_id,t,w_0..
void write_paths_csv(std::ostream& out, const PathEnsemble& ensemble);

}  // namespace fedsde
