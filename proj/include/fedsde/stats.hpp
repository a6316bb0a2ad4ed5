#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fedsde/discrete.hpp"
#include "fedsde/rng.hpp"
#include "fedsde/schedule.hpp"

namespace fedsde {

struct MomentSummary {
  double mean;
  double variance;          // unbiased
  double skewness;          // g1 = m3 / m2^{3/2}
  double excess_kurtosis;   // g2 = m4 / m2^2 - 3
  bool degenerate;          // zero spread; skewness and kurtosis are NaN
};

/// Requires at least 4 samples.
MomentSummary moment_summary(std::span<const double> samples);

/// sup_x |F_n(x) - cdf(x)| for the empirical CDF F_n of `samples`.
double ks_distance(std::span<const double> samples, const std::function<double(double)>& cdf);

/// KS distance to the normal with the sample's mean and unbiased variance.
/// Requires >= 100 samples; zero variance throws DegenerateSampleError.
double ks_normality(std::span<const double> samples);

double normal_cdf(double x);

/// Per-client streaming moments of server-update contributions.
///
/// For each client and coordinate it keeps shifted power sums of the client
/// term (for variances and fourth moments) and, when draws carry noise and
/// gradient sums, the mixed sums needed for E[N^u R^v] with u + v = 4.
class ClientMomentAccumulator {
 public:
  ClientMomentAccumulator(std::size_t clients, Eigen::Index dimension);

  void add(const ServerUpdateDraw& draw);

  std::size_t count() const noexcept { return count_; }
  std::size_t clients() const noexcept { return clients_; }
  /// Central second and fourth moments (1/n normalisation) of client k's term.
  double variance(std::size_t k, Eigen::Index coord) const;
  double fourth_moment(std::size_t k, Eigen::Index coord) const;

  /// sum_k m4_k / (sum_k m2_k)^2 at one coordinate.
  double lyapunov_ratio(Eigen::Index coord) const;
  /// min over k, coord of x_k^2 - (1/2Q) sum_j (x_k - x_j)^2 with x_k the
  /// variance of client k's term.
  double similarity_floor() const;
  /// max over k, coord, u + v = 4 of |E[N^u R^v]|; NaN without mixed data.
  double mixed_moment_ceiling() const;

 private:
  std::size_t index(std::size_t k, Eigen::Index coord) const {
    return k * static_cast<std::size_t>(dimension_) + static_cast<std::size_t>(coord);
  }

  std::size_t clients_;
  Eigen::Index dimension_;
  std::size_t count_ = 0;
  bool mixed_ = true;
  std::vector<double> shift_;          // first observed term
  std::vector<double> power_;          // [cell * 4 + p - 1] sum (x - shift)^p
  std::vector<double> grad_shift_;     // first observed gradient sum
  std::vector<double> mixed_sums_;     // [cell * 25 + u * 5 + m] sum N^u y^m
};

/// Lyapunov ratio with delta = 2 from draws carrying client terms.
/// Requires >= 2 clients and >= 100 draws.
double lyapunov_ratio(std::span<const ServerUpdateDraw> draws, Eigen::Index coordinate);

struct CoordinateNormality {
  double skewness;
  double excess_kurtosis;
  double ks_distance;
  double lyapunov_ratio;
};

struct NormalityReport {
  std::size_t clients = 0;
  std::size_t replicates = 0;
  std::vector<CoordinateNormality> coordinates;
  /// Plug-in estimate of the second-moment similarity floor C; the
  /// similarity condition needs it positive.
  double similarity_floor_estimate = 0.0;
  bool similarity_holds = false;
  /// Plug-in estimate of the fourth mixed-moment ceiling D.
  double mixed_moment_ceiling_estimate = 0.0;
  /// Largest |correlation| between distinct coordinates of A.
  double max_offdiagonal_correlation = 0.0;
};

/// Streaming builder so large replicate counts need not be held in memory.
class NormalityAccumulator {
 public:
  NormalityAccumulator(std::size_t clients, Eigen::Index dimension);
  void add(const ServerUpdateDraw& draw);
  NormalityReport report() const;

 private:
  ClientMomentAccumulator clients_;
  std::vector<std::vector<double>> values_;   // [coord][replicate]
};

NormalityReport normality_report(std::span<const ServerUpdateDraw> draws);

/// Random time point on [0, horizon] with density eta(s) / phi(horizon).
class TimeSampler {
 public:
  TimeSampler(Schedule schedule, double horizon);

  const Schedule& schedule() const noexcept { return schedule_; }
  double horizon() const noexcept { return horizon_; }
  double normalizer() const noexcept { return normalizer_; }
  double density(double s) const;
  double cdf(double s) const;

 private:
  Schedule schedule_;
  double horizon_;
  double normalizer_;
};

/// Inverse-CDF draw from the sampler's density.
double sample_time_point(const TimeSampler& sampler, Stream& stream);

}  // namespace fedsde
