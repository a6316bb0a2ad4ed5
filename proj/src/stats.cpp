#include "fedsde/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fedsde/errors.hpp"

namespace fedsde {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

MomentSummary moment_summary(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 4) throw InvalidArgument("moment_summary needs at least 4 samples");
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= static_cast<double>(n);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : samples) {
    const double d = x - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  const double variance = m2 / static_cast<double>(n - 1);
  m2 /= static_cast<double>(n);
  m3 /= static_cast<double>(n);
  m4 /= static_cast<double>(n);
  if (!(m2 > 0.0)) return {mean, variance, kNaN, kNaN, true};
  return {mean, variance, m3 / std::pow(m2, 1.5), m4 / (m2 * m2) - 3.0, false};
}

double ks_distance(std::span<const double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw InvalidArgument("ks_distance needs samples");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double sup = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = cdf(sorted[i]);
    sup = std::max({sup, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return std::clamp(sup, 0.0, 1.0);
}

double ks_normality(std::span<const double> samples) {
  if (samples.size() < 100) throw InvalidArgument("ks_normality needs at least 100 samples");
  const auto summary = moment_summary(samples);
  if (summary.degenerate || !(summary.variance > 0.0)) {
    throw DegenerateSampleError("ks_normality: zero sample variance");
  }
  const double mean = summary.mean;
  const double sd = std::sqrt(summary.variance);
  return ks_distance(samples, [&](double x) { return normal_cdf((x - mean) / sd); });
}

// ---------------------------------------------------------------------------
// ClientMomentAccumulator

ClientMomentAccumulator::ClientMomentAccumulator(std::size_t clients, Eigen::Index dimension)
    : clients_(clients),
      dimension_(dimension),
      shift_(clients * static_cast<std::size_t>(dimension), 0.0),
      power_(clients * static_cast<std::size_t>(dimension) * 4, 0.0),
      grad_shift_(clients * static_cast<std::size_t>(dimension), 0.0),
      mixed_sums_(clients * static_cast<std::size_t>(dimension) * 25, 0.0) {}

void ClientMomentAccumulator::add(const ServerUpdateDraw& draw) {
  if (draw.client_terms.size() != clients_) {
    throw InvalidArgument("draw does not carry one term per client");
  }
  const bool has_mixed = draw.noise_sums.size() == clients_ && draw.gradient_sums.size() == clients_;
  if (!has_mixed) mixed_ = false;
  for (std::size_t k = 0; k < clients_; ++k) {
    for (Eigen::Index j = 0; j < dimension_; ++j) {
      const std::size_t cell = index(k, j);
      const double x = draw.client_terms[k](j);
      if (count_ == 0) shift_[cell] = x;
      const double y = x - shift_[cell];
      double p = y;
      for (int e = 0; e < 4; ++e, p *= y) power_[cell * 4 + static_cast<std::size_t>(e)] += p;

      if (mixed_) {
        const double noise = draw.noise_sums[k](j);
        const double g = draw.gradient_sums[k](j);
        if (count_ == 0) grad_shift_[cell] = g;
        const double gy = g - grad_shift_[cell];
        double nu = 1.0;
        for (int u = 0; u <= 4; ++u, nu *= noise) {
          double ym = 1.0;
          for (int m = 0; m + u <= 4; ++m, ym *= gy) {
            mixed_sums_[cell * 25 + static_cast<std::size_t>(u * 5 + m)] += nu * ym;
          }
        }
      }
    }
  }
  ++count_;
}

double ClientMomentAccumulator::variance(std::size_t k, Eigen::Index coord) const {
  const std::size_t cell = index(k, coord);
  const double n = static_cast<double>(count_);
  const double s1 = power_[cell * 4] / n;
  const double s2 = power_[cell * 4 + 1] / n;
  return std::max(0.0, s2 - s1 * s1);
}

double ClientMomentAccumulator::fourth_moment(std::size_t k, Eigen::Index coord) const {
  const std::size_t cell = index(k, coord);
  const double n = static_cast<double>(count_);
  const double s1 = power_[cell * 4] / n;
  const double s2 = power_[cell * 4 + 1] / n;
  const double s3 = power_[cell * 4 + 2] / n;
  const double s4 = power_[cell * 4 + 3] / n;
  const double m1sq = s1 * s1;
  return std::max(0.0, s4 - 4.0 * s1 * s3 + 6.0 * m1sq * s2 - 3.0 * m1sq * m1sq);
}

double ClientMomentAccumulator::lyapunov_ratio(Eigen::Index coord) const {
  double fourth = 0.0;
  double second = 0.0;
  for (std::size_t k = 0; k < clients_; ++k) {
    fourth += fourth_moment(k, coord);
    second += variance(k, coord);
  }
  if (!(second > 0.0)) throw DegenerateSampleError("lyapunov_ratio: zero total variance");
  return fourth / (second * second);
}

double ClientMomentAccumulator::similarity_floor() const {
  double floor = std::numeric_limits<double>::infinity();
  const double q = static_cast<double>(clients_);
  for (Eigen::Index j = 0; j < dimension_; ++j) {
    std::vector<double> x(clients_);
    for (std::size_t k = 0; k < clients_; ++k) x[k] = variance(k, j);
    for (std::size_t k = 0; k < clients_; ++k) {
      double spread = 0.0;
      for (std::size_t l = 0; l < clients_; ++l) spread += (x[k] - x[l]) * (x[k] - x[l]);
      floor = std::min(floor, x[k] * x[k] - spread / (2.0 * q));
    }
  }
  return floor;
}

double ClientMomentAccumulator::mixed_moment_ceiling() const {
  if (!mixed_ || count_ == 0) return kNaN;
  const double n = static_cast<double>(count_);
  double ceiling = 0.0;
  for (std::size_t k = 0; k < clients_; ++k) {
    for (Eigen::Index j = 0; j < dimension_; ++j) {
      const std::size_t cell = index(k, j);
      auto sum = [&](int u, int m) { return mixed_sums_[cell * 25 + static_cast<std::size_t>(u * 5 + m)] / n; };
      const double gbar = sum(0, 1);
      // R = gbar - y, so E[N^u R^v] = sum_m C(v,m) gbar^{v-m} (-1)^m E[N^u y^m].
      for (int u = 0; u <= 4; ++u) {
        const int v = 4 - u;
        double moment = 0.0;
        for (int m = 0; m <= v; ++m) {
          moment += binomial(v, m) * std::pow(gbar, v - m) * (m % 2 ? -1.0 : 1.0) * sum(u, m);
        }
        ceiling = std::max(ceiling, std::abs(moment));
      }
    }
  }
  return ceiling;
}

double lyapunov_ratio(std::span<const ServerUpdateDraw> draws, Eigen::Index coordinate) {
  if (draws.size() < 100) throw InvalidArgument("lyapunov_ratio needs at least 100 replicates");
  const std::size_t clients = draws.front().client_terms.size();
  if (clients < 2) throw InvalidArgument("lyapunov_ratio needs at least 2 clients");
  const auto d = draws.front().value.size();
  if (coordinate < 0 || coordinate >= d) throw InvalidArgument("coordinate out of range");
  ClientMomentAccumulator acc(clients, d);
  for (const auto& draw : draws) acc.add(draw);
  return acc.lyapunov_ratio(coordinate);
}

// ---------------------------------------------------------------------------
// NormalityAccumulator

NormalityAccumulator::NormalityAccumulator(std::size_t clients, Eigen::Index dimension)
    : clients_(clients, dimension), values_(static_cast<std::size_t>(dimension)) {}

void NormalityAccumulator::add(const ServerUpdateDraw& draw) {
  clients_.add(draw);
  for (std::size_t j = 0; j < values_.size(); ++j) values_[j].push_back(draw.value(static_cast<Eigen::Index>(j)));
}

NormalityReport NormalityAccumulator::report() const {
  NormalityReport rep;
  rep.clients = clients_.clients();
  rep.replicates = clients_.count();
  const std::size_t d = values_.size();
  for (std::size_t j = 0; j < d; ++j) {
    const auto summary = moment_summary(values_[j]);
    CoordinateNormality c{summary.skewness, summary.excess_kurtosis, kNaN, kNaN};
    if (!summary.degenerate) c.ks_distance = ks_normality(values_[j]);
    try {
      c.lyapunov_ratio = clients_.lyapunov_ratio(static_cast<Eigen::Index>(j));
    } catch (const DegenerateSampleError&) {
    }
    rep.coordinates.push_back(c);
  }
  rep.similarity_floor_estimate = clients_.similarity_floor();
  rep.similarity_holds = rep.similarity_floor_estimate > 0.0;
  rep.mixed_moment_ceiling_estimate = clients_.mixed_moment_ceiling();

  const double n = static_cast<double>(rep.replicates);
  std::vector<double> means(d, 0.0), sds(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (double x : values_[j]) means[j] += x;
    means[j] /= n;
    for (double x : values_[j]) sds[j] += (x - means[j]) * (x - means[j]);
    sds[j] = std::sqrt(sds[j] / n);
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      if (!(sds[i] > 0.0 && sds[j] > 0.0)) continue;
      double cov = 0.0;
      for (std::size_t r = 0; r < values_[i].size(); ++r) {
        cov += (values_[i][r] - means[i]) * (values_[j][r] - means[j]);
      }
      rep.max_offdiagonal_correlation = std::max(rep.max_offdiagonal_correlation, std::abs(cov / n / (sds[i] * sds[j])));
    }
  }
  return rep;
}

NormalityReport normality_report(std::span<const ServerUpdateDraw> draws) {
  if (draws.size() < 100) throw InvalidArgument("normality report needs at least 100 replicates");
  NormalityAccumulator acc(draws.front().client_terms.size(), draws.front().value.size());
  for (const auto& d : draws) acc.add(d);
  return acc.report();
}

// ---------------------------------------------------------------------------
// TimeSampler

TimeSampler::TimeSampler(Schedule schedule, double horizon)
    : schedule_(schedule), horizon_(horizon), normalizer_(0.0) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidArgument("sampler horizon must be > 0");
  if (!schedule.strictly_positive()) throw InvalidArgument("sampler schedule must be strictly positive");
  normalizer_ = schedule.integral(horizon);
}

double TimeSampler::density(double s) const {
  if (s < 0.0 || s > horizon_) return 0.0;
  return schedule_(s) / normalizer_;
}

double TimeSampler::cdf(double s) const {
  if (s <= 0.0) return 0.0;
  if (s >= horizon_) return 1.0;
  return schedule_.integral(s) / normalizer_;
}

double sample_time_point(const TimeSampler& sampler, Stream& stream) {
  const double u = stream.uniform();
  return std::clamp(sampler.schedule().inverse_integral(u * sampler.normalizer()), 0.0, sampler.horizon());
}

}  // namespace fedsde
