#include "fedsde/sde.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "fedsde/csv.hpp"
#include "fedsde/errors.hpp"
#include "fedsde/parallel.hpp"

namespace fedsde {
namespace {

// Streaming mean / scatter accumulator (Welford).
struct MomentAccumulator {
  explicit MomentAccumulator(Eigen::Index d) : mean(WeightVector::Zero(d)), scatter(Matrix::Zero(d, d)), delta(d) {}

  void add(const WeightVector& x) {
    ++count;
    delta = x - mean;
    mean += delta / static_cast<double>(count);
    scatter.noalias() += delta * (x - mean).transpose();
  }

  Matrix covariance() const {
    Matrix cov = scatter / static_cast<double>(count - 1);
    return 0.5 * (cov + cov.transpose());
  }

  std::size_t count = 0;
  WeightVector mean;
  Matrix scatter;
  WeightVector delta;
};

MomentEstimate finish_estimate(const MomentAccumulator& acc, double t) {
  MomentEstimate est;
  est.t = t;
  est.mean = acc.mean;
  est.cov = acc.covariance();
  PsdRoot root = matrix_sqrt_psd_detail(est.cov);
  est.cov_sqrt = std::move(root.root);
  est.clamp_magnitude = root.clamped;
  est.replicates = acc.count;
  est.standard_errors = (est.cov.diagonal() / static_cast<double>(acc.count)).cwiseSqrt();
  return est;
}

std::vector<std::size_t> checkpoint_steps(const IntegratorConfig& config, double h, std::size_t total_steps,
                                          std::vector<double>& times) {
  std::vector<std::size_t> steps;
  if (config.checkpoints.empty()) {
    for (std::size_t n = 0; n <= total_steps; ++n) steps.push_back(n);
  } else {
    for (double t : config.checkpoints) {
      steps.push_back(static_cast<std::size_t>(std::llround(t / h)));
    }
  }
  times.clear();
  for (auto n : steps) times.push_back(static_cast<double>(n) * h);
  return steps;
}

}  // namespace

PsdRoot matrix_sqrt_psd_detail(const Matrix& v) {
  if (v.rows() != v.cols()) throw InvalidArgument("matrix_sqrt_psd needs a square matrix");
  if (!v.allFinite()) throw NotPsdError("matrix has non-finite entries");
  if (v.size() == 0) return {};
  const double scale = std::max(1.0, v.cwiseAbs().maxCoeff());
  if ((v - v.transpose()).cwiseAbs().maxCoeff() > kPsdTolerance * scale) {
    throw InvalidArgument("matrix_sqrt_psd needs a symmetric matrix");
  }
  PsdRoot out;
  if (v.rows() == 1) {
    const double x = v(0, 0);
    if (x < -kPsdTolerance * scale) throw NotPsdError("matrix has negative eigenvalue");
    out.clamped = x < 0.0 ? -x : 0.0;
    out.root = Matrix::Constant(1, 1, std::sqrt(std::max(x, 0.0)));
    return out;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(v);
  Eigen::VectorXd values = eig.eigenvalues();
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values(i) < -kPsdTolerance * scale) {
      throw NotPsdError("matrix has negative eigenvalue " + std::to_string(values(i)));
    }
    if (values(i) < 0.0) {
      out.clamped += -values(i);
      values(i) = 0.0;
    }
  }
  out.root = eig.eigenvectors() * values.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
  return out;
}

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  if (m.rows() == 1) return std::abs(m(0, 0));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

MomentEstimate estimate_moments(const WeightVector& w0, const Problem& problem, const FedAvgConfig& config,
                                double t, std::size_t replicates, std::optional<StreamKey> key) {
  if (replicates < 2) throw InvalidArgument("estimate_moments needs R_inner >= 2");
  config.validate();
  const StreamKey base = key ? *key : domain_key(config.seed, StreamDomain::sample_update).child_real(t);
  const double eta = config.client_schedule(t);
  RolloutWorkspace ws(problem.dimension());
  MomentAccumulator acc(problem.dimension());
  for (std::size_t r = 0; r < replicates; ++r) {
    acc.add(rollout_update(w0, problem, config, eta, base.child(r), DrawDetail::value_only, ws).value);
  }
  return finish_estimate(acc, t);
}

void IntegratorConfig::validate(double h) const {
  if (!(h > 0.0)) throw InvalidArgument("h must be > 0");
  if (!(t_max >= h)) throw InvalidArgument("t_max must be >= h");
  if (paths < 1) throw InvalidArgument("paths must be >= 1");
  for (double t : checkpoints) {
    if (!(t >= 0.0) || t > t_max + 1e-9 * t_max) throw InvalidArgument("checkpoint outside [0, t_max]");
  }
}

std::vector<CheckpointSummary> PathEnsemble::summary() const {
  std::vector<CheckpointSummary> out;
  const std::size_t n = states.size();
  for (std::size_t c = 0; c < times.size(); ++c) {
    const auto d = states.front()[c].size();
    WeightVector mean = WeightVector::Zero(d);
    for (const auto& path : states) mean += path[c];
    mean /= static_cast<double>(n);
    WeightVector var = WeightVector::Zero(d);
    for (const auto& path : states) var += (path[c] - mean).cwiseAbs2();
    var /= static_cast<double>(n > 1 ? n - 1 : 1);
    out.push_back({times[c], mean, var, (var / static_cast<double>(n)).cwiseSqrt()});
  }
  return out;
}

PathEnsemble integrate(const Problem& problem, const IntegratorConfig& config, const FedAvgConfig& fedavg,
                       const WeightVector& w_init) {
  fedavg.validate();
  config.validate(fedavg.h);
  if (config.inner_replicates < 2) throw InvalidArgument("R_inner must be >= 2");
  if (w_init.size() != problem.dimension()) throw InvalidArgument("w_init has wrong dimension");

  const double h = fedavg.h;
  const auto total_steps = static_cast<std::size_t>(std::llround(config.t_max / h));
  PathEnsemble ensemble;
  const auto record_steps = checkpoint_steps(config, h, total_steps, ensemble.times);
  ensemble.states.resize(config.paths);

  const StreamKey inner_root = domain_key(config.seed, StreamDomain::sde_path);
  const StreamKey brownian_root = domain_key(config.seed, StreamDomain::brownian);
  const auto d = problem.dimension();
  const double sqrt_h = std::sqrt(h);

  parallel_for(config.paths, config.threads, [&](std::size_t p) {
    RolloutWorkspace ws(d);
    WeightVector w = w_init;
    WeightVector z(d);
    auto& recorded = ensemble.states[p];
    recorded.resize(record_steps.size());
    auto record = [&](std::size_t step) {
      for (std::size_t c = 0; c < record_steps.size(); ++c) {
        if (record_steps[c] == step) recorded[c] = w;
      }
    };
    record(0);
    const StreamKey path_key = inner_root.child(p);
    const StreamKey path_brownian = brownian_root.child(p);
    for (std::size_t n = 0; n < total_steps; ++n) {
      const double t = static_cast<double>(n) * h;
      const double eta = fedavg.client_schedule(t);
      const StreamKey step_key = path_key.child(n);
      MomentAccumulator acc(d);
      for (std::size_t r = 0; r < config.inner_replicates; ++r) {
        acc.add(rollout_update(w, problem, fedavg, eta, step_key.child(r), DrawDetail::value_only, ws).value);
      }
      const Matrix cov = acc.covariance();
      if (!acc.mean.allFinite() || !cov.allFinite()) {
        throw NumericalAbort("non-finite update moments at t = " + format_real(t) + " on path " + std::to_string(p),
                             t);
      }
      const Matrix root = matrix_sqrt_psd(cov);
      Stream stream(path_brownian.child(n));
      for (Eigen::Index j = 0; j < d; ++j) z(j) = sqrt_h * stream.normal();   // dB over one step
      const double server = fedavg.server_schedule(t);
      w += server * h * acc.mean + server * sqrt_h * (root * z);
      if (!w.allFinite()) {
        throw NumericalAbort("non-finite SDE state at t = " + format_real(t + h) + " on path " +
                                 std::to_string(p),
                             t + h);
      }
      record(n + 1);
    }
  });
  return ensemble;
}

PathEnsemble integrate_linear_1d(const LinearSde1D& sde, double x0, double h, const IntegratorConfig& config) {
  config.validate(h);
  const auto total_steps = static_cast<std::size_t>(std::llround(config.t_max / h));
  PathEnsemble ensemble;
  const auto record_steps = checkpoint_steps(config, h, total_steps, ensemble.times);
  ensemble.states.resize(config.paths);
  const StreamKey root = domain_key(config.seed, StreamDomain::brownian);
  const double noise_scale = sde.diffusion * std::sqrt(h);

  parallel_for(config.paths, config.threads, [&](std::size_t p) {
    Stream stream(root.child(p));
    double x = x0;
    auto& recorded = ensemble.states[p];
    recorded.assign(record_steps.size(), WeightVector::Constant(1, x0));
    for (std::size_t n = 1; n <= total_steps; ++n) {
      x += -sde.rate * (x - sde.center) * h + noise_scale * stream.normal();
      for (std::size_t c = 0; c < record_steps.size(); ++c) {
        if (record_steps[c] == n) recorded[c](0) = x;
      }
    }
  });
  return ensemble;
}

void write_paths_csv(std::ostream& out, const PathEnsemble& ensemble) {
  const auto d = ensemble.states.empty() || ensemble.states.front().empty()
                     ? 0
                     : ensemble.states.front().front().size();
  out << "path_id,t";
  for (Eigen::Index j = 0; j < d; ++j) out << ",w_" << j;
  out << '\n';
  for (std::size_t p = 0; p < ensemble.states.size(); ++p) {
    for (std::size_t c = 0; c < ensemble.times.size(); ++c) {
      out << p << ',' << format_real(ensemble.times[c]);
      for (Eigen::Index j = 0; j < d; ++j) out << ',' << format_real(ensemble.states[p][c](j));
      out << '\n';
    }
  }
}

}  // namespace fedsde
