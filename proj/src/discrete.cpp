#include "fedsde/discrete.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "fedsde/csv.hpp"
#include "fedsde/errors.hpp"
#include "fedsde/parallel.hpp"

namespace fedsde {

void FedAvgConfig::validate() const {
  if (local_steps < 1) throw InvalidArgument("E must be >= 1");
  if (!(h > 0.0) || !std::isfinite(h)) throw InvalidArgument("h must be > 0");
  if (rounds < 0) throw InvalidArgument("rounds must be >= 0");
  if (!client_schedule.strictly_positive()) throw InvalidArgument("client schedule must be positive");
  if (clip_norm && !(*clip_norm > 0.0)) throw InvalidArgument("clip_norm must be > 0");
}

RolloutWorkspace::RolloutWorkspace(Eigen::Index dimension)
    : w(dimension), grad(dimension), scratch(dimension), z(dimension), noise(dimension), step(dimension) {}

WeightVector local_sgd_step(const WeightVector& w, const Problem& problem, std::size_t k, double eta,
                            const WeightVector& noise) {
  return w - eta * (problem.client(k).loss.gradient(w) + noise);
}

ServerUpdateDraw rollout_update(const WeightVector& w0, const Problem& problem, const FedAvgConfig& config,
                                double eta, const StreamKey& key, DrawDetail detail,
                                RolloutWorkspace& ws, DriftTrace* drift,
                                std::vector<WeightVector>* client_finals) {
  const auto d = problem.dimension();
  const std::size_t q = problem.client_count();
  const int steps = config.local_steps;

  ServerUpdateDraw draw;
  draw.value = WeightVector::Zero(d);
  if (detail != DrawDetail::value_only) draw.client_terms.reserve(q);
  if (detail == DrawDetail::full) {
    draw.noise_sums.assign(q, WeightVector::Zero(d));
    draw.gradient_sums.assign(q, WeightVector::Zero(d));
  }
  if (drift) drift->drift.assign(q * static_cast<std::size_t>(steps), 0.0);
  if (client_finals) client_finals->clear();

  for (std::size_t k = 0; k < q; ++k) {
    const Client& client = problem.client(k);
    const Matrix& noise_sqrt = problem.noise_sqrt(k);
    const StreamKey client_key = key.child(k);
    ws.w = w0;
    for (int i = 0; i < steps; ++i) {
      client.loss.gradient_into(ws.w, ws.grad, ws.scratch);
      Stream stream(client_key.child(static_cast<std::uint64_t>(i)));
      for (Eigen::Index j = 0; j < d; ++j) ws.z(j) = stream.normal();
      ws.noise.noalias() = noise_sqrt * ws.z;
      if (detail == DrawDetail::full) {
        draw.noise_sums[k] -= ws.noise;
        draw.gradient_sums[k] += ws.grad;
      }
      ws.step = ws.grad + ws.noise;
      if (config.clip_norm) {
        const double norm = ws.step.norm();
        if (norm > *config.clip_norm) ws.step *= *config.clip_norm / norm;
      }
      ws.w -= eta * ws.step;
      if (drift) {
        drift->drift[k * static_cast<std::size_t>(steps) + static_cast<std::size_t>(i)] = (ws.w - w0).norm();
      }
    }
    if (client_finals) client_finals->push_back(ws.w);
    ws.scratch = client.weight * (ws.w - w0);
    draw.value += ws.scratch;
    if (detail != DrawDetail::value_only) draw.client_terms.push_back(ws.scratch);
  }
  return draw;
}

RoundOutcome run_round(const WeightVector& w0, const Problem& problem, const FedAvgConfig& config,
                       int round_index) {
  const double t = round_index * config.h;
  const StreamKey key = domain_key(config.seed, StreamDomain::fedavg_round).child(
      static_cast<std::uint64_t>(round_index));
  RolloutWorkspace ws(problem.dimension());
  RoundOutcome out;
  out.update = rollout_update(w0, problem, config, config.client_schedule(t), key, DrawDetail::client_terms,
                              ws, &out.drift, &out.client_finals);
  out.server = w0 + config.server_rate(t) * out.update.value;
  return out;
}

const TrajectoryRecord& Trajectory::at_time(double t) const {
  if (records.empty()) throw InvalidArgument("empty trajectory");
  const double index = std::floor(t / h + 1e-9);
  const auto i = static_cast<std::size_t>(std::clamp(index, 0.0, static_cast<double>(records.size() - 1)));
  return records[i];
}

Trajectory run_fedavg(const Problem& problem, const FedAvgConfig& config, const WeightVector& w_init) {
  config.validate();
  if (w_init.size() != problem.dimension()) throw InvalidArgument("w_init has wrong dimension");
  if (!w_init.allFinite()) throw InvalidArgument("w_init has non-finite entries");

  Trajectory traj;
  traj.clients = problem.client_count();
  traj.local_steps = config.local_steps;
  traj.h = config.h;
  traj.records.reserve(static_cast<std::size_t>(config.rounds) + 1);

  auto record = [&](int round, const WeightVector& w, std::vector<double> drift) {
    auto [loss, grad] = global_loss_and_gradient(problem, w);
    traj.records.push_back({round, round * config.h, w, loss, grad.squaredNorm(), std::move(drift)});
  };

  WeightVector w = w_init;
  record(0, w, std::vector<double>(traj.clients * static_cast<std::size_t>(config.local_steps), 0.0));
  for (int r = 0; r < config.rounds; ++r) {
    RoundOutcome outcome = run_round(w, problem, config, r);
    if (!outcome.server.allFinite()) {
      throw NumericalAbort("non-finite server weights at round " + std::to_string(r + 1), r + 1);
    }
    w = std::move(outcome.server);
    record(r + 1, w, std::move(outcome.drift.drift));
  }
  return traj;
}

std::vector<ServerUpdateDraw> sample_A(const WeightVector& w0, const Problem& problem,
                                       const FedAvgConfig& config, double t, std::size_t replicates,
                                       const SampleOptions& options) {
  if (replicates < 1) throw InvalidArgument("sample_A needs R >= 1");
  config.validate();
  const StreamKey key =
      options.key ? *options.key : domain_key(config.seed, StreamDomain::sample_update).child_real(t);
  const double eta = config.client_schedule(t);
  std::vector<ServerUpdateDraw> draws(replicates);
  const int threads = std::max(1, options.threads);
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), replicates);
  parallel_for(workers, threads, [&](std::size_t w) {
    RolloutWorkspace ws(problem.dimension());
    const std::size_t begin = replicates * w / workers;
    const std::size_t end = replicates * (w + 1) / workers;
    for (std::size_t r = begin; r < end; ++r) {
      draws[r] = rollout_update(w0, problem, config, eta, key.child(options.first_replicate + r),
                                options.detail, ws);
    }
  });
  return draws;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
  const auto d = trajectory.records.empty() ? 0 : trajectory.records.front().server.size();
  out << "round,t";
  for (Eigen::Index j = 0; j < d; ++j) out << ",w0_" << j;
  out << ",loss,grad_norm_sq";
  for (std::size_t k = 0; k < trajectory.clients; ++k) {
    for (int i = 1; i <= trajectory.local_steps; ++i) out << ",drift_client_" << k << "_step_" << i;
  }
  out << '\n';
  for (const auto& rec : trajectory.records) {
    out << rec.round << ',' << format_real(rec.t);
    for (Eigen::Index j = 0; j < d; ++j) out << ',' << format_real(rec.server(j));
    out << ',' << format_real(rec.loss) << ',' << format_real(rec.grad_norm_sq);
    for (double v : rec.drift) out << ',' << format_real(v);
    out << '\n';
  }
}

}  // namespace fedsde
