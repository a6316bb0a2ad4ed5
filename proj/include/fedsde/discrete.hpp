#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "fedsde/model.hpp"
#include "fedsde/rng.hpp"
#include "fedsde/schedule.hpp"

namespace fedsde {

/// Synchronous FedAvg with the Gaussian gradient-noise model.
///
/// Round T starts at continuous time t = T * h. Every client begins at the
/// broadcast server weights w0 and takes E local steps
///   w <- w - eta(t) * (grad F^k(w) + n),   n ~ N(0, Sigma_k),
/// then the server applies w0 <- w0 + h * eta0(t) * A with
///   A = sum_k p_k (w^k_E - w0).
/// With h * eta0 = 1 this is plain weighted averaging of client weights.
struct FedAvgConfig {
  int local_steps = 1;                                     // E
  double h = 1.0;                                          // lift constant / time step
  Schedule client_schedule = Schedule::constant(0.1);      // eta(t), shared by all clients
  Schedule server_schedule = Schedule::constant(1.0);      // eta0(t)
  int rounds = 1;
  std::uint64_t seed = 0;
  std::optional<double> clip_norm;                         // max-norm on stochastic gradients

  void validate() const;
  double server_rate(double t) const { return h * server_schedule(t); }
  friend bool operator==(const FedAvgConfig&, const FedAvgConfig&) = default;
};

/// One realization of the aggregated client displacement A at a fixed
/// server state. `value` is the in-order sum of `client_terms`.
///
/// noise_sums[k] = sum_i N_i and gradient_sums[k] = sum_i G_i over the local
/// steps, with the convention w^k_E - w0 = eta (noise_sums - gradient_sums)
/// when no clipping is active. Both are empty unless DrawDetail::full.
struct ServerUpdateDraw {
  WeightVector value;
  std::vector<WeightVector> client_terms;
  std::vector<WeightVector> noise_sums;
  std::vector<WeightVector> gradient_sums;
};

enum class DrawDetail { value_only, client_terms, full };

/// Per-step client drift ||w0 - w^k(t, i)|| for i = 1..E, indexed [k * E + i - 1].
struct DriftTrace {
  std::vector<double> drift;
};

/// Reusable buffers for rollouts; one per thread.
struct RolloutWorkspace {
  explicit RolloutWorkspace(Eigen::Index dimension);
  WeightVector w, grad, scratch, z, noise, step;
};

/// w - eta * (grad F^k(w) + noise).
WeightVector local_sgd_step(const WeightVector& w, const Problem& problem, std::size_t k, double eta,
                            const WeightVector& noise);

/// Runs every client's E local steps from w0 with client rate eta and
/// returns the aggregated displacement. Client k's noise at step i comes
/// from Stream(key.child(k).child(i)).
ServerUpdateDraw rollout_update(const WeightVector& w0, const Problem& problem, const FedAvgConfig& config,
                                double eta, const StreamKey& key, DrawDetail detail,
                                RolloutWorkspace& workspace, DriftTrace* drift = nullptr,
                                std::vector<WeightVector>* client_finals = nullptr);

struct RoundOutcome {
  WeightVector server;                        // new w0
  ServerUpdateDraw update;
  std::vector<WeightVector> client_finals;    // w^k after E local steps
  DriftTrace drift;
};

/// One aggregation round. Randomness is keyed by (seed, round_index).
RoundOutcome run_round(const WeightVector& w0, const Problem& problem, const FedAvgConfig& config,
                       int round_index);

struct TrajectoryRecord {
  int round;
  double t;
  WeightVector server;
  double loss;
  double grad_norm_sq;
  /// Drift of the local work that produced this state, [k * E + i - 1];
  /// all zero for the initial record.
  std::vector<double> drift;
};

struct Trajectory {
  std::size_t clients = 0;
  int local_steps = 0;
  double h = 1.0;
  std::vector<TrajectoryRecord> records;   // rounds + 1 entries

  /// Server state in force at continuous time t (piecewise constant).
  const TrajectoryRecord& at_time(double t) const;
};

/// Full FedAvg run; deterministic given config.seed. Throws NumericalAbort
/// carrying the round index when the server state becomes non-finite.
Trajectory run_fedavg(const Problem& problem, const FedAvgConfig& config, const WeightVector& w_init);

struct SampleOptions {
  std::optional<StreamKey> key;      // default: (seed, sample domain, t)
  std::size_t first_replicate = 0;
  DrawDetail detail = DrawDetail::full;
  int threads = 1;
};

/// R independent draws of A at fixed server state w0 and time t. Replicate r
/// uses stream key.child(r), so results depend only on (seed, t, r).
std::vector<ServerUpdateDraw> sample_A(const WeightVector& w0, const Problem& problem,
                                       const FedAvgConfig& config, double t, std::size_t replicates,
                                       const SampleOptions& options = {});

/// CSV: round,t,w0_0..,loss,grad_norm_sq,drift_client_k_step_i...
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);

}  // namespace fedsde
