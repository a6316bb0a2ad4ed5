#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedsde/discrete.hpp"
#include "fedsde/model.hpp"
#include "fedsde/quadratic.hpp"
#include "fedsde/schedule.hpp"
#include "fedsde/sde.hpp"

namespace fedsde::cli {

enum class ExperimentKind { simulate_discrete, simulate_sde, analytic_quadratic, check_normality, check_bounds };

std::string to_string(ExperimentKind kind);
std::optional<ExperimentKind> experiment_kind_from_string(const std::string& name);

enum class BoundKind { theorem1, theorem2, corollary2 };

std::string to_string(BoundKind kind);
std::optional<BoundKind> bound_kind_from_string(const std::string& name);

/// Matrices are stored row-major as nested vectors so the config stays plain
/// comparable data.
struct ClientSpec {
  double weight = 0.0;
  LossKind loss = LossKind::quadratic;
  std::vector<std::vector<double>> curvature;
  std::vector<double> center;
  double amplitude = 0.0;
  std::vector<std::vector<double>> noise_cov;

  friend bool operator==(const ClientSpec&, const ClientSpec&) = default;
};

struct FedAvgSpec {
  int local_steps = 1;
  double h = 1.0;
  Schedule client_schedule = Schedule::constant(0.1);
  Schedule server_schedule = Schedule::constant(1.0);
  int rounds = 1;
  std::optional<double> clip_norm;

  friend bool operator==(const FedAvgSpec&, const FedAvgSpec&) = default;
};

struct IntegratorSpec {
  double t_max = 1.0;
  std::size_t inner_replicates = 16;
  std::size_t paths = 1;

  friend bool operator==(const IntegratorSpec&, const IntegratorSpec&) = default;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::simulate_discrete;
  std::uint64_t seed = 0;
  std::vector<ClientSpec> clients;
  std::vector<double> w_init;
  FedAvgSpec fedavg;
  std::optional<IntegratorSpec> integrator;   // simulate-sde
  std::vector<double> checkpoints;            // simulate-sde, analytic-quadratic, check-bounds
  MomentMode moment_mode = MomentMode::paper_verbatim;   // analytic-quadratic
  std::size_t replicates = 0;                 // check-normality draws; check-bounds V* draws
  double sample_time = 0.0;                   // check-normality: time of the fixed server state
  std::optional<BoundKind> bound;             // check-bounds
  std::size_t runs = 0;                       // check-bounds
  std::size_t samples_per_run = 0;            // check-bounds
  double tau = 1.0;                           // check-bounds, theorem2
  std::string output_dir = "out";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  Problem problem() const;
  FedAvgConfig fedavg_config() const;
  WeightVector initial_state() const;
};

/// Reads a config, collecting every structural problem (missing or mistyped
/// fields, unknown names) into `diagnostics` instead of stopping at the
/// first one. The returned config is only meaningful when nothing was added.
ExperimentConfig parse_config(const nlohmann::json& doc, std::vector<std::string>& diagnostics);

nlohmann::json to_json(const ExperimentConfig& config);

/// Semantic checks on a parsed config; empty means runnable.
std::vector<std::string> validate(const ExperimentConfig& config);

/// Reads and fully checks a config file. Unreadable files and JSON syntax
/// errors come back as a single diagnostic.
std::vector<std::string> validate_file(const std::string& path, ExperimentConfig* out = nullptr);

/// FNV-1a 64 of the canonical serialization, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace fedsde::cli
