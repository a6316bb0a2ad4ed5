#include "fedsde/cli/config.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedsde/errors.hpp"

namespace fedsde::cli {

using nlohmann::json;

namespace {

struct KindName {
  ExperimentKind kind;
  const char* name;
};

constexpr KindName kKinds[] = {
    {ExperimentKind::simulate_discrete, "simulate-discrete"},
    {ExperimentKind::simulate_sde, "simulate-sde"},
    {ExperimentKind::analytic_quadratic, "analytic-quadratic"},
    {ExperimentKind::check_normality, "check-normality"},
    {ExperimentKind::check_bounds, "check-bounds"},
};

class Reader {
 public:
  explicit Reader(std::vector<std::string>& diagnostics) : diag_(diagnostics) {}

  void fail(const std::string& message) { diag_.push_back(message); }

  const json* field(const json& obj, const char* key, const std::string& path, bool required) {
    if (!obj.is_object()) return nullptr;
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
      if (required) fail(path + key + " is required");
      return nullptr;
    }
    return &*it;
  }

  std::optional<double> real(const json& obj, const char* key, const std::string& path, bool required) {
    const json* j = field(obj, key, path, required);
    if (!j) return std::nullopt;
    if (!j->is_number()) {
      fail(path + key + " must be a number");
      return std::nullopt;
    }
    return j->get<double>();
  }

  std::optional<std::int64_t> integer(const json& obj, const char* key, const std::string& path, bool required) {
    const json* j = field(obj, key, path, required);
    if (!j) return std::nullopt;
    if (!j->is_number_integer()) {
      fail(path + key + " must be an integer");
      return std::nullopt;
    }
    return j->get<std::int64_t>();
  }

  std::optional<std::size_t> count(const json& obj, const char* key, const std::string& path, bool required) {
    auto v = integer(obj, key, path, required);
    if (!v) return std::nullopt;
    if (*v < 0) {
      fail(path + key + " must be >= 0");
      return std::nullopt;
    }
    return static_cast<std::size_t>(*v);
  }

  std::optional<std::string> text(const json& obj, const char* key, const std::string& path, bool required) {
    const json* j = field(obj, key, path, required);
    if (!j) return std::nullopt;
    if (!j->is_string()) {
      fail(path + key + " must be a string");
      return std::nullopt;
    }
    return j->get<std::string>();
  }

  std::optional<std::vector<double>> vector(const json& j, const std::string& path) {
    if (!j.is_array()) {
      fail(path + " must be an array of numbers");
      return std::nullopt;
    }
    std::vector<double> out;
    for (const auto& x : j) {
      if (!x.is_number()) {
        fail(path + " must be an array of numbers");
        return std::nullopt;
      }
      out.push_back(x.get<double>());
    }
    return out;
  }

  std::optional<std::vector<double>> vector(const json& obj, const char* key, const std::string& path,
                                            bool required) {
    const json* j = field(obj, key, path, required);
    if (!j) return std::nullopt;
    return vector(*j, path + key);
  }

  std::optional<std::vector<std::vector<double>>> matrix(const json& obj, const char* key,
                                                         const std::string& path) {
    const json* j = field(obj, key, path, true);
    if (!j) return std::nullopt;
    if (!j->is_array()) {
      fail(path + key + " must be an array of rows");
      return std::nullopt;
    }
    std::vector<std::vector<double>> rows;
    for (const auto& row : *j) {
      auto r = vector(row, path + key + " row");
      if (!r) return std::nullopt;
      rows.push_back(std::move(*r));
    }
    return rows;
  }

  std::optional<Schedule> schedule(const json& obj, const char* key, const std::string& path) {
    const json* j = field(obj, key, path, true);
    if (!j) return std::nullopt;
    const std::string here = path + key + ".";
    auto kind = text(*j, "kind", here, true);
    if (!kind) return std::nullopt;
    try {
      if (*kind == "constant") {
        auto v = real(*j, "value", here, true);
        return v ? std::optional(Schedule::constant(*v)) : std::nullopt;
      }
      if (*kind == "power-decay") {
        auto b = real(*j, "exponent", here, true);
        return b ? std::optional(Schedule::power_decay(*b)) : std::nullopt;
      }
      if (*kind == "inverse-time") return Schedule::inverse_time();
      if (*kind == "inverse-sqrt") return Schedule::inverse_sqrt();
    } catch (const InvalidArgument& e) {
      fail(path + key + ": " + e.what());
      return std::nullopt;
    }
    fail(path + key + ".kind: unknown schedule '" + *kind + "'");
    return std::nullopt;
  }

 private:
  std::vector<std::string>& diag_;
};

json schedule_json(const Schedule& s) {
  switch (s.kind()) {
    case ScheduleKind::constant:
      return {{"kind", "constant"}, {"value", s.parameter()}};
    case ScheduleKind::inverse_sqrt:
      return {{"kind", "inverse-sqrt"}};
    case ScheduleKind::power_decay:
      if (s.parameter() == 1.0) return {{"kind", "inverse-time"}};
      return {{"kind", "power-decay"}, {"exponent", s.parameter()}};
  }
  return {};
}

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

WeightVector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const WeightVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

bool square_of(const std::vector<std::vector<double>>& rows, std::size_t d) {
  if (rows.size() != d) return false;
  for (const auto& r : rows) {
    if (r.size() != d) return false;
  }
  return true;
}

// Empty string when the matrix is symmetric PSD, else a description.
std::string psd_problem(const Matrix& m) {
  if (!m.allFinite()) return "has non-finite entries";
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) return "is not symmetric";
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
  const double lowest = eig.eigenvalues().minCoeff();
  if (lowest < -kPsdTolerance * scale) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", lowest);
    return std::string("is not PSD (eigenvalue ") + buf + ")";
  }
  return {};
}

}  // namespace

std::string to_string(ExperimentKind kind) {
  for (const auto& k : kKinds) {
    if (k.kind == kind) return k.name;
  }
  return "unknown";
}

std::optional<ExperimentKind> experiment_kind_from_string(const std::string& name) {
  for (const auto& k : kKinds) {
    if (name == k.name) return k.kind;
  }
  return std::nullopt;
}

std::string to_string(BoundKind kind) {
  switch (kind) {
    case BoundKind::theorem1: return "theorem1";
    case BoundKind::theorem2: return "theorem2";
    case BoundKind::corollary2: return "corollary2";
  }
  return "unknown";
}

std::optional<BoundKind> bound_kind_from_string(const std::string& name) {
  if (name == "theorem1") return BoundKind::theorem1;
  if (name == "theorem2") return BoundKind::theorem2;
  if (name == "corollary2") return BoundKind::corollary2;
  return std::nullopt;
}

Problem ExperimentConfig::problem() const {
  std::vector<Client> out;
  for (const auto& c : clients) {
    Matrix u = to_matrix(c.curvature);
    WeightVector a = to_vector(c.center);
    ClientLoss loss = c.loss == LossKind::quadratic ? ClientLoss::quadratic(std::move(u), std::move(a))
                                                    : ClientLoss::synthetic_smooth(std::move(u), std::move(a), c.amplitude);
    out.push_back(Client{c.weight, std::move(loss), to_matrix(c.noise_cov)});
  }
  return Problem(std::move(out));
}

FedAvgConfig ExperimentConfig::fedavg_config() const {
  FedAvgConfig cfg;
  cfg.local_steps = fedavg.local_steps;
  cfg.h = fedavg.h;
  cfg.client_schedule = fedavg.client_schedule;
  cfg.server_schedule = fedavg.server_schedule;
  cfg.rounds = fedavg.rounds;
  cfg.seed = seed;
  cfg.clip_norm = fedavg.clip_norm;
  return cfg;
}

WeightVector ExperimentConfig::initial_state() const { return to_vector(w_init); }

ExperimentConfig parse_config(const json& doc, std::vector<std::string>& diagnostics) {
  Reader rd(diagnostics);
  ExperimentConfig cfg;
  if (!doc.is_object()) {
    rd.fail("config must be a JSON object");
    return cfg;
  }
  if (auto kind = rd.text(doc, "kind", "", true)) {
    if (auto k = experiment_kind_from_string(*kind)) {
      cfg.kind = *k;
    } else {
      rd.fail("unknown kind '" + *kind + "'");
    }
  }
  if (const json* seed = rd.field(doc, "seed", "", true)) {
    if (seed->is_number_unsigned()) {
      cfg.seed = seed->get<std::uint64_t>();
    } else {
      rd.fail("seed must be a non-negative integer");
    }
  }

  if (const json* problem = rd.field(doc, "problem", "", true)) {
    const json* clients = rd.field(*problem, "clients", "problem.", true);
    if (clients && !clients->is_array()) rd.fail("problem.clients must be an array");
    if (clients && clients->is_array()) {
      for (std::size_t k = 0; k < clients->size(); ++k) {
        const json& c = (*clients)[k];
        const std::string here = "problem.clients[" + std::to_string(k) + "].";
        ClientSpec spec;
        if (auto w = rd.real(c, "weight", here, true)) spec.weight = *w;
        if (auto loss = rd.text(c, "loss", here, true)) {
          if (*loss == "quadratic") {
            spec.loss = LossKind::quadratic;
          } else if (*loss == "synthetic-smooth") {
            spec.loss = LossKind::synthetic_smooth;
          } else {
            rd.fail(here + "loss: unknown loss '" + *loss + "'");
          }
        }
        if (auto u = rd.matrix(c, "curvature", here)) spec.curvature = std::move(*u);
        if (auto a = rd.vector(c, "center", here, true)) spec.center = std::move(*a);
        if (auto eps = rd.real(c, "amplitude", here, spec.loss == LossKind::synthetic_smooth)) spec.amplitude = *eps;
        if (auto s = rd.matrix(c, "noise_cov", here)) spec.noise_cov = std::move(*s);
        cfg.clients.push_back(std::move(spec));
      }
    }
  }
  if (auto w = rd.vector(doc, "w_init", "", true)) cfg.w_init = std::move(*w);

  if (const json* f = rd.field(doc, "fedavg", "", true)) {
    if (auto e = rd.integer(*f, "local_steps", "fedavg.", true)) cfg.fedavg.local_steps = static_cast<int>(*e);
    if (auto h = rd.real(*f, "h", "fedavg.", true)) cfg.fedavg.h = *h;
    if (auto s = rd.schedule(*f, "client_schedule", "fedavg.")) cfg.fedavg.client_schedule = *s;
    if (auto s = rd.schedule(*f, "server_schedule", "fedavg.")) cfg.fedavg.server_schedule = *s;
    const bool needs_rounds = cfg.kind == ExperimentKind::simulate_discrete || cfg.kind == ExperimentKind::check_bounds;
    if (auto r = rd.integer(*f, "rounds", "fedavg.", needs_rounds)) cfg.fedavg.rounds = static_cast<int>(*r);
    if (auto clip = rd.real(*f, "clip_norm", "fedavg.", false)) cfg.fedavg.clip_norm = *clip;
  }

  if (const json* g = rd.field(doc, "integrator", "", cfg.kind == ExperimentKind::simulate_sde)) {
    IntegratorSpec spec;
    if (auto t = rd.real(*g, "t_max", "integrator.", true)) spec.t_max = *t;
    if (auto r = rd.count(*g, "inner_replicates", "integrator.", true)) spec.inner_replicates = *r;
    if (auto p = rd.count(*g, "paths", "integrator.", true)) spec.paths = *p;
    cfg.integrator = spec;
  }

  const bool needs_checkpoints = cfg.kind == ExperimentKind::analytic_quadratic || cfg.kind == ExperimentKind::check_bounds;
  if (auto c = rd.vector(doc, "checkpoints", "", needs_checkpoints)) cfg.checkpoints = std::move(*c);

  if (auto mode = rd.text(doc, "moment_mode", "", false)) {
    try {
      cfg.moment_mode = moment_mode_from_string(*mode);
    } catch (const InvalidArgument&) {
      rd.fail("unknown moment_mode '" + *mode + "'");
    }
  }
  const bool needs_replicates = cfg.kind == ExperimentKind::check_normality || cfg.kind == ExperimentKind::check_bounds;
  if (auto r = rd.count(doc, "replicates", "", needs_replicates)) cfg.replicates = *r;
  if (auto t = rd.real(doc, "sample_time", "", false)) cfg.sample_time = *t;

  const bool bounds = cfg.kind == ExperimentKind::check_bounds;
  if (auto b = rd.text(doc, "bound", "", bounds)) {
    if (auto k = bound_kind_from_string(*b)) {
      cfg.bound = *k;
    } else {
      rd.fail("unknown bound '" + *b + "'");
    }
  }
  if (auto r = rd.count(doc, "runs", "", bounds)) cfg.runs = *r;
  if (auto s = rd.count(doc, "samples_per_run", "", bounds)) cfg.samples_per_run = *s;
  if (auto t = rd.real(doc, "tau", "", false)) cfg.tau = *t;
  if (auto out = rd.text(doc, "output_dir", "", false)) cfg.output_dir = *out;
  return cfg;
}

json to_json(const ExperimentConfig& cfg) {
  json doc;
  doc["kind"] = to_string(cfg.kind);
  doc["seed"] = cfg.seed;
  json clients = json::array();
  for (const auto& c : cfg.clients) {
    json j;
    j["weight"] = c.weight;
    j["loss"] = c.loss == LossKind::quadratic ? "quadratic" : "synthetic-smooth";
    j["curvature"] = c.curvature;
    j["center"] = c.center;
    if (c.loss == LossKind::synthetic_smooth) j["amplitude"] = c.amplitude;
    j["noise_cov"] = c.noise_cov;
    clients.push_back(std::move(j));
  }
  doc["problem"] = {{"clients", std::move(clients)}};
  doc["w_init"] = cfg.w_init;
  json f;
  f["local_steps"] = cfg.fedavg.local_steps;
  f["h"] = cfg.fedavg.h;
  f["client_schedule"] = schedule_json(cfg.fedavg.client_schedule);
  f["server_schedule"] = schedule_json(cfg.fedavg.server_schedule);
  f["rounds"] = cfg.fedavg.rounds;
  if (cfg.fedavg.clip_norm) f["clip_norm"] = *cfg.fedavg.clip_norm;
  doc["fedavg"] = std::move(f);
  if (cfg.integrator) {
    doc["integrator"] = {{"t_max", cfg.integrator->t_max},
                         {"inner_replicates", cfg.integrator->inner_replicates},
                         {"paths", cfg.integrator->paths}};
  }
  doc["checkpoints"] = cfg.checkpoints;
  doc["moment_mode"] = to_string(cfg.moment_mode);
  doc["replicates"] = cfg.replicates;
  doc["sample_time"] = cfg.sample_time;
  if (cfg.bound) doc["bound"] = to_string(*cfg.bound);
  doc["runs"] = cfg.runs;
  doc["samples_per_run"] = cfg.samples_per_run;
  doc["tau"] = cfg.tau;
  doc["output_dir"] = cfg.output_dir;
  return doc;
}

std::vector<std::string> validate(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  auto fail = [&](std::string m) { out.push_back(std::move(m)); };

  const std::size_t d = cfg.w_init.size();
  if (d == 0) fail("w_init must have at least one coordinate");
  for (double x : cfg.w_init) {
    if (!std::isfinite(x)) fail("w_init must be finite");
  }
  if (cfg.clients.empty()) fail("problem needs at least one client");
  double weight_sum = 0.0;
  bool all_quadratic = true;
  for (std::size_t k = 0; k < cfg.clients.size(); ++k) {
    const auto& c = cfg.clients[k];
    const std::string who = "client " + std::to_string(k);
    if (!(c.weight >= 0.0 && c.weight <= 1.0)) fail(who + " weight must lie in [0, 1]");
    weight_sum += c.weight;
    if (c.loss == LossKind::synthetic_smooth && c.amplitude != 0.0) all_quadratic = false;
    if (c.loss == LossKind::synthetic_smooth && !(c.amplitude >= 0.0 && std::isfinite(c.amplitude))) {
      fail(who + " amplitude must be finite and >= 0");
    }
    if (d == 0) continue;
    if (c.center.size() != d) fail(who + " center must have " + std::to_string(d) + " coordinates");
    if (!square_of(c.curvature, d)) {
      fail(who + " curvature must be " + std::to_string(d) + "x" + std::to_string(d));
    } else if (auto msg = psd_problem(to_matrix(c.curvature)); !msg.empty()) {
      fail(who + " curvature " + msg);
    }
    if (!square_of(c.noise_cov, d)) {
      fail(who + " noise covariance must be " + std::to_string(d) + "x" + std::to_string(d));
    } else if (auto msg = psd_problem(to_matrix(c.noise_cov)); !msg.empty()) {
      fail(who + " noise covariance " + msg);
    }
  }
  if (!cfg.clients.empty() && std::abs(weight_sum - 1.0) > 1e-12) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", weight_sum);
    fail(std::string("client weights must sum to 1 (got ") + buf + ")");
  }

  const auto& f = cfg.fedavg;
  if (f.local_steps < 1) fail("E must be ≥ 1");
  if (!(f.h > 0.0) || !std::isfinite(f.h)) fail("h must be > 0");
  if (f.rounds < 0) fail("rounds must be >= 0");
  if (f.clip_norm && !(*f.clip_norm > 0.0)) fail("clip_norm must be > 0");

  const bool check_times = !cfg.checkpoints.empty();
  for (double t : cfg.checkpoints) {
    if (!(t >= 0.0) || !std::isfinite(t)) {
      fail("checkpoints must be finite and >= 0");
      break;
    }
  }

  switch (cfg.kind) {
    case ExperimentKind::simulate_discrete:
      if (f.rounds < 1) fail("simulate-discrete needs rounds >= 1");
      break;
    case ExperimentKind::simulate_sde:
      if (!cfg.integrator) break;
      if (!(cfg.integrator->t_max > 0.0)) fail("integrator.t_max must be > 0");
      if (cfg.integrator->inner_replicates < 2) fail("integrator.inner_replicates must be >= 2");
      if (cfg.integrator->paths < 1) fail("integrator.paths must be >= 1");
      for (double t : cfg.checkpoints) {
        if (t > cfg.integrator->t_max) {
          fail("checkpoints must not exceed integrator.t_max");
          break;
        }
      }
      break;
    case ExperimentKind::analytic_quadratic:
      if (d != 1) fail("analytic-quadratic needs a one-dimensional problem");
      if (!all_quadratic) fail("analytic-quadratic needs quadratic clients");
      if (f.client_schedule.kind() != ScheduleKind::constant || !(f.client_schedule.parameter() > 0.0)) {
        fail("analytic-quadratic needs a positive constant client schedule");
      }
      if (cfg.moment_mode == MomentMode::exact_moment &&
          (f.server_schedule.kind() != ScheduleKind::constant || !(f.server_schedule.parameter() > 0.0))) {
        fail("exact-moment mode needs a positive constant server schedule");
      }
      if (!check_times) fail("analytic-quadratic needs checkpoints");
      for (const auto& c : cfg.clients) {
        if (d == 1 && square_of(c.curvature, 1) && !(c.curvature[0][0] > 0.0)) {
          fail("analytic-quadratic needs U_k > 0 for every client");
          break;
        }
      }
      break;
    case ExperimentKind::check_normality:
      if (cfg.replicates < 100) fail("check-normality needs replicates >= 100");
      if (cfg.clients.size() < 2) fail("check-normality needs at least two clients");
      if (!(cfg.sample_time >= 0.0)) fail("sample_time must be >= 0");
      break;
    case ExperimentKind::check_bounds: {
      if (f.rounds < 1) fail("check-bounds needs rounds >= 1");
      if (cfg.runs < 2) fail("check-bounds needs runs >= 2");
      if (cfg.samples_per_run < 1) fail("check-bounds needs samples_per_run >= 1");
      if (cfg.replicates < 2) fail("check-bounds needs replicates >= 2 for the V* estimate");
      if (!check_times) fail("check-bounds needs checkpoints");
      const double horizon = f.rounds * f.h;
      for (double t : cfg.checkpoints) {
        if (!(t > 0.0) || t > horizon) {
          fail("check-bounds checkpoints must lie in (0, rounds * h]");
          break;
        }
      }
      if (!f.client_schedule.strictly_positive()) fail("check-bounds needs a strictly positive client schedule");
      if (!cfg.bound) break;
      if (*cfg.bound == BoundKind::theorem1 && f.server_schedule != Schedule::constant(1.0)) {
        fail("theorem1 needs server schedule constant 1");
      }
      if (*cfg.bound == BoundKind::theorem2) {
        if (f.server_schedule.kind() != ScheduleKind::constant || !(f.server_schedule.parameter() > 0.0)) {
          fail("theorem2 needs a positive constant server schedule");
        }
        if (!(cfg.tau > 0.0)) fail("tau must be > 0");
      }
      if (*cfg.bound == BoundKind::corollary2) {
        if (f.client_schedule.kind() != ScheduleKind::constant) fail("corollary2 needs a constant client schedule");
        if (f.server_schedule != Schedule::inverse_time()) fail("corollary2 needs server schedule inverse-time");
      }
      break;
    }
  }

  if (out.empty()) {
    try {
      (void)cfg.problem();
      cfg.fedavg_config().validate();
    } catch (const InvalidArgument& e) {
      fail(e.what());
    }
  }
  return out;
}

std::vector<std::string> validate_file(const std::string& path, ExperimentConfig* out) {
  std::ifstream in(path);
  if (!in) return {"cannot read config file '" + path + "'"};
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    return {std::string("config is not valid JSON: ") + e.what()};
  }
  std::vector<std::string> diagnostics;
  ExperimentConfig cfg = parse_config(doc, diagnostics);
  for (auto& msg : validate(cfg)) {
    if (std::find(diagnostics.begin(), diagnostics.end(), msg) == diagnostics.end()) diagnostics.push_back(std::move(msg));
  }
  if (out) *out = std::move(cfg);
  return diagnostics;
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string canonical = to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fedsde::cli
