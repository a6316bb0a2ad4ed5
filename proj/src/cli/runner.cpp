#include "fedsde/cli/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "fedsde/bounds.hpp"
#include "fedsde/csv.hpp"
#include "fedsde/errors.hpp"
#include "fedsde/parallel.hpp"
#include "fedsde/stats.hpp"

namespace fedsde::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kNormalityChunk = 4096;
constexpr std::size_t kVstarStates = 20;

void dump(std::ostream& out, const json& v, int depth) {
  const std::string pad(static_cast<std::size_t>(2 * (depth + 1)), ' ');
  const std::string close(static_cast<std::size_t>(2 * depth), ' ');
  switch (v.type()) {
    case json::value_t::object: {
      if (v.empty()) {
        out << "{}";
        return;
      }
      out << "{\n";
      bool first = true;
      for (auto it = v.begin(); it != v.end(); ++it) {
        if (!first) out << ",\n";
        first = false;
        out << pad << json(it.key()).dump() << ": ";
        dump(out, it.value(), depth + 1);
      }
      out << '\n' << close << '}';
      return;
    }
    case json::value_t::array: {
      if (v.empty()) {
        out << "[]";
        return;
      }
      out << '[';
      bool first = true;
      for (const auto& x : v) {
        if (!first) out << ", ";
        first = false;
        dump(out, x, depth + 1);
      }
      out << ']';
      return;
    }
    case json::value_t::number_float: {
      const double x = v.get<double>();
      out << (std::isfinite(x) ? format_real(x) : std::string("null"));
      return;
    }
    default:
      out << v.dump();
  }
}

json vector_json(const WeightVector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

std::string simulate_discrete_csv(const ExperimentConfig& cfg) {
  const Trajectory traj = run_fedavg(cfg.problem(), cfg.fedavg_config(), cfg.initial_state());
  std::ostringstream out;
  write_trajectory_csv(out, traj);
  return out.str();
}

std::vector<Artifact> simulate_sde(const ExperimentConfig& cfg, int threads) {
  IntegratorConfig ic;
  ic.t_max = cfg.integrator->t_max;
  ic.inner_replicates = cfg.integrator->inner_replicates;
  ic.paths = cfg.integrator->paths;
  ic.seed = cfg.seed;
  ic.checkpoints = cfg.checkpoints;
  ic.threads = threads;
  const PathEnsemble ens = integrate(cfg.problem(), ic, cfg.fedavg_config(), cfg.initial_state());
  std::ostringstream paths;
  write_paths_csv(paths, ens);

  json checkpoints = json::array();
  for (const auto& s : ens.summary()) {
    checkpoints.push_back({{"t", s.t},
                           {"mean", vector_json(s.mean)},
                           {"variance", vector_json(s.variance)},
                           {"standard_error", vector_json(s.standard_error)}});
  }
  json info;
  info["paths"] = ic.paths;
  info["inner_replicates"] = ic.inner_replicates;
  info["checkpoints"] = std::move(checkpoints);
  return {{"paths.csv", paths.str()}, {"summary.json", json_text(info)}};
}

std::vector<Artifact> analytic_quadratic(const ExperimentConfig& cfg) {
  const auto& f = cfg.fedavg;
  const QuadraticCase1D qc = QuadraticCase1D::from_problem(cfg.problem(), f.client_schedule.parameter(),
                                                           f.local_steps, cfg.w_init[0]);
  const double eta0 = f.server_schedule.kind() == ScheduleKind::constant ? f.server_schedule.parameter() : 1.0;
  const AnalyticSolution sol = analytic_solution(qc, cfg.moment_mode, f.h, eta0);
  std::ostringstream csv;
  csv << "t,m_0,v_0_ode,v_0_paper_form\n";
  for (double t : cfg.checkpoints) {
    csv << format_real(t) << ',' << format_real(sol.mean(t)) << ',' << format_real(sol.variance(t)) << ','
        << format_real(sol.variance_paper_form(t)) << '\n';
  }
  const SdeCoefficients coef = sde_coefficients(qc);
  json info;
  info["moment_mode"] = to_string(cfg.moment_mode);
  info["A"] = coef.A;
  info["B"] = coef.B;
  info["C4"] = coef.C4;
  info["rate"] = sol.rate();
  info["center"] = sol.center();
  info["diffusion_sq"] = sol.diffusion_sq();
  info["stationary_variance"] = sol.stationary_variance();
  info["locally_contracting"] = qc.locally_contracting();
  return {{"analytic.csv", csv.str()}, {"coefficients.json", json_text(info)}};
}

std::vector<Artifact> check_normality(const ExperimentConfig& cfg, int threads) {
  const Problem problem = cfg.problem();
  const FedAvgConfig fc = cfg.fedavg_config();
  const WeightVector w0 = cfg.initial_state();
  NormalityAccumulator acc(problem.client_count(), problem.dimension());
  for (std::size_t done = 0; done < cfg.replicates; done += kNormalityChunk) {
    SampleOptions opt;
    opt.first_replicate = done;
    opt.threads = threads;
    const std::size_t n = std::min(kNormalityChunk, cfg.replicates - done);
    for (const auto& draw : sample_A(w0, problem, fc, cfg.sample_time, n, opt)) acc.add(draw);
  }
  const NormalityReport rep = acc.report();

  std::ostringstream csv;
  csv << "coordinate,skewness,excess_kurtosis,ks_distance,lyapunov_ratio\n";
  json coords = json::array();
  for (std::size_t j = 0; j < rep.coordinates.size(); ++j) {
    const auto& c = rep.coordinates[j];
    csv << j << ',' << format_real(c.skewness) << ',' << format_real(c.excess_kurtosis) << ','
        << format_real(c.ks_distance) << ',' << format_real(c.lyapunov_ratio) << '\n';
    coords.push_back({{"skewness", c.skewness},
                      {"excess_kurtosis", c.excess_kurtosis},
                      {"ks_distance", c.ks_distance},
                      {"lyapunov_ratio", c.lyapunov_ratio}});
  }
  json info;
  info["clients"] = rep.clients;
  info["replicates"] = rep.replicates;
  info["coordinates"] = std::move(coords);
  info["similarity_floor_estimate"] = rep.similarity_floor_estimate;
  info["similarity_holds"] = rep.similarity_holds;
  info["mixed_moment_ceiling_estimate"] = rep.mixed_moment_ceiling_estimate;
  info["max_offdiagonal_correlation"] = rep.max_offdiagonal_correlation;
  return {{"normality.csv", csv.str()}, {"normality.json", json_text(info)}};
}

Box enclosing_box(std::span<const Trajectory> runs, Eigen::Index d) {
  WeightVector lo = WeightVector::Constant(d, std::numeric_limits<double>::infinity());
  WeightVector hi = -lo;
  for (const auto& run : runs) {
    for (const auto& rec : run.records) {
      lo = lo.cwiseMin(rec.server);
      hi = hi.cwiseMax(rec.server);
    }
  }
  const WeightVector pad = ((hi - lo) * 0.05).cwiseMax(1e-6);
  return Box{lo - pad, hi + pad};
}

std::vector<Artifact> check_bounds(const ExperimentConfig& cfg, int threads) {
  const Problem problem = cfg.problem();
  const FedAvgConfig base = cfg.fedavg_config();
  const WeightVector w_init = cfg.initial_state();
  const BoundKind kind = *cfg.bound;

  std::vector<Trajectory> runs(cfg.runs);
  const StreamKey run_key = domain_key(cfg.seed, StreamDomain::fedavg_round).child(0x52756e73ULL);
  parallel_for(cfg.runs, threads, [&](std::size_t r) {
    FedAvgConfig fc = base;
    fc.seed = run_key.child(r).digest();
    runs[r] = run_fedavg(problem, fc, w_init);
  });

  const Box box = enclosing_box(runs, problem.dimension());
  const SmoothnessConstants sc = smoothness_constants(problem, box);
  WeightVector w_star;
  if (problem.all_quadratic()) {
    w_star = quadratic_global_minimizer(problem);
  } else {
    std::vector<WeightVector> starts{w_init, runs.front().records.back().server};
    w_star = numeric_global_minimum(problem, starts).first;
  }

  const auto& records = runs.front().records;
  const std::size_t states = std::min(kVstarStates, records.size());
  std::vector<MomentEstimate> estimates(states);
  parallel_for(states, threads, [&](std::size_t i) {
    const auto& rec = records[i * (records.size() - 1) / std::max<std::size_t>(states - 1, 1)];
    estimates[i] = estimate_moments(rec.server, problem, base, rec.t, cfg.replicates);
  });
  const double vstar = estimate_vstar(estimates, base.client_schedule);
  const BoundInputs in = BoundInputs::from_problem(problem, sc, base, vstar, w_init, w_star, cfg.tau);

  const Schedule& density = kind == BoundKind::corollary2 ? base.server_schedule : base.client_schedule;
  const double f_star = in.f_star;
  std::function<double(const TrajectoryRecord&)> functional;
  if (kind == BoundKind::theorem2) {
    functional = [f_star](const TrajectoryRecord& r) { return r.loss - f_star; };
  } else {
    functional = [](const TrajectoryRecord& r) { return r.grad_norm_sq; };
  }
  const StreamKey time_key = domain_key(cfg.seed, StreamDomain::time_sampler);
  std::vector<Measurement> measured;
  for (double t : cfg.checkpoints) {
    measured.push_back(measure_time_average(runs, TimeSampler(density, t), functional, cfg.samples_per_run,
                                            time_key.child_real(t)));
  }

  json extra = json::array();
  std::function<double(double)> rhs;
  switch (kind) {
    case BoundKind::theorem1:
      rhs = [&](double t) { return theorem1_rhs(in, base.client_schedule, t); };
      break;
    case BoundKind::theorem2:
      rhs = [&](double t) { return theorem2_rhs(in, base.client_schedule, t); };
      for (double t : cfg.checkpoints) extra.push_back({{"t", t}, {"corollary4_rhs", corollary4_rhs(in, t)}});
      break;
    case BoundKind::corollary2: {
      const double eta_c = base.client_schedule.parameter();
      rhs = [&, eta_c](double t) { return corollary2_rhs(in, eta_c, t).displayed; };
      for (double t : cfg.checkpoints) {
        const auto c = corollary2_rhs(in, eta_c, t);
        extra.push_back({{"t", t},
                         {"displayed", c.displayed},
                         {"scaled", c.scaled},
                         {"limit_displayed", c.limit_displayed},
                         {"limit_scaled", c.limit_scaled}});
      }
      break;
    }
  }
  const BoundReport report = compare_bound(to_string(kind), measured, rhs);

  std::ostringstream csv;
  write_comparison_csv(csv, report);
  json info;
  info["bound"] = report.name;
  info["pass"] = report.pass;
  info["constants"] = {{"L", in.L},   {"mu", in.mu},          {"vstar", in.vstar}, {"C1", in.c1()},
                       {"C2", in.c2()}, {"C3", in.c3()},       {"f_init", in.f_init}, {"f_star", in.f_star},
                       {"distance_init", in.distance_init}, {"tau", in.tau}};
  info["box"] = {{"lower", vector_json(box.lower)}, {"upper", vector_json(box.upper)}};
  info["w_star"] = vector_json(w_star);
  if (kind == BoundKind::theorem2) {
    std::vector<WeightVector> probes;
    for (const auto& run : runs) {
      for (const auto& rec : run.records) probes.push_back(rec.server);
    }
    const WqcResult wqc = wqc_check(problem, w_star, cfg.tau, probes);
    info["wqc"] = {{"holds", wqc.holds}, {"worst_margin", wqc.worst_margin}};
  }
  json cps = json::array();
  for (const auto& c : report.checkpoints) {
    cps.push_back({{"t", c.t}, {"lhs_mean", c.lhs_mean}, {"lhs_se", c.lhs_se}, {"rhs", c.rhs},
                   {"margin", c.margin}, {"pass", c.pass}});
  }
  info["checkpoints"] = std::move(cps);
  if (!extra.empty()) info["companion"] = std::move(extra);
  return {{"bounds.csv", csv.str()}, {"bounds.json", json_text(info)}};
}

void remove_quietly(const fs::path& p) {
  std::error_code ec;
  fs::remove(p, ec);
}

}  // namespace

std::string json_text(const json& value) {
  std::ostringstream out;
  dump(out, value, 0);
  out << '\n';
  return out.str();
}

std::vector<Artifact> produce_artifacts(const ExperimentConfig& cfg, int threads) {
  switch (cfg.kind) {
    case ExperimentKind::simulate_discrete:
      return {{"trajectory.csv", simulate_discrete_csv(cfg)}};
    case ExperimentKind::simulate_sde:
      return simulate_sde(cfg, threads);
    case ExperimentKind::analytic_quadratic:
      return analytic_quadratic(cfg);
    case ExperimentKind::check_normality:
      return check_normality(cfg, threads);
    case ExperimentKind::check_bounds:
      return check_bounds(cfg, threads);
  }
  throw InvalidArgument("unknown experiment kind");
}

void write_artifacts(const std::string& directory, const std::vector<Artifact>& artifacts, const Artifact& manifest) {
  const fs::path dir(directory);
  fs::create_directories(dir);
  std::vector<fs::path> temps;
  auto stage = [&](const Artifact& a) {
    const fs::path tmp = dir / ("." + a.name + ".tmp");
    temps.push_back(tmp);
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << a.content;
    out.close();
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  };
  try {
    for (const auto& a : artifacts) stage(a);
    stage(manifest);
    for (std::size_t i = 0; i < artifacts.size(); ++i) fs::rename(temps[i], dir / artifacts[i].name);
    fs::rename(temps.back(), dir / manifest.name);
  } catch (...) {
    for (const auto& t : temps) remove_quietly(t);
    throw;
  }
}

int run_command(const std::string& config_path, const RunOptions& options, std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  const auto diagnostics = validate_file(config_path, &cfg);
  if (!diagnostics.empty()) {
    for (const auto& d : diagnostics) err << "invalid config: " << d << '\n';
    return exit_invalid;
  }
  if (options.threads && *options.threads < 1) {
    err << "invalid option: --threads must be >= 1\n";
    return exit_invalid;
  }
  const int threads = options.threads.value_or(default_thread_count());
  const std::string directory = options.out_dir.value_or(cfg.output_dir);

  std::vector<Artifact> artifacts;
  try {
    artifacts = produce_artifacts(cfg, threads);
  } catch (const NumericalAbort& e) {
    err << "numerical abort at " << format_real(e.where()) << ": " << e.what() << '\n';
    return exit_numerical;
  } catch (const InvalidArgument& e) {
    err << "invalid config: " << e.what() << '\n';
    return exit_invalid;
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << '\n';
    return exit_failure;
  }

  json manifest;
  manifest["config_hash"] = config_hash(cfg);
  manifest["kind"] = to_string(cfg.kind);
  manifest["seed"] = cfg.seed;
  json files = json::array();
  for (const auto& a : artifacts) files.push_back(a.name);
  manifest["files"] = std::move(files);
  manifest["version"] = kToolVersion;
  manifest["runtime_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  try {
    write_artifacts(directory, artifacts, {"manifest.json", json_text(manifest)});
  } catch (const std::exception& e) {
    err << "cannot write artifacts: " << e.what() << '\n';
    return exit_failure;
  }
  for (const auto& a : artifacts) out << (fs::path(directory) / a.name).string() << '\n';
  out << (fs::path(directory) / "manifest.json").string() << '\n';
  return exit_ok;
}

int validate_command(const std::string& config_path, std::ostream& out, std::ostream& err) {
  const auto diagnostics = validate_file(config_path);
  if (diagnostics.empty()) {
    out << "ok\n";
    return exit_ok;
  }
  for (const auto& d : diagnostics) err << d << '\n';
  return exit_invalid;
}

}  // namespace fedsde::cli
