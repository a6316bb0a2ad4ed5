#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fedsde/discrete.hpp"
#include "fedsde/errors.hpp"
#include "fedsde/quadratic.hpp"
#include "test_support.hpp"

using namespace fedsde;
using namespace fedsde::testing;

namespace {

FedAvgConfig config(int e, double eta, double h = 1.0, double eta0 = 1.0, int rounds = 1, std::uint64_t seed = 1) {
  FedAvgConfig c;
  c.local_steps = e;
  c.h = h;
  c.client_schedule = Schedule::constant(eta);
  c.server_schedule = Schedule::constant(eta0);
  c.rounds = rounds;
  c.seed = seed;
  return c;
}

std::string csv_of(const Trajectory& t) {
  std::ostringstream out;
  write_trajectory_csv(out, t);
  return out.str();
}

}  // namespace

TEST_CASE("local SGD step") {
  const Problem p = single_quadratic(1.0, 0.0, 0.0);
  CHECK(local_sgd_step(vec1(1.0), p, 0, 0.1, vec1(0.0))[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(local_sgd_step(vec1(1.0), p, 0, 0.0, vec1(0.0))[0] == 1.0);
  const Problem q = single_quadratic(2.0, 0.7, 0.0);
  CHECK(local_sgd_step(vec1(0.7), q, 0, 0.3, vec1(0.0))[0] == 0.7);
  CHECK(local_sgd_step(vec1(0.0), p, 0, 0.5, vec1(2.0))[0] == doctest::Approx(-1.0));
}

TEST_CASE("one round with E=1 and h*eta0=1 is gradient descent on F") {
  const Problem p = benchmark_problem(0.0);
  const auto cfg = config(1, 0.05, 0.5, 2.0);
  const auto out = run_round(vec1(1.0), p, cfg, 0);
  const double grad = global_loss_and_gradient(p, vec1(1.0)).second[0];
  CHECK(out.server[0] == doctest::Approx(1.0 - 0.05 * grad).epsilon(1e-14));
}

TEST_CASE("zero server rate leaves the server state alone") {
  const Problem p = benchmark_problem();
  FedAvgConfig cfg = config(3, 0.1, 1.0, 0.0, 5);
  const auto traj = run_fedavg(p, cfg, vec1(2.0));
  for (const auto& r : traj.records) CHECK(r.server[0] == 2.0);
}

TEST_CASE("identical deterministic clients behave like one client") {
  Problem many({quadratic_client(0.25, 1.5, 1.0, 0.0), quadratic_client(0.25, 1.5, 1.0, 0.0),
                quadratic_client(0.25, 1.5, 1.0, 0.0), quadratic_client(0.25, 1.5, 1.0, 0.0)});
  const Problem one = single_quadratic(1.5, 1.0, 0.0);
  const auto cfg = config(4, 0.1);
  const auto a = run_round(vec1(3.0), many, cfg, 0);
  const auto b = run_round(vec1(3.0), one, cfg, 0);
  CHECK(a.server[0] == doctest::Approx(b.server[0]).epsilon(1e-15));
  WeightVector w = vec1(3.0);
  for (int i = 0; i < 4; ++i) w = local_sgd_step(w, one, 0, 0.1, vec1(0.0));
  CHECK(b.server[0] == doctest::Approx(w[0]).epsilon(1e-15));
}

TEST_CASE("E=1 round equals an SGD step on F with the aggregated noise") {
  const Problem p = benchmark_problem(0.3);
  const auto cfg = config(1, 0.05);
  const WeightVector w0 = vec1(1.7);
  const auto round = run_round(w0, p, cfg, 4);
  RolloutWorkspace ws(1);
  const auto draw = rollout_update(w0, p, cfg, 0.05, domain_key(cfg.seed, StreamDomain::fedavg_round).child(4),
                                   DrawDetail::full, ws);
  WeightVector noise = WeightVector::Zero(1);
  for (std::size_t k = 0; k < 2; ++k) noise -= p.client(k).weight * draw.noise_sums[k];
  const WeightVector sgd = w0 - 0.05 * (global_loss_and_gradient(p, w0).second + noise);
  CHECK(round.server[0] == doctest::Approx(sgd[0]).epsilon(1e-14));
}

TEST_CASE("server update draws sum their client terms exactly") {
  std::mt19937_64 gen(4);
  const Problem p = random_problem(gen, 3, 5, 0.1);
  const auto draws = sample_A(WeightVector::Ones(3), p, config(3, 0.1), 0.0, 50);
  for (const auto& d : draws) {
    WeightVector s = WeightVector::Zero(3);
    for (const auto& t : d.client_terms) s += t;
    CHECK(s == d.value);
  }
}

TEST_CASE("noiseless draws are identical and deterministic") {
  const Problem p = single_quadratic(1.0, 0.0, 0.0);
  const auto draws = sample_A(vec1(1.0), p, config(1, 0.1), 0.0, 10);
  for (const auto& d : draws) CHECK(d.value[0] == doctest::Approx(-0.1).epsilon(1e-15));
  const Problem b = benchmark_problem(0.0);
  const auto bd = sample_A(vec1(1.0), b, config(3, 0.1), 0.0, 5);
  for (const auto& d : bd) CHECK(d.value == bd.front().value);
}

TEST_CASE("sample_A matches the local update distribution") {
  const Problem p = benchmark_problem(0.04);
  const double eta = 0.05;
  const int e = 3;
  const WeightVector w0 = vec1(1.0);
  SampleOptions opt;
  opt.detail = DrawDetail::value_only;
  const std::size_t n = 100000;
  const auto draws = sample_A(w0, p, config(e, eta), 0.0, n, opt);
  double mean = 0.0, sq = 0.0;
  for (const auto& d : draws) mean += d.value[0];
  mean /= n;
  for (const auto& d : draws) sq += (d.value[0] - mean) * (d.value[0] - mean);
  const double var = sq / (n - 1);

  double expected_mean = 0.0, expected_var = 0.0;
  for (const auto& c : p.clients()) {
    const auto dist = local_update_distribution(c.loss.curvature(), c.loss.center(), c.noise_cov, eta, e, w0,
                                                MomentMode::exact_moment);
    expected_mean += c.weight * (dist.mean[0] - w0[0]);
    expected_var += c.weight * c.weight * dist.cov(0, 0);
  }
  CHECK(std::abs(mean - expected_mean) <= 3.0 * std::sqrt(var / n));
  CHECK(std::abs(var / expected_var - 1.0) < 0.02);
}

TEST_CASE("replicates depend on (seed, t, r) only") {
  const Problem p = benchmark_problem(0.2);
  const auto cfg = config(2, 0.1);
  SampleOptions one, many, offset;
  many.threads = 4;
  offset.first_replicate = 10;
  const auto a = sample_A(vec1(0.5), p, cfg, 2.0, 40, one);
  const auto b = sample_A(vec1(0.5), p, cfg, 2.0, 40, many);
  const auto c = sample_A(vec1(0.5), p, cfg, 2.0, 30, offset);
  for (std::size_t r = 0; r < 40; ++r) CHECK(a[r].value == b[r].value);
  for (std::size_t r = 0; r < 30; ++r) CHECK(c[r].value == a[r + 10].value);
  CHECK(sample_A(vec1(0.5), p, cfg, 3.0, 1)[0].value != a[0].value);
}

TEST_CASE("trajectories") {
  const Problem p = benchmark_problem();
  SUBCASE("zero rounds keep only the initial record") {
    const auto t = run_fedavg(p, config(2, 0.1, 1.0, 1.0, 0), vec1(2.0));
    CHECK(t.records.size() == 1);
    CHECK(t.records[0].server[0] == 2.0);
  }
  SUBCASE("record count and times") {
    const auto t = run_fedavg(p, config(2, 0.1, 0.25, 1.0, 8), vec1(2.0));
    CHECK(t.records.size() == 9);
    CHECK(t.records.back().t == doctest::Approx(2.0));
    CHECK(&t.at_time(0.6) == &t.records[2]);
    CHECK(&t.at_time(99.0) == &t.records.back());
  }
  SUBCASE("noiseless quadratic loss never increases") {
    const Problem q = benchmark_problem(0.0);
    const auto t = run_fedavg(q, config(1, 0.1, 1.0, 1.0, 100), vec1(-4.0));
    for (std::size_t i = 1; i < t.records.size(); ++i) CHECK(t.records[i].loss <= t.records[i - 1].loss);
  }
  SUBCASE("equal seeds give identical bytes") {
    const auto a = run_fedavg(p, config(3, 0.05, 1.0, 1.0, 50, 42), vec1(2.0));
    const auto b = run_fedavg(p, config(3, 0.05, 1.0, 1.0, 50, 42), vec1(2.0));
    const auto c = run_fedavg(p, config(3, 0.05, 1.0, 1.0, 50, 43), vec1(2.0));
    CHECK(csv_of(a) == csv_of(b));
    CHECK(csv_of(a) != csv_of(c));
  }
  SUBCASE("divergence aborts with the round index") {
    try {
      (void)run_fedavg(p, config(1, 100.0, 1.0, 1.0, 1000), vec1(2.0));
      FAIL("expected an abort");
    } catch (const NumericalAbort& e) {
      CHECK(e.where() > 1.0);
      CHECK(e.where() <= 1000.0);
    }
  }
}

TEST_CASE("trajectory CSV layout") {
  const Problem p = benchmark_problem();
  const auto t = run_fedavg(p, config(2, 0.1, 1.0, 1.0, 1), vec1(2.0));
  std::istringstream in(csv_of(t));
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header ==
        "round,t,w0_0,loss,grad_norm_sq,drift_client_0_step_1,drift_client_0_step_2,drift_client_1_step_1,"
        "drift_client_1_step_2");
  CHECK(first == "0,0,2,4,4,0,0,0,0");
}

TEST_CASE("gradient clipping caps each step") {
  const Problem p = single_quadratic(1.0, 0.0, 0.0);
  FedAvgConfig cfg = config(1, 0.1);
  cfg.clip_norm = 1.0;
  const auto out = run_round(vec1(100.0), p, cfg, 0);
  CHECK(out.server[0] == doctest::Approx(99.9));
  cfg.clip_norm = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("drift stays within the local-step bound") {
  const Problem p = benchmark_problem(0.05);
  const auto cfg = config(4, 0.05);
  const WeightVector w0 = vec1(1.0);
  const double L = 9.0;   // |U (w - a)| <= 9 for w in [0, 2] on both clients; U <= 3
  std::vector<double> sums(8, 0.0);
  const int n = 5000;
  for (int r = 0; r < n; ++r) {
    RolloutWorkspace ws(1);
    DriftTrace trace;
    (void)rollout_update(w0, p, cfg, 0.05, StreamKey(9).child(r), DrawDetail::value_only, ws, &trace);
    for (std::size_t j = 0; j < 8; ++j) sums[j] += trace.drift[j];
  }
  for (std::size_t k = 0; k < 2; ++k) {
    for (int i = 1; i < 4; ++i) {
      const double mean = sums[k * 4 + i - 1] / n;
      CHECK(mean <= i * 0.05 * (L + std::sqrt(0.05)));
    }
  }
}
