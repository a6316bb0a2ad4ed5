#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "fedsde/errors.hpp"
#include "fedsde/stats.hpp"
#include "test_support.hpp"

using namespace fedsde;
using namespace fedsde::testing;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  Stream s{StreamKey(seed)};
  std::vector<double> out(n);
  for (auto& x : out) x = s.normal();
  return out;
}

/// Q identical clients whose contributions are Gaussian: noise only, E = 1.
Problem iid_gaussian_clients(std::size_t q) {
  std::vector<Client> clients;
  for (std::size_t k = 0; k < q; ++k) clients.push_back(quadratic_client(1.0 / q, 1.0, 0.0, 1.0));
  // Force exact normalization onto the last weight.
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < q; ++k) acc += clients[k].weight;
  clients.back().weight = 1.0 - acc;
  return Problem(std::move(clients));
}

FedAvgConfig one_step() {
  FedAvgConfig c;
  c.local_steps = 1;
  c.client_schedule = Schedule::constant(0.1);
  c.seed = 12;
  return c;
}

ServerUpdateDraw draw_of(std::vector<double> terms) {
  ServerUpdateDraw d;
  d.value = WeightVector::Zero(1);
  for (double t : terms) {
    d.client_terms.push_back(vec1(t));
    d.value[0] += t;
  }
  return d;
}

}  // namespace

TEST_CASE("moment summary") {
  std::vector<double> sym;
  for (int i = 0; i < 50; ++i) {
    sym.push_back(-1.0);
    sym.push_back(1.0);
  }
  const auto s = moment_summary(sym);
  CHECK(s.skewness == doctest::Approx(0.0));
  CHECK(s.mean == doctest::Approx(0.0));
  CHECK(s.variance == doctest::Approx(100.0 / 99.0));

  const auto z = normals(1000000, 4);
  const auto g = moment_summary(z);
  CHECK(std::abs(g.excess_kurtosis) <= 0.02);
  CHECK(std::abs(g.skewness) <= 0.01);

  std::vector<double> skewed = normals(1000, 5);
  for (auto& x : skewed) x = std::exp(x);
  std::vector<double> moved = skewed;
  for (auto& x : moved) x = 3.5 * x - 11.0;
  const auto a = moment_summary(skewed);
  const auto b = moment_summary(moved);
  CHECK(std::abs(a.skewness - b.skewness) <= 1e-12 * std::abs(a.skewness));
  CHECK(std::abs(a.excess_kurtosis - b.excess_kurtosis) <= 1e-12 * std::abs(a.excess_kurtosis));

  const std::vector<double> flat(10, 2.0);
  CHECK(moment_summary(flat).degenerate);
  CHECK_THROWS_AS(moment_summary(std::vector<double>{1.0, 2.0, 3.0}), InvalidArgument);
}

TEST_CASE("KS distance") {
  const std::vector<double> one{0.0};
  CHECK(ks_distance(one, [](double) { return 0.5; }) == doctest::Approx(0.5));

  CHECK(ks_normality(normals(100000, 8)) < 0.01);
  std::vector<double> expo = normals(100000, 9);
  Stream s{StreamKey(10)};
  for (auto& x : expo) x = -std::log(s.uniform()) - 1.0;
  CHECK(ks_normality(expo) > 0.05);
  CHECK_THROWS_AS(ks_normality(std::vector<double>(200, 1.0)), DegenerateSampleError);
  CHECK_THROWS_AS(ks_normality(std::vector<double>(50, 1.0)), InvalidArgument);
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5));
  CHECK(normal_cdf(1.959963984540054) == doctest::Approx(0.975));
}

TEST_CASE("Lyapunov ratio for Gaussian client terms") {
  const std::size_t n = 100000;
  SampleOptions opt;
  opt.detail = DrawDetail::client_terms;
  SUBCASE("Q = 100 gives about 3/Q") {
    const auto draws = sample_A(vec1(0.0), iid_gaussian_clients(100), one_step(), 0.0, n, opt);
    CHECK(lyapunov_ratio(draws, 0) == doctest::Approx(0.03).epsilon(0.2));
  }
  SUBCASE("Q = 1 gives the normal kurtosis") {
    const auto draws = sample_A(vec1(0.0), iid_gaussian_clients(1), one_step(), 0.0, n, opt);
    ClientMomentAccumulator acc(1, 1);
    for (const auto& d : draws) acc.add(d);
    CHECK(acc.lyapunov_ratio(0) == doctest::Approx(3.0).epsilon(0.2));
    CHECK_THROWS_AS(lyapunov_ratio(draws, 0), InvalidArgument);
  }
  SUBCASE("doubling Q halves the ratio") {
    const auto a = sample_A(vec1(0.0), iid_gaussian_clients(16), one_step(), 0.0, n, opt);
    const auto b = sample_A(vec1(0.0), iid_gaussian_clients(32), one_step(), 0.0, n, opt);
    CHECK(lyapunov_ratio(b, 0) / lyapunov_ratio(a, 0) == doctest::Approx(0.5).epsilon(0.3));
  }
  SUBCASE("preconditions") {
    const auto few = sample_A(vec1(0.0), iid_gaussian_clients(4), one_step(), 0.0, 50, opt);
    CHECK_THROWS_AS(lyapunov_ratio(few, 0), InvalidArgument);
    std::vector<ServerUpdateDraw> flat(200, draw_of({0.5, -0.5}));
    CHECK_THROWS_AS(lyapunov_ratio(flat, 0), DegenerateSampleError);
  }
}

TEST_CASE("client moment accumulator oracles") {
  // Client 0 alternates +-1 (variance 1, m4 1), client 1 alternates +-2
  // (variance 4, m4 16): ratio (1 + 16) / 25, floor min(1 - 9/4, 16 - 9/4).
  ClientMomentAccumulator acc(2, 1);
  for (int i = 0; i < 100; ++i) acc.add(draw_of({i % 2 ? 1.0 : -1.0, i % 2 ? -2.0 : 2.0}));
  CHECK(acc.variance(0, 0) == doctest::Approx(1.0));
  CHECK(acc.fourth_moment(1, 0) == doctest::Approx(16.0));
  CHECK(acc.lyapunov_ratio(0) == doctest::Approx(17.0 / 25.0));
  CHECK(acc.similarity_floor() == doctest::Approx(-1.25));
  CHECK(std::isnan(acc.mixed_moment_ceiling()));

  // Noise sums alternate +-1 with a constant gradient sum: R = 0, so the only
  // non-zero mixed moment is E[N^4] = 1.
  ClientMomentAccumulator mixed(1, 1);
  for (int i = 0; i < 100; ++i) {
    ServerUpdateDraw d = draw_of({0.1});
    d.noise_sums = {vec1(i % 2 ? 1.0 : -1.0)};
    d.gradient_sums = {vec1(3.0)};
    mixed.add(d);
  }
  CHECK(mixed.mixed_moment_ceiling() == doctest::Approx(1.0));
}

TEST_CASE("normality report on IID Gaussian clients") {
  std::vector<Client> clients;
  for (int k = 0; k < 8; ++k) {
    clients.push_back(Client{0.125, ClientLoss::quadratic(Matrix::Identity(2, 2), WeightVector::Zero(2)),
                             Matrix::Identity(2, 2)});
  }
  const Problem p(std::move(clients));
  const auto draws = sample_A(WeightVector::Zero(2), p, one_step(), 0.0, 20000);
  const auto rep = normality_report(draws);
  CHECK(rep.clients == 8);
  CHECK(rep.replicates == 20000);
  REQUIRE(rep.coordinates.size() == 2);
  for (const auto& c : rep.coordinates) {
    CHECK(c.ks_distance >= 0.0);
    CHECK(c.ks_distance < 0.02);
    CHECK(c.lyapunov_ratio == doctest::Approx(3.0 / 8.0).epsilon(0.1));
  }
  CHECK(rep.similarity_holds);
  CHECK(rep.similarity_floor_estimate > 0.0);
  CHECK(rep.max_offdiagonal_correlation < 0.05);
  CHECK(rep.mixed_moment_ceiling_estimate > 0.0);
}

TEST_CASE("time sampler") {
  SUBCASE("constant rate is uniform") {
    const TimeSampler sampler(Schedule::constant(0.3), 4.0);
    Stream s{StreamKey(1)};
    std::vector<double> t(100000);
    for (auto& x : t) x = sample_time_point(sampler, s);
    CHECK(ks_distance(t, [](double x) { return std::clamp(x / 4.0, 0.0, 1.0); }) < 0.01);
  }
  SUBCASE("inverse-time median") {
    const TimeSampler sampler(Schedule::inverse_time(), std::exp(1.0) - 1.0);
    CHECK(sampler.cdf(std::sqrt(std::exp(1.0)) - 1.0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(sampler.schedule().inverse_integral(0.5 * sampler.normalizer()) ==
          doctest::Approx(0.6487212707001282).epsilon(1e-14));
  }
  SUBCASE("inverse-time draws follow log(1+s)/log(1+t)") {
    const TimeSampler sampler(Schedule::inverse_time(), 9.0);
    Stream s{StreamKey(2)};
    std::vector<double> t(100000);
    for (auto& x : t) {
      x = sample_time_point(sampler, s);
      REQUIRE(x >= 0.0);
      REQUIRE(x <= 9.0);
    }
    CHECK(ks_distance(t, [](double x) { return std::log1p(std::clamp(x, 0.0, 9.0)) / std::log(10.0); }) < 0.01);
  }
  SUBCASE("densities integrate to one") {
    for (const Schedule& sch : {Schedule::inverse_time(), Schedule::inverse_sqrt(), Schedule::power_decay(0.3),
                                Schedule::constant(2.0)}) {
      for (double horizon : {0.5, 9.0, 1000.0}) {
        const TimeSampler sampler(sch, horizon);
        const double mass = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
            [&](double x) { return sampler.density(x); }, 0.0, horizon, 20, 1e-14);
        CHECK(std::abs(mass - 1.0) <= 1e-9);
      }
    }
  }
  SUBCASE("invalid samplers") {
    CHECK_THROWS_AS(TimeSampler(Schedule::constant(0.0), 1.0), InvalidArgument);
    CHECK_THROWS_AS(TimeSampler(Schedule::inverse_time(), 0.0), InvalidArgument);
  }
}
