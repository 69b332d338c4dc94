#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "seqot/ot.hpp"
#include "seqot/rng.hpp"

using namespace seqot;
using namespace seqot::ot;

namespace {

Tensor rand_points(Rng& rng, std::int64_t n, std::int64_t d, double lo = -2.0, double hi = 2.0) {
  Tensor t = Tensor::zeros({n, d});
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

std::vector<double> rand_masses(Rng& rng, std::int64_t n) {
  std::vector<double> m(static_cast<std::size_t>(n));
  double s = 0.0;
  for (auto& v : m) {
    v = rng.uniform(0.1, 1.0);
    s += v;
  }
  for (auto& v : m) v /= s;
  return m;
}

void check_marginals(const TransportPlan& plan, const MassDistribution& mu,
                     const MassDistribution& nu, double tol) {
  for (std::int64_t i = 0; i < mu.size(); ++i) {
    double row = 0.0;
    for (std::int64_t j = 0; j < nu.size(); ++j) row += plan.plan.at(i, j);
    CHECK(std::abs(row - mu.masses[static_cast<std::size_t>(i)]) <= tol);
  }
  for (std::int64_t j = 0; j < nu.size(); ++j) {
    double col = 0.0;
    for (std::int64_t i = 0; i < mu.size(); ++i) col += plan.plan.at(i, j);
    CHECK(std::abs(col - nu.masses[static_cast<std::size_t>(j)]) <= tol);
  }
}

}  // namespace

TEST_CASE("euclidean_cost basics") {
  Rng rng(31);
  Tensor a = rand_points(rng, 4, 3);
  CostMatrix self = euclidean_cost(a, a);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(self.at(i, i) == 0.0);

  Tensor p({1, 2}, {0.0, 0.0});
  Tensor q({1, 2}, {3.0, 4.0});
  CHECK(euclidean_cost(p, q).at(0, 0) == 5.0);

  Tensor b = rand_points(rng, 3, 3);
  CostMatrix ab = euclidean_cost(a, b);
  CostMatrix ba = euclidean_cost(b, a);
  for (std::int64_t i = 0; i < 4; ++i)
    for (std::int64_t j = 0; j < 3; ++j) CHECK(ab.at(i, j) == ba.at(j, i));

  CHECK_THROWS_AS(euclidean_cost(rand_points(rng, 2, 3), rand_points(rng, 2, 4)),
                  std::invalid_argument);
}

TEST_CASE("exact_emd trivial instances") {
  Rng rng(32);
  SUBCASE("identical distributions cost zero") {
    Tensor pts = rand_points(rng, 5, 3);
    auto mu = MassDistribution(pts, rand_masses(rng, 5));
    auto nu = mu;
    auto plan = exact_emd(mu, nu, euclidean_cost(pts, pts));
    CHECK(plan.achieved_cost <= 1e-9);
    check_marginals(plan, mu, nu, 1e-9);
  }
  SUBCASE("single points give the distance") {
    auto mu = MassDistribution(Tensor({1, 2}, {0.0, 0.0}), {1.0});
    auto nu = MassDistribution(Tensor({1, 2}, {3.0, 4.0}), {1.0});
    auto plan = exact_emd(mu, nu, euclidean_cost(mu.points, nu.points));
    CHECK(plan.achieved_cost == doctest::Approx(5.0).epsilon(1e-12));
  }
  SUBCASE("mismatched totals are rejected") {
    auto mu = MassDistribution(Tensor({1, 1}, {0.0}), {1.0});
    auto nu = MassDistribution(Tensor({1, 1}, {1.0}), {1.0});
    CostMatrix c = euclidean_cost(mu.points, nu.points);
    MassDistribution bad = mu;
    bad.masses[0] = 1.0 + 1e-6;  // bypass the constructor on purpose
    CHECK_THROWS_AS(exact_emd(bad, nu, c), std::invalid_argument);
  }
}

TEST_CASE("exact_emd agrees with the permutation oracle") {
  Rng rng(33);
  for (int trial = 0; trial < 30; ++trial) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(trial % 6);
    Tensor a = rand_points(rng, n, 2 + trial % 3);
    Tensor b = rand_points(rng, n, 2 + trial % 3);
    const double oracle = permutation_oracle_emd(a, b);
    auto mu = MassDistribution::uniform(a);
    auto nu = MassDistribution::uniform(b);
    auto plan = exact_emd(mu, nu, euclidean_cost(a, b));
    CHECK(std::abs(plan.achieved_cost - oracle) <= 1e-9);
    check_marginals(plan, mu, nu, 1e-9);

    // Other direction too; EMD with a symmetric cost is symmetric.
    auto rev = exact_emd(nu, mu, euclidean_cost(b, a));
    CHECK(std::abs(rev.achieved_cost - oracle) <= 1e-9);
  }
}

TEST_CASE("permutation oracle edge cases") {
  Rng rng(34);
  Tensor a = rand_points(rng, 3, 2);
  CHECK(permutation_oracle_emd(a, a) == 0.0);
  Tensor p({1, 2}, {1.0, 1.0});
  Tensor q({1, 2}, {4.0, 5.0});
  CHECK(permutation_oracle_emd(p, q) == doctest::Approx(5.0));
  CHECK_THROWS_AS(permutation_oracle_emd(rand_points(rng, 9, 2), rand_points(rng, 9, 2)),
                  std::invalid_argument);
}

TEST_CASE("relaxed_smd values and lower-bound property") {
  SUBCASE("hand instance") {
    auto mu = MassDistribution(Tensor({2, 2}, {0.0, 0.0, 2.0, 0.0}), {0.5, 0.5});
    auto nu = MassDistribution(Tensor({2, 2}, {0.0, 0.0, 1.0, 0.0}), {0.5, 0.5});
    CostMatrix c = euclidean_cost(mu.points, nu.points);
    const double relaxed = relaxed_smd(mu, nu, c);
    CHECK(relaxed == doctest::Approx(0.5).epsilon(1e-12));
    auto plan = exact_emd(mu, nu, c);
    CHECK(plan.achieved_cost == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(relaxed <= plan.achieved_cost + 1e-9);
  }
  SUBCASE("identical sequences give zero") {
    Rng rng(35);
    Tensor pts = rand_points(rng, 4, 3);
    auto mu = MassDistribution(pts, rand_masses(rng, 4));
    CHECK(relaxed_smd(mu, mu, euclidean_cost(pts, pts)) == 0.0);
  }
  SUBCASE("single target forces the plan") {
    Rng rng(36);
    Tensor pts = rand_points(rng, 5, 2);
    auto mu = MassDistribution(pts, rand_masses(rng, 5));
    auto nu = MassDistribution(rand_points(rng, 1, 2), {1.0});
    CostMatrix c = euclidean_cost(pts, nu.points);
    double expect = 0.0;
    for (std::int64_t i = 0; i < 5; ++i)
      expect += mu.masses[static_cast<std::size_t>(i)] * c.at(i, 0);
    CHECK(relaxed_smd(mu, nu, c) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(exact_emd(mu, nu, c).achieved_cost == doctest::Approx(expect).epsilon(1e-9));
  }
  SUBCASE("lower bound on random instances") {
    Rng rng(37);
    for (int trial = 0; trial < 40; ++trial) {
      const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_int(0, 7));
      const std::int64_t m = 1 + static_cast<std::int64_t>(rng.uniform_int(0, 7));
      auto mu = MassDistribution(rand_points(rng, n, 3), rand_masses(rng, n));
      auto nu = MassDistribution(rand_points(rng, m, 3), rand_masses(rng, m));
      CostMatrix c = euclidean_cost(mu.points, nu.points);
      CHECK(relaxed_smd(mu, nu, c) <= exact_emd(mu, nu, c).achieved_cost + 1e-9);
    }
  }
}

TEST_CASE("sinkhorn") {
  Rng rng(38);
  SUBCASE("entropy-dominated limit matches the outer product") {
    auto mu = MassDistribution(rand_points(rng, 3, 2), rand_masses(rng, 3));
    auto nu = MassDistribution(rand_points(rng, 4, 2), rand_masses(rng, 4));
    CostMatrix c = euclidean_cost(mu.points, nu.points);
    auto plan = sinkhorn(mu, nu, c, 1e3, 500, 1e-10);
    double expect = 0.0;
    for (std::int64_t i = 0; i < 3; ++i)
      for (std::int64_t j = 0; j < 4; ++j) {
        const double outer =
            mu.masses[static_cast<std::size_t>(i)] * nu.masses[static_cast<std::size_t>(j)];
        CHECK(plan.plan.at(i, j) == doctest::Approx(outer).epsilon(1e-3));
        expect += outer * c.at(i, j);
      }
    CHECK(plan.achieved_cost == doctest::Approx(expect).epsilon(1e-3));
  }
  SUBCASE("small epsilon approaches the exact optimum") {
    for (int trial = 0; trial < 5; ++trial) {
      auto mu = MassDistribution(rand_points(rng, 5, 3), rand_masses(rng, 5));
      auto nu = MassDistribution(rand_points(rng, 5, 3), rand_masses(rng, 5));
      CostMatrix c = euclidean_cost(mu.points, nu.points);
      const double exact = exact_emd(mu, nu, c).achieved_cost;
      auto plan = sinkhorn(mu, nu, c, 1e-3, 5000, 1e-9);
      CHECK(plan.converged);
      CHECK(std::abs(plan.achieved_cost - exact) <= 0.01 * exact);
    }
  }
  SUBCASE("identity cost goes to zero with epsilon") {
    Tensor pts = rand_points(rng, 4, 2);
    auto mu = MassDistribution(pts, rand_masses(rng, 4));
    CostMatrix c = euclidean_cost(pts, pts);
    const double at_small = sinkhorn(mu, mu, c, 1e-3, 5000, 1e-9).achieved_cost;
    const double at_large = sinkhorn(mu, mu, c, 1.0, 5000, 1e-9).achieved_cost;
    CHECK(at_small < at_large);
    CHECK(at_small <= 1e-2);
  }
}

TEST_CASE("ipot") {
  Rng rng(39);
  SUBCASE("identity goes to zero") {
    Tensor pts = rand_points(rng, 4, 2);
    auto mu = MassDistribution(pts, rand_masses(rng, 4));
    auto plan = ipot(mu, mu, euclidean_cost(pts, pts), 1.0, 1, 500);
    CHECK(plan.achieved_cost <= 1e-6);
  }
  SUBCASE("single point is exact") {
    auto mu = MassDistribution(Tensor({1, 2}, {0.0, 0.0}), {1.0});
    auto nu = MassDistribution(Tensor({1, 2}, {3.0, 4.0}), {1.0});
    auto plan = ipot(mu, nu, euclidean_cost(mu.points, nu.points), 1.0, 1, 50);
    CHECK(plan.achieved_cost == doctest::Approx(5.0).epsilon(1e-9));
  }
  SUBCASE("random instance within one percent of exact") {
    for (int trial = 0; trial < 5; ++trial) {
      auto mu = MassDistribution(rand_points(rng, 4, 3), rand_masses(rng, 4));
      auto nu = MassDistribution(rand_points(rng, 6, 3), rand_masses(rng, 6));
      CostMatrix c = euclidean_cost(mu.points, nu.points);
      const double exact = exact_emd(mu, nu, c).achieved_cost;
      auto plan = ipot(mu, nu, c, 1.0, 1, 2000);
      CHECK(plan.converged);
      CHECK(std::abs(plan.achieved_cost - exact) <= 0.01 * exact);
    }
  }
}

TEST_CASE("scale equivariance of every solver") {
  Rng rng(40);
  const double s = 3.7;
  auto mu = MassDistribution(rand_points(rng, 4, 3), rand_masses(rng, 4));
  auto nu = MassDistribution(rand_points(rng, 5, 3), rand_masses(rng, 5));
  Tensor pa = mu.points, pb = nu.points;
  for (auto& v : pa.data) v *= s;
  for (auto& v : pb.data) v *= s;
  auto mus = MassDistribution(pa, mu.masses);
  auto nus = MassDistribution(pb, nu.masses);
  CostMatrix c = euclidean_cost(mu.points, nu.points);
  CostMatrix cs = euclidean_cost(mus.points, nus.points);

  CHECK(exact_emd(mus, nus, cs).achieved_cost ==
        doctest::Approx(s * exact_emd(mu, nu, c).achieved_cost).epsilon(1e-9));
  CHECK(relaxed_smd(mus, nus, cs) == doctest::Approx(s * relaxed_smd(mu, nu, c)).epsilon(1e-9));
  CHECK(ipot(mus, nus, cs, s * 1.0, 1, 2000).achieved_cost ==
        doctest::Approx(s * ipot(mu, nu, c, 1.0, 1, 2000).achieved_cost).epsilon(1e-6));
  CHECK(sinkhorn(mus, nus, cs, s * 1e-3, 5000, 1e-9).achieved_cost ==
        doctest::Approx(s * sinkhorn(mu, nu, c, 1e-3, 5000, 1e-9).achieved_cost).epsilon(1e-6));
}

TEST_CASE("mass distribution validation") {
  Tensor pts({2, 2}, {0.0, 0.0, 1.0, 1.0});
  CHECK_THROWS_AS(MassDistribution(pts, {0.5}), std::invalid_argument);
  CHECK_THROWS_AS(MassDistribution(pts, {0.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(MassDistribution(pts, {0.6, 0.6}), std::invalid_argument);
  CHECK_NOTHROW(MassDistribution(pts, {0.25, 0.75}));
}
