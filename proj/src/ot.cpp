#include "seqot/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <string>

namespace seqot::ot {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

constexpr double kMassSumTol = 1e-12;
constexpr double kFeasibilityTol = 1e-9;
constexpr double kReducedCostTol = 1e-12;

double log_sum_exp(const std::vector<double>& terms) {
  double mx = terms[0];
  for (double t : terms) mx = std::max(mx, t);
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

}  // namespace

MassDistribution::MassDistribution(Tensor pts, std::vector<double> m)
    : points(std::move(pts)), masses(std::move(m)) {
  require(points.shape.size() == 2,
          "mass distribution: points must be a matrix, got " + shape_to_string(points.shape));
  require(points.shape[0] >= 1, "mass distribution: need at least one point");
  require(static_cast<std::int64_t>(masses.size()) == points.shape[0],
          "mass distribution: " + std::to_string(masses.size()) + " masses for " +
              std::to_string(points.shape[0]) + " points");
  double sum = 0.0;
  for (double v : masses) {
    require(v > 0.0, "mass distribution: masses must be strictly positive");
    sum += v;
  }
  require(std::abs(sum - 1.0) <= kMassSumTol,
          "mass distribution: masses sum to " + std::to_string(sum) + ", expected 1");
}

MassDistribution MassDistribution::uniform(Tensor pts) {
  require(pts.shape.size() == 2 && pts.shape[0] >= 1,
          "mass distribution: points must be a non-empty matrix");
  const auto n = static_cast<std::size_t>(pts.shape[0]);
  return MassDistribution(std::move(pts), std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

CostMatrix::CostMatrix(Tensor m) : c(std::move(m)) {
  require(c.shape.size() == 2, "cost matrix: must be rank 2, got " + shape_to_string(c.shape));
  for (double v : c.data) require(v >= 0.0, "cost matrix: entries must be non-negative");
}

CostMatrix euclidean_cost(const Tensor& a, const Tensor& b) {
  require(a.shape.size() == 2 && b.shape.size() == 2 && a.shape[1] == b.shape[1],
          "euclidean_cost: incompatible shapes " + shape_to_string(a.shape) + " and " +
              shape_to_string(b.shape));
  const std::int64_t n = a.shape[0], m = b.shape[0], d = a.shape[1];
  Tensor out = Tensor::zeros({n, m});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::int64_t p = 0; p < d; ++p) {
        const double t = a.at(i, p) - b.at(j, p);
        acc += t * t;
      }
      out.at(i, j) = std::sqrt(acc);
    }
  return CostMatrix(std::move(out));
}

namespace {

void check_instance(const MassDistribution& mu, const MassDistribution& nu,
                    const CostMatrix& cost, const char* who) {
  require(cost.rows() == mu.size() && cost.cols() == nu.size(),
          std::string(who) + ": cost is " + shape_to_string(cost.c.shape) + " for " +
              std::to_string(mu.size()) + " sources and " + std::to_string(nu.size()) +
              " targets");
}

double plan_cost(const Tensor& plan, const CostMatrix& cost) {
  double acc = 0.0;
  for (std::size_t i = 0; i < plan.data.size(); ++i) acc += plan.data[i] * cost.c.data[i];
  return acc;
}

// Transportation simplex state over the dense tableau.
struct Simplex {
  std::int64_t n, m;
  const CostMatrix& cost;
  std::vector<double> amount;  // n*m, basic amounts
  std::vector<char> basic;     // n*m
  std::vector<double> u, v;    // node potentials

  Simplex(const std::vector<double>& a, const std::vector<double>& b, const CostMatrix& c)
      : n(static_cast<std::int64_t>(a.size())),
        m(static_cast<std::int64_t>(b.size())),
        cost(c),
        amount(static_cast<std::size_t>(n * m), 0.0),
        basic(static_cast<std::size_t>(n * m), 0),
        u(static_cast<std::size_t>(n)),
        v(static_cast<std::size_t>(m)) {
    northwest_corner(a, b);
  }

  std::size_t idx(std::int64_t i, std::int64_t j) const {
    return static_cast<std::size_t>(i * m + j);
  }

  // Marks exactly n+m-1 basic cells, some possibly zero (degenerate).
  void northwest_corner(std::vector<double> a, std::vector<double> b) {
    std::int64_t i = 0, j = 0;
    while (true) {
      const double t = std::min(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(j)]);
      amount[idx(i, j)] = std::max(t, 0.0);
      basic[idx(i, j)] = 1;
      a[static_cast<std::size_t>(i)] -= t;
      b[static_cast<std::size_t>(j)] -= t;
      if (i == n - 1 && j == m - 1) break;
      if (i < n - 1 &&
          (a[static_cast<std::size_t>(i)] <= b[static_cast<std::size_t>(j)] || j == m - 1)) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  // Solves u_i + v_j = c_ij over the basis tree by BFS from row 0.
  void compute_potentials() {
    std::vector<std::vector<std::int64_t>> row_adj(static_cast<std::size_t>(n));
    std::vector<std::vector<std::int64_t>> col_adj(static_cast<std::size_t>(m));
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < m; ++j)
        if (basic[idx(i, j)]) {
          row_adj[static_cast<std::size_t>(i)].push_back(j);
          col_adj[static_cast<std::size_t>(j)].push_back(i);
        }
    std::vector<char> row_done(static_cast<std::size_t>(n), 0);
    std::vector<char> col_done(static_cast<std::size_t>(m), 0);
    std::queue<std::int64_t> q;  // rows as i, cols as n+j
    u[0] = 0.0;
    row_done[0] = 1;
    q.push(0);
    while (!q.empty()) {
      const std::int64_t node = q.front();
      q.pop();
      if (node < n) {
        for (std::int64_t j : row_adj[static_cast<std::size_t>(node)])
          if (!col_done[static_cast<std::size_t>(j)]) {
            v[static_cast<std::size_t>(j)] =
                cost.at(node, j) - u[static_cast<std::size_t>(node)];
            col_done[static_cast<std::size_t>(j)] = 1;
            q.push(n + j);
          }
      } else {
        const std::int64_t j = node - n;
        for (std::int64_t i : col_adj[static_cast<std::size_t>(j)])
          if (!row_done[static_cast<std::size_t>(i)]) {
            u[static_cast<std::size_t>(i)] = cost.at(i, j) - v[static_cast<std::size_t>(j)];
            row_done[static_cast<std::size_t>(i)] = 1;
            q.push(i);
          }
      }
    }
    for (std::int64_t i = 0; i < n; ++i)
      if (!row_done[static_cast<std::size_t>(i)])
        throw std::runtime_error("exact_emd: basis tree disconnected");
    for (std::int64_t j = 0; j < m; ++j)
      if (!col_done[static_cast<std::size_t>(j)])
        throw std::runtime_error("exact_emd: basis tree disconnected");
  }

  // Most negative reduced cost, ties to the lexicographically first cell.
  // Bland mode takes the first negative cell instead, which cannot cycle.
  bool pick_entering(bool bland, std::int64_t& ei, std::int64_t& ej) const {
    double best = -kReducedCostTol;
    bool found = false;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < m; ++j) {
        if (basic[idx(i, j)]) continue;
        const double r = cost.at(i, j) - u[static_cast<std::size_t>(i)] -
                         v[static_cast<std::size_t>(j)];
        if (r < best) {
          best = r;
          ei = i;
          ej = j;
          found = true;
          if (bland) return true;
        }
      }
    return found;
  }

  // Unique alternating cycle created by the entering cell: a path through the
  // basis tree from row ei to column ej, closed by the entering cell itself.
  std::vector<std::pair<std::int64_t, std::int64_t>> find_cycle(std::int64_t ei,
                                                                std::int64_t ej) const {
    const std::int64_t nodes = n + m;
    std::vector<std::int64_t> parent(static_cast<std::size_t>(nodes), -1);
    std::vector<char> seen(static_cast<std::size_t>(nodes), 0);
    std::queue<std::int64_t> q;
    seen[static_cast<std::size_t>(ei)] = 1;
    q.push(ei);
    while (!q.empty()) {
      const std::int64_t node = q.front();
      q.pop();
      if (node == n + ej) break;
      if (node < n) {
        for (std::int64_t j = 0; j < m; ++j)
          if (basic[idx(node, j)] && !seen[static_cast<std::size_t>(n + j)]) {
            seen[static_cast<std::size_t>(n + j)] = 1;
            parent[static_cast<std::size_t>(n + j)] = node;
            q.push(n + j);
          }
      } else {
        const std::int64_t j = node - n;
        for (std::int64_t i = 0; i < n; ++i)
          if (basic[idx(i, j)] && !seen[static_cast<std::size_t>(i)]) {
            seen[static_cast<std::size_t>(i)] = 1;
            parent[static_cast<std::size_t>(i)] = node;
            q.push(i);
          }
      }
    }
    if (!seen[static_cast<std::size_t>(n + ej)])
      throw std::runtime_error("exact_emd: entering cell closes no cycle");
    // Walk parents from the column end back to the row end; each consecutive
    // node pair is a basic cell.
    std::vector<std::pair<std::int64_t, std::int64_t>> cycle;
    cycle.emplace_back(ei, ej);
    std::int64_t node = n + ej;
    while (node != ei) {
      const std::int64_t par = parent[static_cast<std::size_t>(node)];
      if (node < n)
        cycle.emplace_back(node, par - n);
      else
        cycle.emplace_back(par, node - n);
      node = par;
    }
    return cycle;
  }

  // One pivot. Returns false when already optimal.
  bool pivot(bool bland) {
    compute_potentials();
    std::int64_t ei = -1, ej = -1;
    if (!pick_entering(bland, ei, ej)) return false;
    auto cycle = find_cycle(ei, ej);
    // Odd positions in the cycle lose mass; theta is their minimum, and the
    // leaving cell is the lexicographically first one achieving it.
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leave = 1;
    for (std::size_t k = 1; k < cycle.size(); k += 2) {
      const double amt = amount[idx(cycle[k].first, cycle[k].second)];
      if (amt < theta ||
          (amt == theta && cycle[k] < cycle[leave])) {
        theta = amt;
        leave = k;
      }
    }
    for (std::size_t k = 0; k < cycle.size(); ++k) {
      auto& cell = amount[idx(cycle[k].first, cycle[k].second)];
      cell += (k % 2 == 0) ? theta : -theta;
      if (cell < 0.0) cell = 0.0;
    }
    basic[idx(ei, ej)] = 1;
    basic[idx(cycle[leave].first, cycle[leave].second)] = 0;
    amount[idx(cycle[leave].first, cycle[leave].second)] = 0.0;
    return true;
  }
};

}  // namespace

TransportPlan exact_emd(const MassDistribution& mu, const MassDistribution& nu,
                        const CostMatrix& cost) {
  check_instance(mu, nu, cost, "exact_emd");
  double sa = std::accumulate(mu.masses.begin(), mu.masses.end(), 0.0);
  double sb = std::accumulate(nu.masses.begin(), nu.masses.end(), 0.0);
  require(std::abs(sa - sb) <= kFeasibilityTol,
          "exact_emd: marginals carry different total mass (" + std::to_string(sa) + " vs " +
              std::to_string(sb) + ")");

  Simplex s(mu.masses, nu.masses, cost);
  constexpr int kMaxPivots = 20000;
  constexpr int kBlandAfter = 10000;
  int it = 0;
  while (it < kMaxPivots) {
    if (!s.pivot(it >= kBlandAfter)) break;
    ++it;
  }
  if (it >= kMaxPivots) throw std::runtime_error("exact_emd: pivot limit reached");

  TransportPlan out;
  out.plan = Tensor({s.n, s.m}, std::move(s.amount));
  out.achieved_cost = plan_cost(out.plan, cost);
  out.converged = true;
  out.iterations = it;
  return out;
}

double permutation_oracle_emd(const Tensor& a, const Tensor& b) {
  require(a.shape.size() == 2 && b.shape.size() == 2 && a.shape == b.shape,
          "permutation_oracle_emd: point sets must share shape, got " +
              shape_to_string(a.shape) + " and " + shape_to_string(b.shape));
  const std::int64_t n = a.shape[0];
  require(n <= 8, "permutation_oracle_emd: n = " + std::to_string(n) +
                      " exceeds the factorial budget (max 8)");
  const CostMatrix c = euclidean_cost(a, b);
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) total += c.at(i, perm[static_cast<std::size_t>(i)]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

double relaxed_smd(const MassDistribution& mu, const MassDistribution& nu,
                   const CostMatrix& cost) {
  check_instance(mu, nu, cost, "relaxed_smd");
  double total = 0.0;
  for (std::int64_t i = 0; i < mu.size(); ++i) {
    double best = cost.at(i, 0);
    for (std::int64_t j = 1; j < nu.size(); ++j) best = std::min(best, cost.at(i, j));
    total += mu.masses[static_cast<std::size_t>(i)] * best;
  }
  return total;
}

TransportPlan sinkhorn(const MassDistribution& mu, const MassDistribution& nu,
                       const CostMatrix& cost, double epsilon, int max_iters, double tol) {
  check_instance(mu, nu, cost, "sinkhorn");
  require(epsilon > 0.0, "sinkhorn: epsilon must be positive");
  const std::int64_t n = mu.size(), m = nu.size();
  std::vector<double> loga(static_cast<std::size_t>(n)), logb(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < n; ++i)
    loga[static_cast<std::size_t>(i)] = std::log(mu.masses[static_cast<std::size_t>(i)]);
  for (std::int64_t j = 0; j < m; ++j)
    logb[static_cast<std::size_t>(j)] = std::log(nu.masses[static_cast<std::size_t>(j)]);

  std::vector<double> f(static_cast<std::size_t>(n), 0.0), g(static_cast<std::size_t>(m), 0.0);
  std::vector<double> terms;

  // Anneal from a coarse scale down to the requested epsilon, reusing the
  // potentials as a warm start at each stage.
  double cmax = 0.0;
  for (double c : cost.c.data) cmax = std::max(cmax, c);
  std::vector<double> schedule;
  for (double e = std::max(epsilon, cmax > 0.0 ? cmax : epsilon); e > epsilon; e *= 0.25)
    schedule.push_back(e);
  schedule.push_back(epsilon);

  auto half_step_rows = [&](double e) {
    for (std::int64_t i = 0; i < n; ++i) {
      terms.clear();
      for (std::int64_t j = 0; j < m; ++j)
        terms.push_back((g[static_cast<std::size_t>(j)] - cost.at(i, j)) / e);
      f[static_cast<std::size_t>(i)] = e * (loga[static_cast<std::size_t>(i)] - log_sum_exp(terms));
    }
  };
  auto half_step_cols = [&](double e) {
    for (std::int64_t j = 0; j < m; ++j) {
      terms.clear();
      for (std::int64_t i = 0; i < n; ++i)
        terms.push_back((f[static_cast<std::size_t>(i)] - cost.at(i, j)) / e);
      g[static_cast<std::size_t>(j)] = e * (logb[static_cast<std::size_t>(j)] - log_sum_exp(terms));
    }
  };
  auto marginal_violation = [&](double e) {
    // Columns are exact right after the g update; measure the rows.
    double err = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::int64_t j = 0; j < m; ++j)
        row += std::exp((f[static_cast<std::size_t>(i)] + g[static_cast<std::size_t>(j)] -
                         cost.at(i, j)) /
                        e);
      err += std::abs(row - mu.masses[static_cast<std::size_t>(i)]);
    }
    return err;
  };

  TransportPlan out;
  out.converged = false;
  int used = 0;
  const int per_stage = std::max(2, max_iters / (4 * std::max<int>(1, static_cast<int>(schedule.size()))));
  for (std::size_t s = 0; s < schedule.size() && used < max_iters; ++s) {
    const double e = schedule[s];
    const bool last = s + 1 == schedule.size();
    const int budget = last ? (max_iters - used) : per_stage;
    for (int k = 0; k < budget && used < max_iters; ++k) {
      half_step_rows(e);
      half_step_cols(e);
      ++used;
      if (last && marginal_violation(e) < tol) {
        out.converged = true;
        break;
      }
    }
    if (out.converged) break;
  }

  const double e = epsilon;
  Tensor plan = Tensor::zeros({n, m});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j)
      plan.at(i, j) = std::exp(
          (f[static_cast<std::size_t>(i)] + g[static_cast<std::size_t>(j)] - cost.at(i, j)) / e);
  out.plan = std::move(plan);
  out.achieved_cost = plan_cost(out.plan, cost);
  out.iterations = used;
  return out;
}

TransportPlan ipot(const MassDistribution& mu, const MassDistribution& nu,
                   const CostMatrix& cost, double beta_step, int inner_iters, int outer_iters) {
  check_instance(mu, nu, cost, "ipot");
  require(beta_step > 0.0, "ipot: beta_step must be positive");
  const std::int64_t n = mu.size(), m = nu.size();
  std::vector<double> G(static_cast<std::size_t>(n * m));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j)
      G[static_cast<std::size_t>(i * m + j)] = std::exp(-cost.at(i, j) / beta_step);

  std::vector<double> P(static_cast<std::size_t>(n * m),
                        1.0 / static_cast<double>(n * m));
  std::vector<double> q(static_cast<std::size_t>(n * m));
  std::vector<double> uu(static_cast<std::size_t>(n), 1.0);
  std::vector<double> vv(static_cast<std::size_t>(m), 1.0);

  for (int t = 0; t < outer_iters; ++t) {
    for (std::size_t k = 0; k < q.size(); ++k) q[k] = G[k] * P[k];
    for (int inner = 0; inner < inner_iters; ++inner) {
      for (std::int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < m; ++j)
          acc += q[static_cast<std::size_t>(i * m + j)] * vv[static_cast<std::size_t>(j)];
        uu[static_cast<std::size_t>(i)] = mu.masses[static_cast<std::size_t>(i)] / acc;
      }
      for (std::int64_t j = 0; j < m; ++j) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
          acc += q[static_cast<std::size_t>(i * m + j)] * uu[static_cast<std::size_t>(i)];
        vv[static_cast<std::size_t>(j)] = nu.masses[static_cast<std::size_t>(j)] / acc;
      }
    }
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < m; ++j)
        P[static_cast<std::size_t>(i * m + j)] = uu[static_cast<std::size_t>(i)] *
                                                 q[static_cast<std::size_t>(i * m + j)] *
                                                 vv[static_cast<std::size_t>(j)];
  }

  TransportPlan out;
  out.plan = Tensor({n, m}, std::move(P));
  out.achieved_cost = plan_cost(out.plan, cost);
  out.iterations = outer_iters;
  double viol = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::int64_t j = 0; j < m; ++j) row += out.plan.at(i, j);
    viol = std::max(viol, std::abs(row - mu.masses[static_cast<std::size_t>(i)]));
  }
  for (std::int64_t j = 0; j < m; ++j) {
    double col = 0.0;
    for (std::int64_t i = 0; i < n; ++i) col += out.plan.at(i, j);
    viol = std::max(viol, std::abs(col - nu.masses[static_cast<std::size_t>(j)]));
  }
  out.converged = viol < 1e-6;
  return out;
}

}  // namespace seqot::ot
