// Discrete optimal transport: exact solver, brute-force oracle, and the
// entropic / proximal approximations. Everything here is plain numerics on
// Tensor storage; nothing records onto a tape.
#pragma once

#include <cstdint>
#include <vector>

#include "seqot/tensor.hpp"

namespace seqot::ot {

// Weighted point cloud. Masses are strictly positive and sum to 1 within 1e-12.
struct MassDistribution {
  Tensor points;               // n x d
  std::vector<double> masses;  // length n

  MassDistribution(Tensor pts, std::vector<double> m);
  std::int64_t size() const { return points.shape[0]; }
  std::int64_t dim() const { return points.shape[1]; }

  static MassDistribution uniform(Tensor pts);
};

// Non-negative finite n x n' cost matrix.
struct CostMatrix {
  Tensor c;

  explicit CostMatrix(Tensor m);
  std::int64_t rows() const { return c.shape[0]; }
  std::int64_t cols() const { return c.shape[1]; }
  double at(std::int64_t i, std::int64_t j) const { return c.at(i, j); }
};

struct TransportPlan {
  Tensor plan;  // n x n', row sums = source masses, column sums = target masses
  double achieved_cost = 0.0;
  bool converged = true;
  int iterations = 0;
};

// Entry (i,j) is the L2 distance between row i of A and row j of B.
CostMatrix euclidean_cost(const Tensor& a, const Tensor& b);

// Exact earth mover's distance by network simplex on the transportation
// problem. Marginals of the returned plan match the inputs within 1e-9.
TransportPlan exact_emd(const MassDistribution& mu, const MassDistribution& nu,
                        const CostMatrix& cost);

// Brute force over all n! matchings for uniform masses, n <= 8. By Birkhoff's
// theorem this equals the LP optimum, making it an independent oracle.
double permutation_oracle_emd(const Tensor& a, const Tensor& b);

// Lower bound with the column constraints dropped: each source point ships
// all of its mass to the nearest target point (ties to the lowest index).
double relaxed_smd(const MassDistribution& mu, const MassDistribution& nu,
                   const CostMatrix& cost);

// Entropic regularization, alternating scaling in log-space with an epsilon
// annealing warm start so small epsilon stays stable. achieved_cost is the
// unregularized transport cost of the returned plan.
TransportPlan sinkhorn(const MassDistribution& mu, const MassDistribution& nu,
                       const CostMatrix& cost, double epsilon, int max_iters, double tol);

// Proximal point iteration with kernel exp(-C/beta_step); approaches the
// unregularized optimum as outer iterations grow.
TransportPlan ipot(const MassDistribution& mu, const MassDistribution& nu,
                   const CostMatrix& cost, double beta_step, int inner_iters, int outer_iters);

}  // namespace seqot::ot
