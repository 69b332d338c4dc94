#include "seqot/smd.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqot::smd {

namespace {

std::vector<std::int64_t> nonzero_rows(const Tensor& states) {
  if (states.shape.size() != 2)
    throw std::invalid_argument("norm_masses: states must be a matrix, got " +
                                shape_to_string(states.shape));
  std::vector<std::int64_t> keep;
  for (std::int64_t i = 0; i < states.shape[0]; ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < states.shape[1]; ++j)
      acc += states.at(i, j) * states.at(i, j);
    if (acc > 0.0) keep.push_back(i);
  }
  if (keep.empty()) throw std::invalid_argument("norm_masses: every state row has zero norm");
  return keep;
}

// Keeps only the listed rows, as a graph op when any are dropped.
NodeId select_rows(Tape& tape, NodeId states, const std::vector<std::int64_t>& keep) {
  const Tensor& v = tape.value(states);
  if (static_cast<std::int64_t>(keep.size()) == v.shape[0]) return states;
  Tensor sel = Tensor::zeros({static_cast<std::int64_t>(keep.size()), v.shape[0]});
  for (std::size_t k = 0; k < keep.size(); ++k)
    sel.at(static_cast<std::int64_t>(k), keep[k]) = 1.0;
  return tape.matmul(tape.constant(std::move(sel)), states);
}

struct MassNodes {
  NodeId points;
  NodeId masses;
};

MassNodes norm_mass_nodes(Tape& tape, NodeId states) {
  const auto keep = nonzero_rows(tape.value(states));
  NodeId pts = select_rows(tape, states, keep);
  NodeId norms = tape.vector_norm(pts);
  NodeId total = tape.sum(norms, -1);
  // 1/total inside the op vocabulary; total > 0 because zero rows are gone.
  NodeId inv = tape.exp(tape.sub(tape.constant(Tensor::scalar(0.0)), tape.log(total)));
  return {pts, tape.mul(norms, inv)};
}

}  // namespace

ot::MassDistribution norm_masses(const Tensor& states) {
  const auto keep = nonzero_rows(states);
  const std::int64_t d = states.shape[1];
  Tensor pts = Tensor::zeros({static_cast<std::int64_t>(keep.size()), d});
  std::vector<double> masses(keep.size());
  double total = 0.0;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double v = states.at(keep[k], j);
      pts.at(static_cast<std::int64_t>(k), j) = v;
      acc += v * v;
    }
    masses[k] = std::sqrt(acc);
    total += masses[k];
  }
  for (auto& m : masses) m /= total;
  return ot::MassDistribution(std::move(pts), std::move(masses));
}

NodeId directed_relaxed_cost(Tape& tape, NodeId src_points, NodeId src_masses,
                             NodeId dst_points) {
  NodeId dist = tape.euclidean_pairwise(src_points, dst_points);
  const Tensor& dv = tape.value(dist);
  const std::int64_t n = dv.shape[0], m = dv.shape[1];
  Tensor pick = Tensor::zeros({n, m});
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < m; ++j)
      if (dv.at(i, j) < dv.at(i, best)) best = j;
    pick.at(i, best) = 1.0;
  }
  NodeId nearest = tape.sum(tape.mul(dist, tape.constant(std::move(pick))), 1);
  return tape.sum(tape.mul(src_masses, nearest), -1);
}

namespace {

NodeId smd_directed(Tape& tape, NodeId src, NodeId dst) {
  MassNodes src_mass = norm_mass_nodes(tape, src);
  const auto dst_keep = nonzero_rows(tape.value(dst));
  NodeId dst_pts = select_rows(tape, dst, dst_keep);
  return directed_relaxed_cost(tape, src_mass.points, src_mass.masses, dst_pts);
}

}  // namespace

NodeId smd(Tape& tape, NodeId hx, NodeId hy) {
  return smd_directed(tape, hx, tape.stop_gradient(hy));
}

NodeId ot_loss(Tape& tape, NodeId hx, NodeId hy) {
  NodeId hy_det = tape.stop_gradient(hy);
  NodeId forward = smd_directed(tape, hx, hy_det);
  NodeId backward = smd_directed(tape, hy_det, hx);
  return tape.mul(tape.add(forward, backward), tape.constant(Tensor::scalar(0.5)));
}

}  // namespace seqot::smd
