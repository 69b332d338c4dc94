// Differentiable state mover's distance: encoder state rows become a weighted
// point cloud (mass = normalized row norm) and the relaxed transport cost is
// assembled from tape ops so gradients reach both the points and the masses.
#pragma once

#include <cstdint>

#include "seqot/ot.hpp"
#include "seqot/tensor.hpp"

namespace seqot::smd {

// Encoder output for one sentence, one row per position (language-id position
// included when the caller keeps it).
struct StateSequence {
  NodeId states;  // n x d node on the caller's tape
  std::int32_t language = -1;
};

// Value-level view used by oracles and validation: masses from row norms,
// zero-norm rows dropped. Throws when every row is zero.
ot::MassDistribution norm_masses(const Tensor& states);

// One-directional relaxed transport: each source row ships all of its mass to
// the nearest destination row. The argmin is frozen from the forward values
// (ties to the lowest index) so the selection is a constant under the tape.
NodeId directed_relaxed_cost(Tape& tape, NodeId src_points, NodeId src_masses,
                             NodeId dst_points);

// Relaxed SMD from hx toward hy with norm-derived masses on the hx side and
// hy detached; gradient reaches hx through points and masses alike.
NodeId smd(Tape& tape, NodeId hx, NodeId hy);

// Symmetrized loss: (smd(hx -> hy) + smd(hy -> hx)) / 2. hy is detached in
// both terms, so the encoder receives gradient only through hx.
NodeId ot_loss(Tape& tape, NodeId hx, NodeId hy);

}  // namespace seqot::smd
