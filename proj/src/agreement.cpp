#include "seqot/agreement.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace seqot::agreement {

TruncatedPair truncate_pair(const std::vector<std::int32_t>& x,
                            const std::vector<std::int32_t>& y) {
  if (x.empty() || y.empty())
    throw std::invalid_argument("truncate_pair: sequences must be non-empty");
  TruncatedPair out;
  out.n_prime = static_cast<std::int64_t>(std::min(x.size(), y.size()));
  out.x.assign(x.begin(), x.begin() + out.n_prime);
  out.y.assign(y.begin(), y.begin() + out.n_prime);
  return out;
}

MixedSample sample_mixup(const std::vector<std::int32_t>& x_trunc,
                         const std::vector<std::int32_t>& y_trunc, std::int32_t tag_x,
                         std::int32_t tag_y, const MixupConfig& cfg, Rng& rng) {
  if (x_trunc.size() != y_trunc.size())
    throw std::invalid_argument("sample_mixup: sequences must have equal length");
  if (x_trunc.empty()) throw std::invalid_argument("sample_mixup: empty sequences");
  if (cfg.alpha <= 0.0 || cfg.beta <= 0.0)
    throw std::invalid_argument("sample_mixup: alpha and beta must be positive");

  MixedSample out;
  out.n_prime = static_cast<std::int64_t>(x_trunc.size());
  out.lambda = rng.beta(cfg.alpha, cfg.beta);
  out.gate.resize(x_trunc.size());
  out.z.resize(x_trunc.size());
  for (std::size_t k = 0; k < x_trunc.size(); ++k) {
    out.gate[k] = rng.bernoulli(out.lambda) ? 1 : 0;
    out.z[k] = out.gate[k] ? x_trunc[k] : y_trunc[k];
  }
  switch (cfg.tag_source) {
    case TagSource::kAlwaysX: out.language_tag = tag_x; break;
    case TagSource::kAlwaysY: out.language_tag = tag_y; break;
    case TagSource::kUniformRandom:
      out.language_tag = rng.bernoulli(0.5) ? tag_x : tag_y;
      break;
  }
  return out;
}

namespace {

// max(p, floor) assembled from a constant mask so the clamp has the usual
// zero subgradient on clamped entries.
NodeId floor_probs(Tape& tape, NodeId p) {
  const Tensor& v = tape.value(p);
  Tensor mask = Tensor::zeros(v.shape);
  Tensor fill = Tensor::zeros(v.shape);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (v.data[i] >= kProbFloor)
      mask.data[i] = 1.0;
    else
      fill.data[i] = kProbFloor;
  }
  return tape.add(tape.mul(p, tape.constant(std::move(mask))), tape.constant(std::move(fill)));
}

void check_rows_normalized(const Tensor& p, const char* side) {
  if (p.shape.size() != 2)
    throw std::invalid_argument(std::string("agreement_kl: ") + side +
                                " must be a matrix of row distributions, got " +
                                shape_to_string(p.shape));
  for (std::int64_t i = 0; i < p.shape[0]; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < p.shape[1]; ++j) {
      const double v = p.at(i, j);
      if (v < 0.0)
        throw std::invalid_argument(std::string("agreement_kl: ") + side +
                                    " has a negative probability");
      s += v;
    }
    if (std::abs(s - 1.0) > kRowSumTol)
      throw std::invalid_argument(std::string("agreement_kl: ") + side + " row " +
                                  std::to_string(i) + " sums to " + std::to_string(s));
  }
}

}  // namespace

NodeId agreement_kl(Tape& tape, NodeId px, NodeId py) {
  const Tensor& vx = tape.value(px);
  const Tensor& vy = tape.value(py);
  check_rows_normalized(vx, "px");
  check_rows_normalized(vy, "py");
  if (vx.shape != vy.shape)
    throw std::invalid_argument("agreement_kl: shape mismatch " + shape_to_string(vx.shape) +
                                " vs " + shape_to_string(vy.shape));
  const std::int64_t n_prime = vx.shape[0];

  NodeId qx = floor_probs(tape, px);
  NodeId qy = floor_probs(tape, py);
  NodeId lx = tape.log(qx);
  NodeId ly = tape.log(qy);
  NodeId kl_xy = tape.sum(tape.mul(qx, tape.sub(lx, ly)), -1);
  NodeId kl_yx = tape.sum(tape.mul(qy, tape.sub(ly, lx)), -1);
  NodeId scale = tape.constant(Tensor::scalar(1.0 / (2.0 * static_cast<double>(n_prime))));
  return tape.mul(tape.add(kl_xy, kl_yx), scale);
}

}  // namespace seqot::agreement
