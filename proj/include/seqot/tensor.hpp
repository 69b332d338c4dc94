#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace seqot {

using Shape = std::vector<std::int64_t>;

std::string shape_to_string(const Shape& s);

// Dense row-major float64 tensor. Construction rejects NaN/Inf and any
// shape/data length mismatch.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() : data(1, 0.0) {}
  Tensor(Shape s, std::vector<double> d, bool rg = false);

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v);

  std::int64_t numel() const;
  std::int64_t rows() const;  // 2-d only
  std::int64_t cols() const;  // 2-d only
  bool is_scalar() const { return numel() == 1 && shape.size() <= 1; }
  double item() const;

  double& at(std::int64_t i, std::int64_t j) { return data[i * cols() + j]; }
  double at(std::int64_t i, std::int64_t j) const { return data[i * cols() + j]; }

  void check_finite(const char* where) const;
};

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kMatMul,
  kSoftmax,
  kLogSoftmax,
  kLog,
  kExp,
  kSum,
  kMean,
  kLayerNorm,
  kGelu,
  kEmbeddingLookup,
  kConcat,
  kSlice,
  kEuclideanPairwise,
  kVectorNorm,
  kStopGradient,
};

const char* op_kind_name(OpKind k);

using NodeId = std::int32_t;

// Gradients produced by Tape::backward, keyed by node id. Absent ids mean a
// zero gradient.
class GradientMap {
 public:
  bool has(NodeId id) const;
  const Tensor& at(NodeId id) const;  // throws if absent

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<char> present_;
};

// Extra arguments for the generic forward_op entry point. Only the fields an
// op kind consumes are read.
struct OpArgs {
  std::int64_t axis = -1;            // sum/mean/concat/slice: -1 = all entries
  std::int64_t start = 0, len = 0;   // slice
  bool trans_a = false, trans_b = false;  // matmul
  std::vector<std::int32_t> ids;     // embedding_lookup
};

// Records forward operations and replays them in reverse for gradients.
// Single-owner while recording; node values are immutable once created.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  NodeId leaf(Tensor value);
  NodeId constant(Tensor value);  // leaf with requires_grad forced off

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b, bool trans_a = false, bool trans_b = false);
  NodeId softmax(NodeId x);
  NodeId log_softmax(NodeId x);
  NodeId log(NodeId x);
  NodeId exp(NodeId x);
  NodeId sum(NodeId x, std::int64_t axis = -1);
  NodeId mean(NodeId x, std::int64_t axis = -1);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);
  NodeId gelu(NodeId x);
  NodeId embedding_lookup(NodeId table, const std::vector<std::int32_t>& ids);
  NodeId concat(const std::vector<NodeId>& xs, std::int64_t axis);
  NodeId slice(NodeId x, std::int64_t axis, std::int64_t start, std::int64_t len);
  NodeId euclidean_pairwise(NodeId a, NodeId b);
  NodeId vector_norm(NodeId x);
  NodeId stop_gradient(NodeId x);

  // Generic dispatcher over the fixed op vocabulary.
  NodeId forward_op(OpKind kind, const std::vector<NodeId>& inputs,
                    const OpArgs& args = {});

  GradientMap backward(NodeId loss) const;

  const Tensor& value(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  // Operations that carry a backward rule (at least one input requires grad).
  std::size_t recorded_ops() const { return recorded_ops_; }

 private:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    bool requires_grad = false;
    Tensor value;
    std::vector<NodeId> inputs;
    std::int64_t a0 = 0, a1 = 0, a2 = 0;  // op-specific scalars
    std::vector<std::int32_t> ids;        // embedding rows
    std::vector<double> aux;              // layer_norm row stats
  };

  NodeId push(Node n);
  const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  void check_id(NodeId id) const;

  std::vector<Node> nodes_;
  std::size_t recorded_ops_ = 0;
};

constexpr double kLayerNormEps = 1e-5;

}  // namespace seqot
