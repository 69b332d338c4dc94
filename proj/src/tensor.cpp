#include "seqot/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace seqot {

namespace {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

std::string op_shapes(const char* op, const Shape& a) {
  return std::string(op) + ": unsupported shape " + shape_to_string(a);
}

std::string op_shapes(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
         shape_to_string(b);
}

// Elementwise broadcast layout for add/sub/mul.
enum BcMode : std::int64_t { kSame = 0, kScalarB = 1, kScalarA = 2, kRowB = 3 };

bool is_scalar_shape(const Shape& s) { return shape_numel(s) == 1 && s.size() <= 1; }

}  // namespace

std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ' ';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
  for (auto dim : shape)
    require(dim > 0, "tensor: dimension sizes must be positive, got " + shape_to_string(shape));
  require(static_cast<std::int64_t>(data.size()) == shape_numel(shape),
          "tensor: data length " + std::to_string(data.size()) + " does not match shape " +
              shape_to_string(shape));
  check_finite("tensor");
}

Tensor Tensor::zeros(Shape s) {
  std::int64_t n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Tensor Tensor::full(Shape s, double v) {
  std::int64_t n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

std::int64_t Tensor::numel() const { return shape_numel(shape); }

std::int64_t Tensor::rows() const {
  require(shape.size() == 2, "tensor: rows() requires rank 2, got " + shape_to_string(shape));
  return shape[0];
}

std::int64_t Tensor::cols() const {
  require(shape.size() == 2, "tensor: cols() requires rank 2, got " + shape_to_string(shape));
  return shape[1];
}

double Tensor::item() const {
  require(numel() == 1, "tensor: item() requires a single element, got " + shape_to_string(shape));
  return data[0];
}

void Tensor::check_finite(const char* where) const {
  for (double v : data)
    if (!std::isfinite(v))
      fail(std::string(where) + ": non-finite value encountered");
}

const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kGelu: return "gelu";
    case OpKind::kEmbeddingLookup: return "embedding_lookup";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kEuclideanPairwise: return "euclidean_pairwise";
    case OpKind::kVectorNorm: return "vector_norm";
    case OpKind::kStopGradient: return "stop_gradient";
  }
  return "?";
}

bool GradientMap::has(NodeId id) const {
  return id >= 0 && static_cast<std::size_t>(id) < present_.size() && present_[id];
}

const Tensor& GradientMap::at(NodeId id) const {
  if (!has(id)) fail("gradient map: no gradient recorded for node " + std::to_string(id));
  return grads_[static_cast<std::size_t>(id)];
}

void Tape::check_id(NodeId id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < nodes_.size(),
          "tape: invalid node id " + std::to_string(id));
}

NodeId Tape::push(Node n) {
  for (NodeId in : n.inputs) check_id(in);
  if (n.kind != OpKind::kLeaf && n.requires_grad) ++recorded_ops_;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor value) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.requires_grad = value.requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::constant(Tensor value) {
  value.requires_grad = false;
  return leaf(std::move(value));
}

const Tensor& Tape::value(NodeId id) const {
  check_id(id);
  return nodes_[static_cast<std::size_t>(id)].value;
}

// ---------------------------------------------------------------------------
// Matmul kernels. C = op(A) * op(B) with op(A) m x k, op(B) k x n.

namespace {

void mm_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
           std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void mm_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
           std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

void mm_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
           std::int64_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::int64_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const double av = ap[i];
      double* ci = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void mm_dispatch(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                 std::int64_t n, bool ta, bool tb) {
  if (!ta && !tb) {
    mm_nn(a, b, c, m, k, n);
  } else if (!ta && tb) {
    mm_nt(a, b, c, m, k, n);
  } else if (ta && !tb) {
    mm_tn(a, b, c, m, k, n);
  } else {
    // C = A^T B^T = (B A)^T via a temporary.
    std::vector<double> t(static_cast<std::size_t>(n * m));
    mm_nn(b, a, t.data(), n, k, m);
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) c[i * n + j] = t[j * m + i];
  }
}

double row_max(const double* x, std::int64_t n) {
  double m = x[0];
  for (std::int64_t j = 1; j < n; ++j) m = std::max(m, x[j]);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward ops

NodeId Tape::add(NodeId a, NodeId b) { return forward_op(OpKind::kAdd, {a, b}); }
NodeId Tape::sub(NodeId a, NodeId b) { return forward_op(OpKind::kSub, {a, b}); }
NodeId Tape::mul(NodeId a, NodeId b) { return forward_op(OpKind::kMul, {a, b}); }

NodeId Tape::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
  OpArgs args;
  args.trans_a = trans_a;
  args.trans_b = trans_b;
  return forward_op(OpKind::kMatMul, {a, b}, args);
}

NodeId Tape::softmax(NodeId x) { return forward_op(OpKind::kSoftmax, {x}); }
NodeId Tape::log_softmax(NodeId x) { return forward_op(OpKind::kLogSoftmax, {x}); }
NodeId Tape::log(NodeId x) { return forward_op(OpKind::kLog, {x}); }
NodeId Tape::exp(NodeId x) { return forward_op(OpKind::kExp, {x}); }

NodeId Tape::sum(NodeId x, std::int64_t axis) {
  OpArgs args;
  args.axis = axis;
  return forward_op(OpKind::kSum, {x}, args);
}

NodeId Tape::mean(NodeId x, std::int64_t axis) {
  OpArgs args;
  args.axis = axis;
  return forward_op(OpKind::kMean, {x}, args);
}

NodeId Tape::layer_norm(NodeId x, NodeId gain, NodeId bias) {
  return forward_op(OpKind::kLayerNorm, {x, gain, bias});
}

NodeId Tape::gelu(NodeId x) { return forward_op(OpKind::kGelu, {x}); }

NodeId Tape::embedding_lookup(NodeId table, const std::vector<std::int32_t>& ids) {
  OpArgs args;
  args.ids = ids;
  return forward_op(OpKind::kEmbeddingLookup, {table}, args);
}

NodeId Tape::concat(const std::vector<NodeId>& xs, std::int64_t axis) {
  OpArgs args;
  args.axis = axis;
  return forward_op(OpKind::kConcat, xs, args);
}

NodeId Tape::slice(NodeId x, std::int64_t axis, std::int64_t start, std::int64_t len) {
  OpArgs args;
  args.axis = axis;
  args.start = start;
  args.len = len;
  return forward_op(OpKind::kSlice, {x}, args);
}

NodeId Tape::euclidean_pairwise(NodeId a, NodeId b) {
  return forward_op(OpKind::kEuclideanPairwise, {a, b});
}

NodeId Tape::vector_norm(NodeId x) { return forward_op(OpKind::kVectorNorm, {x}); }
NodeId Tape::stop_gradient(NodeId x) { return forward_op(OpKind::kStopGradient, {x}); }

NodeId Tape::forward_op(OpKind kind, const std::vector<NodeId>& inputs, const OpArgs& args) {
  const char* name = op_kind_name(kind);
  for (NodeId id : inputs) check_id(id);

  Node n;
  n.kind = kind;
  n.inputs = inputs;
  for (NodeId id : inputs) n.requires_grad = n.requires_grad || node(id).requires_grad;

  auto arity = [&](std::size_t want) {
    require(inputs.size() == want, std::string(name) + ": expected " + std::to_string(want) +
                                       " inputs, got " + std::to_string(inputs.size()));
  };

  switch (kind) {
    case OpKind::kLeaf:
      fail("forward_op: leaf is not an operation");

    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      arity(2);
      const Tensor& A = node(inputs[0]).value;
      const Tensor& B = node(inputs[1]).value;
      BcMode mode;
      if (A.shape == B.shape) {
        mode = kSame;
      } else if (is_scalar_shape(B.shape)) {
        mode = kScalarB;
      } else if (is_scalar_shape(A.shape)) {
        mode = kScalarA;
      } else if (A.shape.size() == 2 && B.shape.size() == 1 && B.shape[0] == A.shape[1]) {
        mode = kRowB;
      } else {
        fail(op_shapes(name, A.shape, B.shape));
      }
      n.a0 = mode;
      const Tensor& big = (mode == kScalarA) ? B : A;
      std::vector<double> out(big.data.size());
      const std::int64_t total = big.numel();
      auto apply = [&](double x, double y) {
        switch (kind) {
          case OpKind::kAdd: return x + y;
          case OpKind::kSub: return x - y;
          default: return x * y;
        }
      };
      if (mode == kSame) {
        for (std::int64_t i = 0; i < total; ++i) out[i] = apply(A.data[i], B.data[i]);
      } else if (mode == kScalarB) {
        const double s = B.data[0];
        for (std::int64_t i = 0; i < total; ++i) out[i] = apply(A.data[i], s);
      } else if (mode == kScalarA) {
        const double s = A.data[0];
        for (std::int64_t i = 0; i < total; ++i) out[i] = apply(s, B.data[i]);
      } else {  // kRowB
        const std::int64_t m = A.shape[1];
        for (std::int64_t i = 0; i < A.shape[0]; ++i)
          for (std::int64_t j = 0; j < m; ++j)
            out[i * m + j] = apply(A.data[i * m + j], B.data[j]);
      }
      n.value = Tensor(big.shape, std::move(out));
      break;
    }

    case OpKind::kMatMul: {
      arity(2);
      const Tensor& A = node(inputs[0]).value;
      const Tensor& B = node(inputs[1]).value;
      require(A.shape.size() == 2 && B.shape.size() == 2, op_shapes(name, A.shape, B.shape));
      const bool ta = args.trans_a, tb = args.trans_b;
      const std::int64_t m = ta ? A.shape[1] : A.shape[0];
      const std::int64_t k = ta ? A.shape[0] : A.shape[1];
      const std::int64_t kb = tb ? B.shape[1] : B.shape[0];
      const std::int64_t nn = tb ? B.shape[0] : B.shape[1];
      require(k == kb, op_shapes(name, A.shape, B.shape));
      n.a0 = ta;
      n.a1 = tb;
      std::vector<double> out(static_cast<std::size_t>(m * nn));
      mm_dispatch(A.data.data(), B.data.data(), out.data(), m, k, nn, ta, tb);
      n.value = Tensor({m, nn}, std::move(out));
      break;
    }

    case OpKind::kSoftmax:
    case OpKind::kLogSoftmax: {
      arity(1);
      const Tensor& X = node(inputs[0]).value;
      require(X.shape.size() == 1 || X.shape.size() == 2, op_shapes(name, X.shape));
      const std::int64_t rows = X.shape.size() == 2 ? X.shape[0] : 1;
      const std::int64_t cols = X.shape.size() == 2 ? X.shape[1] : X.shape[0];
      std::vector<double> out(X.data.size());
      for (std::int64_t i = 0; i < rows; ++i) {
        const double* xi = X.data.data() + i * cols;
        double* oi = out.data() + i * cols;
        const double mx = row_max(xi, cols);
        double z = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
          oi[j] = std::exp(xi[j] - mx);
          z += oi[j];
        }
        if (kind == OpKind::kSoftmax) {
          const double inv = 1.0 / z;
          for (std::int64_t j = 0; j < cols; ++j) oi[j] *= inv;
        } else {
          const double lz = std::log(z);
          for (std::int64_t j = 0; j < cols; ++j) oi[j] = xi[j] - mx - lz;
        }
      }
      n.value = Tensor(X.shape, std::move(out));
      break;
    }

    case OpKind::kLog: {
      arity(1);
      const Tensor& X = node(inputs[0]).value;
      std::vector<double> out(X.data.size());
      for (std::size_t i = 0; i < X.data.size(); ++i) {
        require(X.data[i] > 0.0, "log: input must be strictly positive");
        out[i] = std::log(X.data[i]);
      }
      n.value = Tensor(X.shape, std::move(out));
      break;
    }

    case OpKind::kExp: {
      arity(1);
      const Tensor& X = node(inputs[0]).value;
      std::vector<double> out(X.data.size());
      for (std::size_t i = 0; i < X.data.size(); ++i) out[i] = std::exp(X.data[i]);
      n.value = Tensor(X.shape, std::move(out));
      break;
    }

    case OpKind::kSum:
    case OpKind::kMean: {
      arity(1);
      const Tensor& X = node(inputs[0]).value;
      const std::int64_t axis = args.axis;
      n.a0 = axis;
      if (axis < 0) {
        double acc = 0.0;
        for (double v : X.data) acc += v;
        if (kind == OpKind::kMean) acc /= static_cast<double>(X.numel());
        n.value = Tensor::scalar(acc);
      } else {
        require(X.shape.size() == 2 && axis <= 1,
                std::string(name) + ": axis " + std::to_string(axis) + " invalid for shape " +
                    shape_to_string(X.shape));
        const std::int64_t r = X.shape[0], c = X.shape[1];
        if (axis == 0) {
          std::vector<double> out(static_cast<std::size_t>(c), 0.0);
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < c; ++j) out[j] += X.data[i * c + j];
          if (kind == OpKind::kMean)
            for (auto& v : out) v /= static_cast<double>(r);
          n.value = Tensor({c}, std::move(out));
        } else {
          std::vector<double> out(static_cast<std::size_t>(r), 0.0);
          for (std::int64_t i = 0; i < r; ++i) {
            double acc = 0.0;
            for (std::int64_t j = 0; j < c; ++j) acc += X.data[i * c + j];
            out[i] = (kind == OpKind::kMean) ? acc / static_cast<double>(c) : acc;
          }
          n.value = Tensor({r}, std::move(out));
        }
      }
      break;
    }

    case OpKind::kLayerNorm: {
      arity(3);
      const Tensor& X = node(inputs[0]).value;
      const Tensor& G = node(inputs[1]).value;
      const Tensor& B = node(inputs[2]).value;
      require(X.shape.size() == 2, op_shapes(name, X.shape));
      const std::int64_t r = X.shape[0], c = X.shape[1];
      require(G.shape.size() == 1 && G.shape[0] == c, op_shapes(name, X.shape, G.shape));
      require(B.shape.size() == 1 && B.shape[0] == c, op_shapes(name, X.shape, B.shape));
      std::vector<double> out(X.data.size());
      n.aux.resize(static_cast<std::size_t>(2 * r));
      for (std::int64_t i = 0; i < r; ++i) {
        const double* xi = X.data.data() + i * c;
        double mu = 0.0;
        for (std::int64_t j = 0; j < c; ++j) mu += xi[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::int64_t j = 0; j < c; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<double>(c);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        n.aux[2 * i] = mu;
        n.aux[2 * i + 1] = rstd;
        double* oi = out.data() + i * c;
        for (std::int64_t j = 0; j < c; ++j)
          oi[j] = (xi[j] - mu) * rstd * G.data[j] + B.data[j];
      }
      n.value = Tensor(X.shape, std::move(out));
      break;
    }

    case OpKind::kGelu: {
      arity(1);
      const Tensor& X = node(inputs[0]).value;
      std::vector<double> out(X.data.size());
      for (std::size_t i = 0; i < X.data.size(); ++i) {
        const double x = X.data[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
      }
      n.value = Tensor(X.shape, std::move(out));
      break;
    }

    case OpKind::kEmbeddingLookup: {
      arity(1);
      const Tensor& T = node(inputs[0]).value;
      require(T.shape.size() == 2, op_shapes(name, T.shape));
      require(!args.ids.empty(), std::string(name) + ": empty id list");
      const std::int64_t v = T.shape[0], d = T.shape[1];
      std::vector<double> out(args.ids.size() * static_cast<std::size_t>(d));
      for (std::size_t i = 0; i < args.ids.size(); ++i) {
        const std::int32_t id = args.ids[i];
        require(id >= 0 && id < v, std::string(name) + ": id " + std::to_string(id) +
                                       " out of range for table " + shape_to_string(T.shape));
        std::copy_n(T.data.data() + id * d, d, out.data() + static_cast<std::int64_t>(i) * d);
      }
      n.ids = args.ids;
      n.value = Tensor({static_cast<std::int64_t>(args.ids.size()), d}, std::move(out));
      break;
    }

    case OpKind::kConcat: {
      require(!inputs.empty(), "concat: needs at least one input");
      const std::int64_t axis = args.axis;
      n.a0 = axis;
      const Shape& first = node(inputs[0]).value.shape;
      if (first.size() == 1) {
        require(axis == 0, "concat: axis " + std::to_string(axis) + " invalid for rank-1 input");
        std::vector<double> out;
        for (NodeId id : inputs) {
          const Tensor& X = node(id).value;
          require(X.shape.size() == 1, op_shapes(name, first, X.shape));
          out.insert(out.end(), X.data.begin(), X.data.end());
        }
        n.value = Tensor({static_cast<std::int64_t>(out.size())}, std::move(out));
      } else {
        require(first.size() == 2 && (axis == 0 || axis == 1), op_shapes(name, first));
        std::int64_t rows = 0, cols = 0;
        if (axis == 0) {
          cols = first[1];
          for (NodeId id : inputs) {
            const Tensor& X = node(id).value;
            require(X.shape.size() == 2 && X.shape[1] == cols, op_shapes(name, first, X.shape));
            rows += X.shape[0];
          }
          std::vector<double> out;
          out.reserve(static_cast<std::size_t>(rows * cols));
          for (NodeId id : inputs) {
            const Tensor& X = node(id).value;
            out.insert(out.end(), X.data.begin(), X.data.end());
          }
          n.value = Tensor({rows, cols}, std::move(out));
        } else {
          rows = first[0];
          for (NodeId id : inputs) {
            const Tensor& X = node(id).value;
            require(X.shape.size() == 2 && X.shape[0] == rows, op_shapes(name, first, X.shape));
            cols += X.shape[1];
          }
          std::vector<double> out(static_cast<std::size_t>(rows * cols));
          std::int64_t off = 0;
          for (NodeId id : inputs) {
            const Tensor& X = node(id).value;
            const std::int64_t c = X.shape[1];
            for (std::int64_t i = 0; i < rows; ++i)
              std::copy_n(X.data.data() + i * c, c, out.data() + i * cols + off);
            off += c;
          }
          n.value = Tensor({rows, cols}, std::move(out));
        }
      }
      break;
    }

    case OpKind::kSlice: {
      arity(1);
      const Tensor& X = node(inputs[0]).value;
      const std::int64_t axis = args.axis, start = args.start, len = args.len;
      n.a0 = axis;
      n.a1 = start;
      n.a2 = len;
      require(len > 0, "slice: length must be positive");
      if (X.shape.size() == 1) {
        require(axis == 0 && start >= 0 && start + len <= X.shape[0],
                "slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                    ") out of bounds for " + shape_to_string(X.shape));
        std::vector<double> out(X.data.begin() + start, X.data.begin() + start + len);
        n.value = Tensor({len}, std::move(out));
      } else {
        require(X.shape.size() == 2 && (axis == 0 || axis == 1), op_shapes(name, X.shape));
        const std::int64_t r = X.shape[0], c = X.shape[1];
        const std::int64_t lim = (axis == 0) ? r : c;
        require(start >= 0 && start + len <= lim,
                "slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                    ") out of bounds for " + shape_to_string(X.shape));
        if (axis == 0) {
          std::vector<double> out(X.data.begin() + start * c, X.data.begin() + (start + len) * c);
          n.value = Tensor({len, c}, std::move(out));
        } else {
          std::vector<double> out(static_cast<std::size_t>(r * len));
          for (std::int64_t i = 0; i < r; ++i)
            std::copy_n(X.data.data() + i * c + start, len, out.data() + i * len);
          n.value = Tensor({r, len}, std::move(out));
        }
      }
      break;
    }

    case OpKind::kEuclideanPairwise: {
      arity(2);
      const Tensor& A = node(inputs[0]).value;
      const Tensor& B = node(inputs[1]).value;
      require(A.shape.size() == 2 && B.shape.size() == 2 && A.shape[1] == B.shape[1],
              op_shapes(name, A.shape, B.shape));
      const std::int64_t na = A.shape[0], nb = B.shape[0], d = A.shape[1];
      std::vector<double> out(static_cast<std::size_t>(na * nb));
      for (std::int64_t i = 0; i < na; ++i) {
        const double* ai = A.data.data() + i * d;
        for (std::int64_t j = 0; j < nb; ++j) {
          const double* bj = B.data.data() + j * d;
          double acc = 0.0;
          for (std::int64_t p = 0; p < d; ++p) {
            const double t = ai[p] - bj[p];
            acc += t * t;
          }
          out[i * nb + j] = std::sqrt(acc);
        }
      }
      n.value = Tensor({na, nb}, std::move(out));
      break;
    }

    case OpKind::kVectorNorm: {
      arity(1);
      const Tensor& X = node(inputs[0]).value;
      require(X.shape.size() == 1 || X.shape.size() == 2, op_shapes(name, X.shape));
      if (X.shape.size() == 1) {
        double acc = 0.0;
        for (double v : X.data) acc += v * v;
        n.value = Tensor::scalar(std::sqrt(acc));
      } else {
        const std::int64_t r = X.shape[0], c = X.shape[1];
        std::vector<double> out(static_cast<std::size_t>(r));
        for (std::int64_t i = 0; i < r; ++i) {
          double acc = 0.0;
          const double* xi = X.data.data() + i * c;
          for (std::int64_t j = 0; j < c; ++j) acc += xi[j] * xi[j];
          out[i] = std::sqrt(acc);
        }
        n.value = Tensor({r}, std::move(out));
      }
      break;
    }

    case OpKind::kStopGradient: {
      arity(1);
      n.value = node(inputs[0]).value;
      n.value.requires_grad = false;
      n.requires_grad = false;
      break;
    }
  }

  n.value.requires_grad = n.requires_grad;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Backward

namespace {

struct GradBuf {
  std::vector<Tensor> g;
  std::vector<char> has;

  explicit GradBuf(std::size_t n) : g(n), has(n, 0) {}

  // First contribution moves in; later ones accumulate elementwise.
  void add(NodeId id, Tensor t) {
    auto i = static_cast<std::size_t>(id);
    if (!has[i]) {
      g[i] = std::move(t);
      has[i] = 1;
    } else {
      double* dst = g[i].data.data();
      const double* src = t.data.data();
      for (std::size_t p = 0; p < t.data.size(); ++p) dst[p] += src[p];
    }
  }
};

}  // namespace

GradientMap Tape::backward(NodeId loss) const {
  check_id(loss);
  const Node& ln = node(loss);
  require(ln.value.numel() == 1 && ln.value.shape.size() <= 1,
          "backward: loss must be scalar, got " + shape_to_string(ln.value.shape));

  GradBuf buf(nodes_.size());
  std::vector<char> needed(nodes_.size(), 0);
  if (ln.requires_grad) {
    needed[static_cast<std::size_t>(loss)] = 1;
    buf.add(loss, Tensor::full(ln.value.shape, 1.0));
  }

  for (NodeId i = loss; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    if (!needed[idx]) continue;
    const Node& nd = nodes_[idx];
    if (nd.kind == OpKind::kLeaf || nd.kind == OpKind::kStopGradient) continue;
    const Tensor& g = buf.g[idx];

    auto want = [&](int slot) {
      const Node& in = node(nd.inputs[static_cast<std::size_t>(slot)]);
      return in.requires_grad;
    };
    auto emit = [&](int slot, Tensor t) {
      const NodeId id = nd.inputs[static_cast<std::size_t>(slot)];
      needed[static_cast<std::size_t>(id)] = 1;
      buf.add(id, std::move(t));
    };

    switch (nd.kind) {
      case OpKind::kAdd:
      case OpKind::kSub:
      case OpKind::kMul: {
        const Tensor& A = node(nd.inputs[0]).value;
        const Tensor& B = node(nd.inputs[1]).value;
        const auto mode = static_cast<BcMode>(nd.a0);
        const double sign = (nd.kind == OpKind::kSub) ? -1.0 : 1.0;
        auto factor_a = [&](std::int64_t i2) {
          // d(out)/dA at flat index i2 of the broadcast output.
          if (nd.kind != OpKind::kMul) return 1.0;
          if (mode == kScalarB) return B.data[0];
          if (mode == kScalarA) return B.data[i2];
          if (mode == kRowB) return B.data[i2 % B.shape[0]];
          return B.data[i2];
        };
        auto factor_b = [&](std::int64_t i2) {
          if (nd.kind != OpKind::kMul) return 1.0;
          if (mode == kScalarA) return A.data[0];
          return A.data[i2];
        };
        const std::int64_t total = g.numel();
        if (want(0)) {
          if (mode == kScalarA) {
            double acc = 0.0;
            for (std::int64_t p = 0; p < total; ++p) acc += g.data[p] * factor_a(p);
            emit(0, Tensor(A.shape, {acc}));
          } else {
            std::vector<double> ga(g.data.size());
            for (std::int64_t p = 0; p < total; ++p) ga[p] = g.data[p] * factor_a(p);
            emit(0, Tensor(A.shape, std::move(ga)));
          }
        }
        if (want(1)) {
          if (mode == kSame) {
            std::vector<double> gb(g.data.size());
            for (std::int64_t p = 0; p < total; ++p) gb[p] = sign * g.data[p] * factor_b(p);
            emit(1, Tensor(B.shape, std::move(gb)));
          } else if (mode == kScalarB) {
            double acc = 0.0;
            for (std::int64_t p = 0; p < total; ++p) acc += g.data[p] * factor_b(p);
            emit(1, Tensor(B.shape, {sign * acc}));
          } else if (mode == kScalarA) {
            std::vector<double> gb(g.data.size());
            for (std::int64_t p = 0; p < total; ++p) gb[p] = sign * g.data[p] * factor_b(p);
            emit(1, Tensor(B.shape, std::move(gb)));
          } else {  // kRowB: column-sum
            const std::int64_t m = B.shape[0];
            std::vector<double> gb(static_cast<std::size_t>(m), 0.0);
            for (std::int64_t p = 0; p < total; ++p) gb[p % m] += sign * g.data[p] * factor_b(p);
            emit(1, Tensor(B.shape, std::move(gb)));
          }
        }
        break;
      }

      case OpKind::kMatMul: {
        const Tensor& A = node(nd.inputs[0]).value;
        const Tensor& B = node(nd.inputs[1]).value;
        const bool ta = nd.a0 != 0, tb = nd.a1 != 0;
        const std::int64_t m = g.shape[0], nn = g.shape[1];
        const std::int64_t k = ta ? A.shape[0] : A.shape[1];
        if (want(0)) {
          std::vector<double> ga(A.data.size());
          if (!ta) {
            // dA = g * op(B)^T : (m x n)(n x k)
            mm_dispatch(g.data.data(), B.data.data(), ga.data(), m, nn, k, false, !tb);
          } else {
            // dA = op(B) * g^T : (k x n)(n x m)
            mm_dispatch(B.data.data(), g.data.data(), ga.data(), k, nn, m, tb, true);
          }
          emit(0, Tensor(A.shape, std::move(ga)));
        }
        if (want(1)) {
          std::vector<double> gb(B.data.size());
          if (!tb) {
            // dB = op(A)^T * g : (k x m)(m x n)
            mm_dispatch(A.data.data(), g.data.data(), gb.data(), k, m, nn, !ta, false);
          } else {
            // dB = g^T * op(A) : (n x m)(m x k)
            mm_dispatch(g.data.data(), A.data.data(), gb.data(), nn, m, k, true, ta);
          }
          emit(1, Tensor(B.shape, std::move(gb)));
        }
        break;
      }

      case OpKind::kSoftmax: {
        if (!want(0)) break;
        const Tensor& Y = nd.value;
        const std::int64_t rows = Y.shape.size() == 2 ? Y.shape[0] : 1;
        const std::int64_t cols = Y.shape.size() == 2 ? Y.shape[1] : Y.shape[0];
        std::vector<double> gx(Y.data.size());
        for (std::int64_t i = 0; i < rows; ++i) {
          const double* yi = Y.data.data() + i * cols;
          const double* gi = g.data.data() + i * cols;
          double dot = 0.0;
          for (std::int64_t j = 0; j < cols; ++j) dot += yi[j] * gi[j];
          for (std::int64_t j = 0; j < cols; ++j) gx[i * cols + j] = yi[j] * (gi[j] - dot);
        }
        emit(0, Tensor(Y.shape, std::move(gx)));
        break;
      }

      case OpKind::kLogSoftmax: {
        if (!want(0)) break;
        const Tensor& Y = nd.value;
        const std::int64_t rows = Y.shape.size() == 2 ? Y.shape[0] : 1;
        const std::int64_t cols = Y.shape.size() == 2 ? Y.shape[1] : Y.shape[0];
        std::vector<double> gx(Y.data.size());
        for (std::int64_t i = 0; i < rows; ++i) {
          const double* yi = Y.data.data() + i * cols;
          const double* gi = g.data.data() + i * cols;
          double s = 0.0;
          for (std::int64_t j = 0; j < cols; ++j) s += gi[j];
          for (std::int64_t j = 0; j < cols; ++j)
            gx[i * cols + j] = gi[j] - std::exp(yi[j]) * s;
        }
        emit(0, Tensor(Y.shape, std::move(gx)));
        break;
      }

      case OpKind::kLog: {
        if (!want(0)) break;
        const Tensor& X = node(nd.inputs[0]).value;
        std::vector<double> gx(X.data.size());
        for (std::size_t p = 0; p < X.data.size(); ++p) gx[p] = g.data[p] / X.data[p];
        emit(0, Tensor(X.shape, std::move(gx)));
        break;
      }

      case OpKind::kExp: {
        if (!want(0)) break;
        const Tensor& Y = nd.value;
        std::vector<double> gx(Y.data.size());
        for (std::size_t p = 0; p < Y.data.size(); ++p) gx[p] = g.data[p] * Y.data[p];
        emit(0, Tensor(Y.shape, std::move(gx)));
        break;
      }

      case OpKind::kSum:
      case OpKind::kMean: {
        if (!want(0)) break;
        const Tensor& X = node(nd.inputs[0]).value;
        const std::int64_t axis = nd.a0;
        std::vector<double> gx(X.data.size());
        if (axis < 0) {
          const double s =
              g.data[0] / (nd.kind == OpKind::kMean ? static_cast<double>(X.numel()) : 1.0);
          std::fill(gx.begin(), gx.end(), s);
        } else {
          const std::int64_t r = X.shape[0], c = X.shape[1];
          if (axis == 0) {
            const double denom = (nd.kind == OpKind::kMean) ? static_cast<double>(r) : 1.0;
            for (std::int64_t i = 0; i < r; ++i)
              for (std::int64_t j = 0; j < c; ++j) gx[i * c + j] = g.data[j] / denom;
          } else {
            const double denom = (nd.kind == OpKind::kMean) ? static_cast<double>(c) : 1.0;
            for (std::int64_t i = 0; i < r; ++i)
              for (std::int64_t j = 0; j < c; ++j) gx[i * c + j] = g.data[i] / denom;
          }
        }
        emit(0, Tensor(X.shape, std::move(gx)));
        break;
      }

      case OpKind::kLayerNorm: {
        const Tensor& X = node(nd.inputs[0]).value;
        const Tensor& G = node(nd.inputs[1]).value;
        const std::int64_t r = X.shape[0], c = X.shape[1];
        std::vector<double> gx(want(0) ? X.data.size() : 0);
        std::vector<double> gg(want(1) ? static_cast<std::size_t>(c) : 0, 0.0);
        std::vector<double> gb(want(2) ? static_cast<std::size_t>(c) : 0, 0.0);
        std::vector<double> xhat(static_cast<std::size_t>(c));
        for (std::int64_t i = 0; i < r; ++i) {
          const double mu = nd.aux[2 * i];
          const double rstd = nd.aux[2 * i + 1];
          const double* xi = X.data.data() + i * c;
          const double* gi = g.data.data() + i * c;
          for (std::int64_t j = 0; j < c; ++j) xhat[j] = (xi[j] - mu) * rstd;
          if (want(1))
            for (std::int64_t j = 0; j < c; ++j) gg[j] += gi[j] * xhat[j];
          if (want(2))
            for (std::int64_t j = 0; j < c; ++j) gb[j] += gi[j];
          if (want(0)) {
            double mean_gy = 0.0, mean_gy_xhat = 0.0;
            for (std::int64_t j = 0; j < c; ++j) {
              const double gy = gi[j] * G.data[j];
              mean_gy += gy;
              mean_gy_xhat += gy * xhat[j];
            }
            mean_gy /= static_cast<double>(c);
            mean_gy_xhat /= static_cast<double>(c);
            for (std::int64_t j = 0; j < c; ++j) {
              const double gy = gi[j] * G.data[j];
              gx[i * c + j] = rstd * (gy - mean_gy - xhat[j] * mean_gy_xhat);
            }
          }
        }
        if (want(0)) emit(0, Tensor(X.shape, std::move(gx)));
        if (want(1)) emit(1, Tensor(G.shape, std::move(gg)));
        if (want(2)) emit(2, Tensor(node(nd.inputs[2]).value.shape, std::move(gb)));
        break;
      }

      case OpKind::kGelu: {
        if (!want(0)) break;
        const Tensor& X = node(nd.inputs[0]).value;
        std::vector<double> gx(X.data.size());
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t p = 0; p < X.data.size(); ++p) {
          const double x = X.data[p];
          const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
          const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
          gx[p] = g.data[p] * (cdf + x * pdf);
        }
        emit(0, Tensor(X.shape, std::move(gx)));
        break;
      }

      case OpKind::kEmbeddingLookup: {
        if (!want(0)) break;
        const Tensor& T = node(nd.inputs[0]).value;
        const std::int64_t d = T.shape[1];
        std::vector<double> gt(T.data.size(), 0.0);
        for (std::size_t i = 0; i < nd.ids.size(); ++i) {
          const double* gi = g.data.data() + static_cast<std::int64_t>(i) * d;
          double* ti = gt.data() + nd.ids[i] * d;
          for (std::int64_t j = 0; j < d; ++j) ti[j] += gi[j];
        }
        emit(0, Tensor(T.shape, std::move(gt)));
        break;
      }

      case OpKind::kConcat: {
        const std::int64_t axis = nd.a0;
        if (node(nd.inputs[0]).value.shape.size() == 1 || axis == 0) {
          std::int64_t off = 0;
          for (std::size_t s = 0; s < nd.inputs.size(); ++s) {
            const Tensor& X = node(nd.inputs[s]).value;
            const std::int64_t cnt = X.numel();
            if (node(nd.inputs[s]).requires_grad) {
              std::vector<double> gx(g.data.begin() + off, g.data.begin() + off + cnt);
              emit(static_cast<int>(s), Tensor(X.shape, std::move(gx)));
            }
            off += cnt;
          }
        } else {
          const std::int64_t rows = nd.value.shape[0], cols = nd.value.shape[1];
          std::int64_t off = 0;
          for (std::size_t s = 0; s < nd.inputs.size(); ++s) {
            const Tensor& X = node(nd.inputs[s]).value;
            const std::int64_t c = X.shape[1];
            if (node(nd.inputs[s]).requires_grad) {
              std::vector<double> gx(static_cast<std::size_t>(rows * c));
              for (std::int64_t i = 0; i < rows; ++i)
                std::copy_n(g.data.data() + i * cols + off, c, gx.data() + i * c);
              emit(static_cast<int>(s), Tensor(X.shape, std::move(gx)));
            }
            off += c;
          }
        }
        break;
      }

      case OpKind::kSlice: {
        if (!want(0)) break;
        const Tensor& X = node(nd.inputs[0]).value;
        const std::int64_t axis = nd.a0, start = nd.a1, len = nd.a2;
        std::vector<double> gx(X.data.size(), 0.0);
        if (X.shape.size() == 1 || axis == 0) {
          const std::int64_t stride = X.shape.size() == 2 ? X.shape[1] : 1;
          std::copy_n(g.data.data(), len * stride, gx.data() + start * stride);
        } else {
          const std::int64_t r = X.shape[0], c = X.shape[1];
          for (std::int64_t i = 0; i < r; ++i)
            std::copy_n(g.data.data() + i * len, len, gx.data() + i * c + start);
        }
        emit(0, Tensor(X.shape, std::move(gx)));
        break;
      }

      case OpKind::kEuclideanPairwise: {
        const Tensor& A = node(nd.inputs[0]).value;
        const Tensor& B = node(nd.inputs[1]).value;
        const Tensor& D = nd.value;
        const std::int64_t na = A.shape[0], nb = B.shape[0], d = A.shape[1];
        std::vector<double> ga(want(0) ? A.data.size() : 0, 0.0);
        std::vector<double> gb(want(1) ? B.data.size() : 0, 0.0);
        for (std::int64_t i = 0; i < na; ++i) {
          const double* ai = A.data.data() + i * d;
          for (std::int64_t j = 0; j < nb; ++j) {
            const double dist = D.data[i * nb + j];
            if (dist == 0.0) continue;  // zero subgradient at coincident points
            const double w = g.data[i * nb + j] / dist;
            const double* bj = B.data.data() + j * d;
            for (std::int64_t p = 0; p < d; ++p) {
              const double diff = w * (ai[p] - bj[p]);
              if (want(0)) ga[i * d + p] += diff;
              if (want(1)) gb[j * d + p] -= diff;
            }
          }
        }
        if (want(0)) emit(0, Tensor(A.shape, std::move(ga)));
        if (want(1)) emit(1, Tensor(B.shape, std::move(gb)));
        break;
      }

      case OpKind::kVectorNorm: {
        if (!want(0)) break;
        const Tensor& X = node(nd.inputs[0]).value;
        const Tensor& Y = nd.value;
        std::vector<double> gx(X.data.size(), 0.0);
        const std::int64_t r = X.shape.size() == 2 ? X.shape[0] : 1;
        const std::int64_t c = X.shape.size() == 2 ? X.shape[1] : X.shape[0];
        for (std::int64_t i = 0; i < r; ++i) {
          const double norm = Y.data[i];
          if (norm == 0.0) continue;  // zero subgradient
          const double w = g.data[i] / norm;
          for (std::int64_t j = 0; j < c; ++j) gx[i * c + j] = w * X.data[i * c + j];
        }
        emit(0, Tensor(X.shape, std::move(gx)));
        break;
      }

      case OpKind::kLeaf:
      case OpKind::kStopGradient:
        break;
    }
  }

  GradientMap out;
  out.grads_ = std::move(buf.g);
  out.present_.assign(buf.has.begin(), buf.has.end());
  // Every requires_grad leaf reports a gradient, zero where nothing flowed.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].kind == OpKind::kLeaf && nodes_[i].requires_grad && !out.present_[i]) {
      out.grads_[i] = Tensor::zeros(nodes_[i].value.shape);
      out.present_[i] = 1;
    }
  }
  return out;
}

}  // namespace seqot
