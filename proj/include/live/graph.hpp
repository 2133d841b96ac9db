#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "live/tensor.hpp"

namespace live {

/// Handle to a node inside a Graph.
struct NodeId {
  int index = -1;
  bool valid() const { return index >= 0; }
  friend bool operator==(NodeId a, NodeId b) { return a.index == b.index; }
};

enum class OpKind {
  Input,
  Parameter,
  Constant,
  MatMul,
  Add,
  AddRow,
  Scale,
  SiLU,
  SoftmaxRows,
  RmsNorm,
  Embedding,
  SliceCols,
  ConcatCols,
  GatherRows,
  Reshape,
  CrossEntropy,
  Sum,
};

const char* op_name(OpKind op);

/// Static computation graph over a fixed operation set, with reverse-mode
/// differentiation.
///
/// Nodes are appended in topological order by the builder methods; shapes
/// are validated at build time. forward() evaluates every node in order and
/// caches the results, backward() walks the nodes in exact reverse order.
/// Parameter leaves reference externally owned tensors: forward reads their
/// current value and backward accumulates into their grad buffer, so the same
/// graph can be re-run after parameters are perturbed (finite differences).
template <typename Scalar>
class Graph {
 public:
  using Matrix = MatrixX<Scalar>;
  using Inputs = std::map<std::string, Matrix>;

  NodeId input(const std::string& name, Index rows, Index cols) {
    Node n = make(OpKind::Input, rows, cols, {});
    n.name = name;
    return push(std::move(n));
  }

  NodeId parameter(Tensor<Scalar>& tensor, const std::string& name = {}) {
    Node n = make(OpKind::Parameter, tensor.rows(), tensor.cols(), {});
    n.name = name;
    n.param = &tensor;
    return push(std::move(n));
  }

  NodeId constant(Matrix value) {
    Node n = make(OpKind::Constant, value.rows(), value.cols(), {});
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// a * b, or a * b^T when transpose_b is set.
  ///
  /// With causal set, output entry (r, c) is only formed for c <= r + offset
  /// (a * b^T), or only rows c <= r + offset of b are summed (a * b). Causal
  /// products accumulate in a fixed order that does not depend on the matrix
  /// sizes, so row r is bit-identical whether or not later rows exist.
  NodeId matmul(NodeId a, NodeId b, bool transpose_b = false, bool causal = false, Index offset = 0) {
    const Index inner_b = transpose_b ? cols(b) : rows(b);
    const Index out_cols = transpose_b ? rows(b) : cols(b);
    if (cols(a) != inner_b) {
      throw ShapeError("matmul: " + shape_string(rows(a), cols(a)) + " x " +
                       shape_string(rows(b), cols(b)) + (transpose_b ? "^T" : ""));
    }
    Node n = make(OpKind::MatMul, rows(a), out_cols, {a.index, b.index});
    n.transpose_b = transpose_b;
    n.causal = causal;
    n.offset = offset;
    return push(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) {
    require_same_shape("add", a, b);
    return push(make(OpKind::Add, rows(a), cols(a), {a.index, b.index}));
  }

  /// Broadcast-add a 1 x n row to every row of a.
  NodeId add_row(NodeId a, NodeId row) {
    if (rows(row) != 1 || cols(row) != cols(a)) {
      throw ShapeError("add_row: " + shape_string(rows(a), cols(a)) + " + " +
                       shape_string(rows(row), cols(row)));
    }
    return push(make(OpKind::AddRow, rows(a), cols(a), {a.index, row.index}));
  }

  NodeId scale(NodeId a, Scalar factor) {
    Node n = make(OpKind::Scale, rows(a), cols(a), {a.index});
    n.factor = factor;
    return push(std::move(n));
  }

  NodeId silu(NodeId a) { return push(make(OpKind::SiLU, rows(a), cols(a), {a.index})); }

  /// Row-wise softmax. With causal set, row i only sees columns <= i + offset;
  /// masked entries come out as exact zeros.
  NodeId softmax_rows(NodeId a, bool causal = false, Index offset = 0) {
    Node n = make(OpKind::SoftmaxRows, rows(a), cols(a), {a.index});
    n.causal = causal;
    n.offset = offset;
    return push(std::move(n));
  }

  /// x / rms(x) * gain, per row, no bias.
  NodeId rms_norm(NodeId a, NodeId gain, Scalar eps = Scalar(1e-6)) {
    if (rows(gain) != 1 || cols(gain) != cols(a)) {
      throw ShapeError("rms_norm gain " + shape_string(rows(gain), cols(gain)) +
                       " does not match " + shape_string(rows(a), cols(a)));
    }
    Node n = make(OpKind::RmsNorm, rows(a), cols(a), {a.index, gain.index});
    n.factor = eps;
    return push(std::move(n));
  }

  NodeId embedding(NodeId table, std::vector<int> ids) {
    for (int id : ids) {
      if (id < 0 || id >= rows(table)) {
        throw ShapeError("embedding: id " + std::to_string(id) + " outside table of " +
                         std::to_string(rows(table)) + " rows");
      }
    }
    Node n = make(OpKind::Embedding, static_cast<Index>(ids.size()), cols(table), {table.index});
    n.ids = std::move(ids);
    return push(std::move(n));
  }

  NodeId slice_cols(NodeId a, Index start, Index count) {
    if (start < 0 || count <= 0 || start + count > cols(a)) {
      throw ShapeError("slice_cols out of range");
    }
    Node n = make(OpKind::SliceCols, rows(a), count, {a.index});
    n.offset = start;
    return push(std::move(n));
  }

  NodeId concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    Index total = 0;
    std::vector<int> parents;
    for (NodeId p : parts) {
      if (rows(p) != rows(parts.front())) throw ShapeError("concat_cols: row mismatch");
      total += cols(p);
      parents.push_back(p.index);
    }
    return push(make(OpKind::ConcatCols, rows(parts.front()), total, std::move(parents)));
  }

  /// Output row r is row picks[r].second of sources[picks[r].first].
  NodeId gather_rows(const std::vector<NodeId>& sources,
                     std::vector<std::pair<int, Index>> picks) {
    if (sources.empty()) throw ShapeError("gather_rows: no sources");
    std::vector<int> parents;
    for (NodeId s : sources) {
      if (cols(s) != cols(sources.front())) throw ShapeError("gather_rows: column mismatch");
      parents.push_back(s.index);
    }
    for (auto [src, row] : picks) {
      if (src < 0 || src >= static_cast<int>(sources.size()) || row < 0 ||
          row >= rows(sources[static_cast<size_t>(src)])) {
        throw ShapeError("gather_rows: pick out of range");
      }
    }
    Node n = make(OpKind::GatherRows, static_cast<Index>(picks.size()), cols(sources.front()),
                  std::move(parents));
    n.picks = std::move(picks);
    return push(std::move(n));
  }

  /// Row-major reinterpretation.
  NodeId reshape(NodeId a, Index new_rows, Index new_cols) {
    if (new_rows * new_cols != rows(a) * cols(a)) throw ShapeError("reshape: size mismatch");
    return push(make(OpKind::Reshape, new_rows, new_cols, {a.index}));
  }

  /// Weighted token cross-entropy: sum_j weights[j] * -log softmax(logits_j)[targets[j]],
  /// divided by normalizer. Rows with target < 0 or zero weight contribute nothing.
  NodeId cross_entropy(NodeId logits, std::vector<int> targets, std::vector<Scalar> weights,
                       Scalar normalizer) {
    if (static_cast<Index>(targets.size()) != rows(logits) || targets.size() != weights.size()) {
      throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                       std::to_string(rows(logits)) + " rows");
    }
    for (int t : targets) {
      if (t >= cols(logits)) throw ShapeError("cross_entropy: target outside vocabulary");
    }
    if (!(normalizer > 0)) throw ShapeError("cross_entropy: normalizer must be positive");
    Node n = make(OpKind::CrossEntropy, 1, 1, {logits.index});
    n.ids = std::move(targets);
    n.weights = std::move(weights);
    n.factor = normalizer;
    return push(std::move(n));
  }

  NodeId sum(NodeId a) { return push(make(OpKind::Sum, 1, 1, {a.index})); }

  Index rows(NodeId id) const { return node(id).rows; }
  Index cols(NodeId id) const { return node(id).cols; }
  size_t size() const { return nodes_.size(); }
  OpKind op(NodeId id) const { return node(id).op; }

  const Matrix& value(NodeId id) const {
    const Node& n = node(id);
    if (!forwarded_) throw GraphStateError("value() read before forward()");
    return n.op == OpKind::Parameter ? n.param->value : n.value;
  }

  const Matrix& grad(NodeId id) const {
    const Node& n = node(id);
    if (n.op == OpKind::Parameter) return n.param->grad;
    return n.grad;
  }

  /// Softmax probabilities cached by a CrossEntropy node.
  const Matrix& probabilities(NodeId id) const {
    const Node& n = node(id);
    if (n.op != OpKind::CrossEntropy) throw GraphStateError("probabilities(): not a cross-entropy node");
    return n.aux;
  }

  void forward(const Inputs& inputs = {}) {
    forwarded_ = false;
    for (size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      evaluate(n, inputs);
      if (n.op != OpKind::Parameter && !n.value.allFinite()) {
        throw NonFiniteError("non-finite output at node " + std::to_string(i) + " (" +
                             op_name(n.op) + ")");
      }
    }
    forwarded_ = true;
  }

  /// Accumulates d(loss)/d(param) into every reachable parameter's grad.
  /// Parameter grads are not zeroed here, so several backward passes sum.
  void backward(NodeId loss) {
    if (!forwarded_) throw GraphStateError("backward() called before forward()");
    const Node& ln = node(loss);
    if (ln.rows != 1 || ln.cols != 1) throw GraphStateError("backward() needs a scalar loss");
    for (Node& n : nodes_) {
      if (n.op != OpKind::Parameter) n.grad.resize(0, 0);
    }
    nodes_[static_cast<size_t>(loss.index)].grad = Matrix::Ones(1, 1);
    for (int i = loss.index; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.op == OpKind::Parameter || n.grad.size() == 0) continue;
      propagate(n);
    }
    for (Node& n : nodes_) {
      if (n.op == OpKind::Parameter && n.param->has_grad() && !n.param->grad.allFinite()) {
        throw NonFiniteError("non-finite gradient for parameter '" + n.name + "'");
      }
    }
  }

  /// Test hook: perturbs the matmul backward rule so gradient checks can be
  /// shown to catch a wrong derivative.
  void inject_matmul_backward_fault(bool on) { matmul_fault_ = on; }

 private:
  struct Node {
    OpKind op = OpKind::Input;
    std::vector<int> parents;
    Index rows = 0;
    Index cols = 0;
    std::string name;
    Tensor<Scalar>* param = nullptr;
    Matrix value;
    Matrix grad;
    Matrix aux;
    bool transpose_b = false;
    bool causal = false;
    Index offset = 0;
    Scalar factor = Scalar(1);
    std::vector<int> ids;
    std::vector<Scalar> weights;
    std::vector<std::pair<int, Index>> picks;
  };

  std::vector<Node> nodes_;
  bool forwarded_ = false;
  bool matmul_fault_ = false;

  static Node make(OpKind op, Index rows, Index cols, std::vector<int> parents) {
    Node n;
    n.op = op;
    n.rows = rows;
    n.cols = cols;
    n.parents = std::move(parents);
    return n;
  }

  NodeId push(Node n) {
    for (int p : n.parents) {
      if (p < 0 || p >= static_cast<int>(nodes_.size())) throw ShapeError("dangling parent");
    }
    nodes_.push_back(std::move(n));
    forwarded_ = false;
    return NodeId{static_cast<int>(nodes_.size()) - 1};
  }

  const Node& node(NodeId id) const {
    if (id.index < 0 || id.index >= static_cast<int>(nodes_.size())) {
      throw GraphStateError("invalid node id");
    }
    return nodes_[static_cast<size_t>(id.index)];
  }

  void require_same_shape(const char* what, NodeId a, NodeId b) const {
    if (rows(a) != rows(b) || cols(a) != cols(b)) {
      throw ShapeError(std::string(what) + ": " + shape_string(rows(a), cols(a)) + " vs " +
                       shape_string(rows(b), cols(b)));
    }
  }

  const Matrix& val(int index) const {
    const Node& n = nodes_[static_cast<size_t>(index)];
    return n.op == OpKind::Parameter ? n.param->value : n.value;
  }

  Matrix& grad_of(int index) {
    Node& n = nodes_[static_cast<size_t>(index)];
    if (n.op == OpKind::Parameter) return n.param->ensure_grad();
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.rows, n.cols);
    return n.grad;
  }

  static Scalar sigmoid(Scalar x) { return Scalar(1) / (Scalar(1) + std::exp(-x)); }

  // GEMM kernels pick their code path from the operand shapes, so a row's
  // result could change with the number of rows. Fixed-height zero-padded
  // row blocks keep every row on the same path.
  static constexpr Index kRowBlock = 32;

  static void blocked_product(const Matrix& a, const Matrix& b, bool transpose_b, Matrix& out) {
    out.resize(a.rows(), transpose_b ? b.rows() : b.cols());
    Matrix block, part;
    for (Index r0 = 0; r0 < a.rows(); r0 += kRowBlock) {
      const Index m = std::min(kRowBlock, a.rows() - r0);
      block.setZero(kRowBlock, a.cols());
      block.topRows(m) = a.middleRows(r0, m);
      if (transpose_b) {
        part.noalias() = block * b.transpose();
      } else {
        part.noalias() = block * b;
      }
      out.middleRows(r0, m) = part.topRows(m);
    }
  }

  static void causal_product(const Matrix& a, const Matrix& b, bool transpose_b, Index offset, Matrix& out) {
    const Index out_cols = transpose_b ? b.rows() : b.cols();
    out.setZero(a.rows(), out_cols);
    RowVectorX<Scalar> weights;
    for (Index r = 0; r < a.rows(); ++r) {
      const Index visible = std::min<Index>(transpose_b ? b.rows() : a.cols(), r + offset + 1);
      if (visible <= 0) continue;
      if (transpose_b) {
        weights.noalias() = a.row(r) * b.topRows(visible).transpose();
        out.row(r).head(visible) = weights;
      } else {
        weights = a.row(r).head(visible);  // aligned copy: the row stride of a varies with its width
        out.row(r).noalias() = weights * b.topRows(visible);
      }
    }
  }

  void evaluate(Node& n, const Inputs& inputs) {
    const auto& p = n.parents;
    switch (n.op) {
      case OpKind::Input: {
        auto it = inputs.find(n.name);
        if (it == inputs.end()) throw ShapeError("missing input '" + n.name + "'");
        if (it->second.rows() != n.rows || it->second.cols() != n.cols) {
          throw ShapeError("input '" + n.name + "' expected " + shape_string(n.rows, n.cols) +
                           ", got " + shape_string(it->second.rows(), it->second.cols()));
        }
        n.value = it->second;
        break;
      }
      case OpKind::Parameter:
        if (n.param->rows() != n.rows || n.param->cols() != n.cols) {
          throw ShapeError("parameter '" + n.name + "' changed shape");
        }
        break;
      case OpKind::Constant:
        break;
      case OpKind::MatMul:
        if (n.causal) {
          causal_product(val(p[0]), val(p[1]), n.transpose_b, n.offset, n.value);
        } else {
          blocked_product(val(p[0]), val(p[1]), n.transpose_b, n.value);
        }
        break;
      case OpKind::Add:
        n.value = val(p[0]) + val(p[1]);
        break;
      case OpKind::AddRow:
        n.value = val(p[0]).rowwise() + val(p[1]).row(0);
        break;
      case OpKind::Scale:
        n.value = val(p[0]) * n.factor;
        break;
      case OpKind::SiLU:
        n.value = val(p[0]).unaryExpr([](Scalar x) { return x * sigmoid(x); });
        break;
      case OpKind::SoftmaxRows: {
        const Matrix& x = val(p[0]);
        n.value.resize(n.rows, n.cols);
        for (Index r = 0; r < n.rows; ++r) {
          const Index width = n.causal ? std::min<Index>(n.cols, r + n.offset + 1) : n.cols;
          auto row = n.value.row(r);
          row.setZero();
          if (width <= 0) continue;
          Scalar m = x(r, 0);
          for (Index c = 1; c < width; ++c) m = std::max(m, x(r, c));
          Scalar total = 0;
          for (Index c = 0; c < width; ++c) total += (row(c) = std::exp(x(r, c) - m));
          for (Index c = 0; c < width; ++c) row(c) /= total;
        }
        break;
      }
      case OpKind::RmsNorm: {
        const Matrix& x = val(p[0]);
        const Matrix& g = val(p[1]);
        n.aux.resize(n.rows, 1);  // inverse rms per row
        n.value.resize(n.rows, n.cols);
        for (Index r = 0; r < n.rows; ++r) {
          const Scalar ms = x.row(r).squaredNorm() / static_cast<Scalar>(n.cols);
          const Scalar inv = Scalar(1) / std::sqrt(ms + n.factor);
          n.aux(r, 0) = inv;
          n.value.row(r) = (x.row(r) * inv).cwiseProduct(g.row(0));
        }
        break;
      }
      case OpKind::Embedding: {
        const Matrix& table = val(p[0]);
        n.value.resize(n.rows, n.cols);
        for (Index r = 0; r < n.rows; ++r) n.value.row(r) = table.row(n.ids[static_cast<size_t>(r)]);
        break;
      }
      case OpKind::SliceCols:
        n.value = val(p[0]).middleCols(n.offset, n.cols);
        break;
      case OpKind::ConcatCols: {
        n.value.resize(n.rows, n.cols);
        Index c = 0;
        for (int parent : p) {
          const Matrix& part = val(parent);
          n.value.middleCols(c, part.cols()) = part;
          c += part.cols();
        }
        break;
      }
      case OpKind::GatherRows: {
        n.value.resize(n.rows, n.cols);
        for (Index r = 0; r < n.rows; ++r) {
          const auto [src, row] = n.picks[static_cast<size_t>(r)];
          n.value.row(r) = val(p[static_cast<size_t>(src)]).row(row);
        }
        break;
      }
      case OpKind::Reshape: {
        const Matrix& x = val(p[0]);
        n.value = Eigen::Map<const Matrix>(x.data(), n.rows, n.cols);
        break;
      }
      case OpKind::CrossEntropy: {
        const Matrix& logits = val(p[0]);
        n.aux.resize(logits.rows(), logits.cols());
        Scalar total = 0;
        for (Index r = 0; r < logits.rows(); ++r) {
          const Scalar m = logits.row(r).maxCoeff();
          auto prob = n.aux.row(r);
          prob = (logits.row(r).array() - m).exp().matrix();
          const Scalar z = prob.sum();
          prob /= z;
          const int t = n.ids[static_cast<size_t>(r)];
          const Scalar w = n.weights[static_cast<size_t>(r)];
          if (t < 0 || w == Scalar(0)) continue;
          total += w * (m + std::log(z) - logits(r, t));
        }
        n.value = Matrix::Constant(1, 1, total / n.factor);
        break;
      }
      case OpKind::Sum:
        n.value = Matrix::Constant(1, 1, val(p[0]).sum());
        break;
    }
  }

  void propagate(Node& n) {
    const auto& p = n.parents;
    const Matrix& g = n.grad;
    switch (n.op) {
      case OpKind::Input:
      case OpKind::Parameter:
      case OpKind::Constant:
        break;
      case OpKind::MatMul: {
        const Matrix& a = val(p[0]);
        const Matrix& b = val(p[1]);
        if (n.causal && n.offset == 0 && n.transpose_b && g.rows() == g.cols()) {
          grad_of(p[0]).noalias() += g.template triangularView<Eigen::Lower>() * b;
          grad_of(p[1]).noalias() += g.transpose().template triangularView<Eigen::Upper>() * a;
        } else if (n.causal && n.offset == 0 && !n.transpose_b && a.rows() == a.cols()) {
          grad_of(p[0]).noalias() += g * b.transpose();
          grad_of(p[1]).noalias() += a.transpose().template triangularView<Eigen::Upper>() * g;
        } else if (n.transpose_b) {
          grad_of(p[0]).noalias() += g * b;
          grad_of(p[1]).noalias() += g.transpose() * a;
        } else {
          grad_of(p[0]).noalias() += g * b.transpose();
          grad_of(p[1]).noalias() += a.transpose() * g;
        }
        if (matmul_fault_) grad_of(p[0]) *= Scalar(1.1);
        break;
      }
      case OpKind::Add:
        grad_of(p[0]) += g;
        grad_of(p[1]) += g;
        break;
      case OpKind::AddRow:
        grad_of(p[0]) += g;
        grad_of(p[1]) += g.colwise().sum();
        break;
      case OpKind::Scale:
        grad_of(p[0]) += g * n.factor;
        break;
      case OpKind::SiLU: {
        const Matrix& x = val(p[0]);
        grad_of(p[0]) += g.binaryExpr(x, [](Scalar gy, Scalar xv) {
          const Scalar s = sigmoid(xv);
          return gy * s * (Scalar(1) + xv * (Scalar(1) - s));
        });
        break;
      }
      case OpKind::SoftmaxRows: {
        const Matrix& y = n.value;
        Matrix& ga = grad_of(p[0]);
        for (Index r = 0; r < n.rows; ++r) {
          const Scalar dot = g.row(r).dot(y.row(r));
          ga.row(r) += (y.row(r).array() * (g.row(r).array() - dot)).matrix();
        }
        break;
      }
      case OpKind::RmsNorm: {
        const Matrix& x = val(p[0]);
        const Matrix& gain = val(p[1]);
        Matrix& gx = grad_of(p[0]);
        Matrix& gg = grad_of(p[1]);
        const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n.cols);
        for (Index r = 0; r < n.rows; ++r) {
          const Scalar inv = n.aux(r, 0);
          const RowVectorX<Scalar> xhat = x.row(r) * inv;
          const RowVectorX<Scalar> dxhat = g.row(r).cwiseProduct(gain.row(0));
          gg.row(0) += g.row(r).cwiseProduct(xhat);
          const Scalar proj = dxhat.dot(xhat) * inv_n;
          gx.row(r) += (dxhat - xhat * proj) * inv;
        }
        break;
      }
      case OpKind::Embedding: {
        Matrix& gt = grad_of(p[0]);
        for (Index r = 0; r < n.rows; ++r) gt.row(n.ids[static_cast<size_t>(r)]) += g.row(r);
        break;
      }
      case OpKind::SliceCols:
        grad_of(p[0]).middleCols(n.offset, n.cols) += g;
        break;
      case OpKind::ConcatCols: {
        Index c = 0;
        for (int parent : p) {
          const Index w = nodes_[static_cast<size_t>(parent)].cols;
          grad_of(parent) += g.middleCols(c, w);
          c += w;
        }
        break;
      }
      case OpKind::GatherRows: {
        for (Index r = 0; r < n.rows; ++r) {
          const auto [src, row] = n.picks[static_cast<size_t>(r)];
          grad_of(p[static_cast<size_t>(src)]).row(row) += g.row(r);
        }
        break;
      }
      case OpKind::Reshape: {
        Matrix& gx = grad_of(p[0]);
        gx += Eigen::Map<const Matrix>(g.data(), gx.rows(), gx.cols());
        break;
      }
      case OpKind::CrossEntropy: {
        Matrix& gl = grad_of(p[0]);
        const Scalar scale = g(0, 0) / n.factor;
        for (Index r = 0; r < gl.rows(); ++r) {
          const int t = n.ids[static_cast<size_t>(r)];
          const Scalar w = n.weights[static_cast<size_t>(r)];
          if (t < 0 || w == Scalar(0)) continue;
          gl.row(r) += n.aux.row(r) * (w * scale);
          gl(r, t) -= w * scale;
        }
        break;
      }
      case OpKind::Sum:
        grad_of(p[0]).array() += g(0, 0);
        break;
    }
  }
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::AddRow: return "add_row";
    case OpKind::Scale: return "scale";
    case OpKind::SiLU: return "silu";
    case OpKind::SoftmaxRows: return "softmax_rows";
    case OpKind::RmsNorm: return "rms_norm";
    case OpKind::Embedding: return "embedding";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::Reshape: return "reshape";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Sum: return "sum";
  }
  return "?";
}

template <typename Scalar>
struct GradCheckReport {
  Scalar max_relative_error = 0;  // worst parameter tensor, norm-based
  Scalar max_element_error = 0;   // worst single scalar, for diagnostics
  size_t worst_tensor = 0;
};

/// Central finite differences against backward(), perturbing every element
/// by +/- epsilon. Each parameter tensor
/// scores |analytic - numeric| / max(1e-8, |analytic| + |numeric|) with |.|
/// the Euclidean norm over the tensor; the report keeps the worst tensor.
template <typename Scalar>
GradCheckReport<Scalar> grad_check_report(Graph<Scalar>& graph, NodeId loss, const std::vector<Tensor<Scalar>*>& params,
                                          Scalar epsilon, const typename Graph<Scalar>::Inputs& inputs = {}) {
  for (Tensor<Scalar>* t : params) {
    t->ensure_grad();
    t->zero_grad();
  }
  graph.forward(inputs);
  graph.backward(loss);

  GradCheckReport<Scalar> report;
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor<Scalar>* t = params[k];
    MatrixX<Scalar> numeric(t->rows(), t->cols());
    for (Index i = 0; i < t->value.size(); ++i) {
      Scalar& x = t->value.data()[i];
      const Scalar saved = x;
      x = saved + epsilon;
      graph.forward(inputs);
      const Scalar up = graph.value(loss)(0, 0);
      x = saved - epsilon;
      graph.forward(inputs);
      const Scalar down = graph.value(loss)(0, 0);
      x = saved;
      numeric.data()[i] = (up - down) / (Scalar(2) * epsilon);
      const Scalar a = t->grad.data()[i];
      const Scalar n = numeric.data()[i];
      report.max_element_error = std::max(report.max_element_error,
                                          std::abs(a - n) / std::max(Scalar(1e-8), std::abs(a) + std::abs(n)));
    }
    const Scalar err = (t->grad - numeric).norm() / std::max(Scalar(1e-8), t->grad.norm() + numeric.norm());
    if (err > report.max_relative_error || k == 0) {
      report.max_relative_error = std::max(report.max_relative_error, err);
      report.worst_tensor = k;
    }
  }
  graph.forward(inputs);
  return report;
}

template <typename Scalar>
Scalar grad_check(Graph<Scalar>& graph, NodeId loss, const std::vector<Tensor<Scalar>*>& params, Scalar epsilon,
                  const typename Graph<Scalar>::Inputs& inputs = {}) {
  return grad_check_report(graph, loss, params, epsilon, inputs).max_relative_error;
}

}  // namespace live
