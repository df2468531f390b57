#pragma once

// Dense f64 tensor graph with reverse-mode differentiation.
//
// Every operation evaluates eagerly and records a node; backward passes are
// built symbolically out of the same operations, so gradients are themselves
// differentiable nodes and second-order terms (the R1 penalty) come out of
// one mechanism instead of a special case. Broadcasting is restricted to
// scalar-vs-tensor and exact-shape.

#include <array>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stmi/core.hpp"

namespace stmi {

class Graph;

/// Handle to a node in a Graph: value + shape + (for leaves) a gradient slot.
class DiffTensor {
 public:
  DiffTensor() = default;
  DiffTensor(Graph* g, int id) : g_(g), id_(id) {}

  bool defined() const { return g_ != nullptr; }
  int id() const { return id_; }
  Graph* graph() const { return g_; }

  const Shape& shape() const;
  const std::vector<double>& value() const;
  /// Accumulated gradient (empty until a backward pass reaches this node).
  const std::vector<double>& grad() const;
  double scalar() const;

 private:
  Graph* g_ = nullptr;
  int id_ = -1;
};

enum class PwKind { Add, Sub, Mul, Div, SafeDiv, Relu, Sigmoid, Log, Square, Sqrt, Abs };
enum class RdKind { Sum, Mean, L2Norm };

namespace detail {

enum class Op : std::uint8_t {
  Leaf,
  Add, Sub, Mul, Div, SafeDiv,
  Relu, Sigmoid, Log, Square, Sqrt, Abs, Clamp, Affine,
  Matmul, Transpose2d, Bmm, Transpose12,
  ConvFwd, ConvDx, ConvDk,
  PadReflect2d, FoldReflect2d,
  Slice3, PadZero3, Concat3,
  Reshape, SumAxes, ExpandAxes,
  L2Norm, RowNorm, PairwiseEdm,
};

/// Geometry of one convolution instance, shared by the fwd/dx/dk family.
/// x: H x W x Ci, k: kh x kw x Ci x Co, y: Ho x Wo x Co, SAME padding.
struct ConvGeom {
  int H = 0, W = 0, Ci = 0;
  int kh = 0, kw = 0, Co = 0;
  int stride = 1;
  int Ho = 0, Wo = 0;
  int pt = 0, pl = 0;  // top/left padding
};

inline ConvGeom make_conv_geom(int H, int W, int Ci, int kh, int kw, int Co, int stride) {
  ConvGeom g;
  g.H = H; g.W = W; g.Ci = Ci;
  g.kh = kh; g.kw = kw; g.Co = Co;
  g.stride = stride;
  g.Ho = (H + stride - 1) / stride;
  g.Wo = (W + stride - 1) / stride;
  const int pad_h = std::max((g.Ho - 1) * stride + kh - H, 0);
  const int pad_w = std::max((g.Wo - 1) * stride + kw - W, 0);
  g.pt = pad_h / 2;
  g.pl = pad_w / 2;
  return g;
}

struct Attr {
  int a0 = 0, a1 = 0, a2 = 0;      // axis / start / extent parameters
  double d0 = 0.0, d1 = 0.0;       // scalar parameters (affine, clamp)
  ConvGeom geom;
  std::vector<int> axes;           // reduce / expand axes (sorted)
  Shape target;                    // reshape / expand / pad targets
};

struct Node {
  Op op = Op::Leaf;
  Shape shape;
  std::array<int, 2> in{{-1, -1}};
  int nin = 0;
  bool requires_grad = false;
  std::vector<double> value;
  std::vector<double> grad;  // populated for leaves by backward()
  Attr attr;
  std::string name;  // parameter leaves
};

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(static_cast<size_t>(s.rank()), 1);
  for (int i = s.rank() - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] = st[static_cast<size_t>(i + 1)] * s[i + 1];
  return st;
}

}  // namespace detail

/// Named f64 parameter block.
struct Param {
  Shape shape;
  std::vector<double> data;
};

/// All trainable tensors of a model, addressed by name. Iteration order is
/// the name order, which keeps serialization and optimizer sweeps stable.
struct ParameterStore {
  std::map<std::string, Param> params;
  std::uint64_t rng_seed = 0;

  Param& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Param& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool has(const std::string& name) const { return params.count(name) != 0; }

  void add(const std::string& name, Shape shape, std::vector<double> data) {
    if (params.count(name)) throw ContractError("duplicate parameter '" + name + "'");
    if (shape.numel() != static_cast<std::int64_t>(data.size()))
      throw ShapeError("parameter '" + name + "' data size mismatch");
    params.emplace(name, Param{std::move(shape), std::move(data)});
  }

  bool all_parameters_finite() const {
    for (const auto& [name, p] : params)
      if (!all_finite(p.data)) return false;
    return true;
  }
};

using GradMap = std::map<std::string, std::vector<double>>;

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  int size() const { return static_cast<int>(nodes_.size()); }

  const detail::Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  // ---- leaves -------------------------------------------------------------

  DiffTensor leaf(Shape shape, std::span<const double> data, bool requires_grad,
                  std::string name = "") {
    if (shape.numel() != static_cast<std::int64_t>(data.size()))
      throw ShapeError("leaf data size does not match shape " + shape.str());
    detail::Node n;
    n.op = detail::Op::Leaf;
    n.shape = std::move(shape);
    n.requires_grad = requires_grad;
    n.value.assign(data.begin(), data.end());
    n.name = std::move(name);
    return push(std::move(n));
  }

  DiffTensor constant(Shape shape, std::span<const double> data) {
    return leaf(std::move(shape), data, false);
  }

  DiffTensor constant_fill(Shape shape, double v) {
    std::vector<double> data(static_cast<size_t>(shape.numel()), v);
    return leaf(std::move(shape), data, false);
  }

  DiffTensor scalar(double v) { return constant_fill(scalar_shape(), v); }

  /// Bind a named parameter as a leaf (one node per name per graph).
  /// Parameters matching a frozen prefix participate in the forward pass but
  /// receive no gradients.
  DiffTensor param(ParameterStore& store, const std::string& name) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return DiffTensor(this, it->second);
    const Param& p = store.at(name);
    bool trainable = true;
    for (const auto& prefix : frozen_prefixes_)
      if (name.rfind(prefix, 0) == 0) trainable = false;
    DiffTensor t = leaf(p.shape, p.data, trainable, name);
    param_nodes_.emplace(name, t.id());
    return t;
  }

  void freeze_prefix(std::string prefix) { frozen_prefixes_.push_back(std::move(prefix)); }

  /// Copy accumulated leaf gradients out, keyed by parameter name.
  GradMap param_grads() const {
    GradMap out;
    for (const auto& [name, id] : param_nodes_) {
      const detail::Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.requires_grad || n.grad.empty()) continue;
      out.emplace(name, n.grad);
    }
    return out;
  }

  // ---- pointwise ----------------------------------------------------------

  DiffTensor add(DiffTensor a, DiffTensor b) { return binary(detail::Op::Add, a, b); }
  DiffTensor sub(DiffTensor a, DiffTensor b) { return binary(detail::Op::Sub, a, b); }
  DiffTensor mul(DiffTensor a, DiffTensor b) { return binary(detail::Op::Mul, a, b); }
  DiffTensor div(DiffTensor a, DiffTensor b) { return binary(detail::Op::Div, a, b); }
  /// a / b with the convention 0 where b == 0 (subgradient of norms at 0).
  DiffTensor safe_div(DiffTensor a, DiffTensor b) { return binary(detail::Op::SafeDiv, a, b); }

  DiffTensor relu(DiffTensor x) { return unary(detail::Op::Relu, x); }
  DiffTensor sigmoid(DiffTensor x) { return unary(detail::Op::Sigmoid, x); }
  DiffTensor log(DiffTensor x) { return unary(detail::Op::Log, x); }
  DiffTensor square(DiffTensor x) { return unary(detail::Op::Square, x); }
  DiffTensor sqrt(DiffTensor x) { return unary(detail::Op::Sqrt, x); }
  DiffTensor abs(DiffTensor x) { return unary(detail::Op::Abs, x); }

  DiffTensor clamp(DiffTensor x, double lo, double hi) {
    detail::Node n = make_unary(detail::Op::Clamp, x);
    n.attr.d0 = lo;
    n.attr.d1 = hi;
    return push(std::move(n));
  }

  /// a*x + b, elementwise with scalar coefficients.
  DiffTensor affine(DiffTensor x, double a, double b) {
    detail::Node n = make_unary(detail::Op::Affine, x);
    n.attr.d0 = a;
    n.attr.d1 = b;
    return push(std::move(n));
  }

  DiffTensor neg(DiffTensor x) { return affine(x, -1.0, 0.0); }

  /// Spec-facing dispatch over the pointwise op set.
  DiffTensor pointwise(PwKind kind, DiffTensor a, DiffTensor b = {}) {
    switch (kind) {
      case PwKind::Add: return add(a, b);
      case PwKind::Sub: return sub(a, b);
      case PwKind::Mul: return mul(a, b);
      case PwKind::Div: return div(a, b);
      case PwKind::SafeDiv: return safe_div(a, b);
      case PwKind::Relu: return relu(a);
      case PwKind::Sigmoid: return sigmoid(a);
      case PwKind::Log: return log(a);
      case PwKind::Square: return square(a);
      case PwKind::Sqrt: return sqrt(a);
      case PwKind::Abs: return abs(a);
    }
    throw ContractError("unknown pointwise kind");
  }

  // ---- linear algebra -----------------------------------------------------

  DiffTensor matmul(DiffTensor a, DiffTensor b) {
    check_graph(a); check_graph(b);
    const Shape& sa = a.shape(); const Shape& sb = b.shape();
    if (sa.rank() != 2 || sb.rank() != 2)
      throw ShapeError("matmul expects rank-2, got " + sa.str() + " and " + sb.str());
    if (sa[1] != sb[0])
      throw ShapeError("matmul inner extents differ: " + sa.str() + " vs " + sb.str());
    detail::Node n;
    n.op = detail::Op::Matmul;
    n.shape = Shape{sa[0], sb[1]};
    set_inputs(n, a, b);
    return push(std::move(n));
  }

  DiffTensor transpose2d(DiffTensor x) {
    check_graph(x);
    if (x.shape().rank() != 2) throw ShapeError("transpose2d expects rank-2");
    detail::Node n;
    n.op = detail::Op::Transpose2d;
    n.shape = Shape{x.shape()[1], x.shape()[0]};
    set_inputs(n, x);
    return push(std::move(n));
  }

  /// Batched matmul over the leading axis: {F,n,k} x {F,k,m} -> {F,n,m}.
  DiffTensor bmm(DiffTensor a, DiffTensor b) {
    check_graph(a); check_graph(b);
    const Shape& sa = a.shape(); const Shape& sb = b.shape();
    if (sa.rank() != 3 || sb.rank() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
      throw ShapeError("bmm shapes incompatible: " + sa.str() + " vs " + sb.str());
    detail::Node n;
    n.op = detail::Op::Bmm;
    n.shape = Shape{sa[0], sa[1], sb[2]};
    set_inputs(n, a, b);
    return push(std::move(n));
  }

  /// Swap axes 1 and 2 of a rank-3 tensor.
  DiffTensor transpose12(DiffTensor x) {
    check_graph(x);
    if (x.shape().rank() != 3) throw ShapeError("transpose12 expects rank-3");
    detail::Node n;
    n.op = detail::Op::Transpose12;
    n.shape = Shape{x.shape()[0], x.shape()[2], x.shape()[1]};
    set_inputs(n, x);
    return push(std::move(n));
  }

  // ---- convolution family -------------------------------------------------

  /// 2D convolution with SAME padding. x: H x W x Ci. Kernel k: kh x kw x Ci x Co.
  /// stride 1 preserves extents, stride 2 halves them (ceil). With
  /// transposed=true the op is the adjoint map and stride 2 doubles extents;
  /// the kernel is then laid out kh x kw x Co x Ci.
  DiffTensor conv2d(DiffTensor x, DiffTensor k, int stride, bool transposed = false) {
    check_graph(x); check_graph(k);
    if (stride != 1 && stride != 2) throw ContractError("conv2d stride must be 1 or 2");
    const Shape& sx = x.shape(); const Shape& sk = k.shape();
    if (sx.rank() != 3 || sk.rank() != 4)
      throw ShapeError("conv2d expects rank-3 input and rank-4 kernel");
    if (!transposed) {
      if (sx[2] != sk[2])
        throw ShapeError("conv2d channel mismatch: input " + sx.str() + " kernel " + sk.str());
      detail::Node n;
      n.op = detail::Op::ConvFwd;
      n.attr.geom = detail::make_conv_geom(sx[0], sx[1], sx[2], sk[0], sk[1], sk[3], stride);
      n.shape = Shape{n.attr.geom.Ho, n.attr.geom.Wo, n.attr.geom.Co};
      set_inputs(n, x, k);
      return push(std::move(n));
    }
    // Transposed: interpret x as the output-side tensor of a forward conv
    // whose input extents are stride * extent(x).
    if (sx[2] != sk[3])
      throw ShapeError("transposed conv2d channel mismatch: input " + sx.str() + " kernel " + sk.str());
    detail::Node n;
    n.op = detail::Op::ConvDx;
    n.attr.geom = detail::make_conv_geom(stride * sx[0], stride * sx[1], sk[2],
                                         sk[0], sk[1], sk[3], stride);
    if (n.attr.geom.Ho != sx[0] || n.attr.geom.Wo != sx[1])
      throw ShapeError("transposed conv2d geometry mismatch");
    n.shape = Shape{n.attr.geom.H, n.attr.geom.W, n.attr.geom.Ci};
    set_inputs(n, x, k);
    return push(std::move(n));
  }

  // ---- structure ----------------------------------------------------------

  DiffTensor reshape(DiffTensor x, Shape target) {
    check_graph(x);
    if (target.numel() != x.shape().numel())
      throw ShapeError("reshape element count differs: " + x.shape().str() + " -> " + target.str());
    detail::Node n;
    n.op = detail::Op::Reshape;
    n.shape = target;
    n.attr.target = std::move(target);
    set_inputs(n, x);
    return push(std::move(n));
  }

  /// Contiguous slice of a rank-3 tensor along one axis.
  DiffTensor slice3(DiffTensor x, int axis, int start, int len) {
    check_graph(x);
    const Shape& s = x.shape();
    if (s.rank() != 3) throw ShapeError("slice3 expects rank-3");
    if (axis < 0 || axis > 2 || start < 0 || len <= 0 || start + len > s[axis])
      throw ShapeError("slice3 out of range");
    detail::Node n;
    n.op = detail::Op::Slice3;
    std::vector<int> dims = s.dims;
    dims[static_cast<size_t>(axis)] = len;
    n.shape = Shape(dims);
    n.attr.a0 = axis; n.attr.a1 = start; n.attr.a2 = s[axis];
    set_inputs(n, x);
    return push(std::move(n));
  }

  /// Zero-pad a rank-3 tensor along one axis back to a larger extent
  /// (adjoint of slice3).
  DiffTensor pad_zero3(DiffTensor x, int axis, int before, int full_extent) {
    check_graph(x);
    const Shape& s = x.shape();
    if (s.rank() != 3) throw ShapeError("pad_zero3 expects rank-3");
    if (axis < 0 || axis > 2 || before < 0 || before + s[axis] > full_extent)
      throw ShapeError("pad_zero3 out of range");
    detail::Node n;
    n.op = detail::Op::PadZero3;
    std::vector<int> dims = s.dims;
    dims[static_cast<size_t>(axis)] = full_extent;
    n.shape = Shape(dims);
    n.attr.a0 = axis; n.attr.a1 = before; n.attr.a2 = s[axis];
    set_inputs(n, x);
    return push(std::move(n));
  }

  DiffTensor concat3(DiffTensor a, DiffTensor b, int axis) {
    check_graph(a); check_graph(b);
    const Shape& sa = a.shape(); const Shape& sb = b.shape();
    if (sa.rank() != 3 || sb.rank() != 3) throw ShapeError("concat3 expects rank-3");
    for (int i = 0; i < 3; ++i)
      if (i != axis && sa[i] != sb[i])
        throw ShapeError("concat3 extents differ off-axis: " + sa.str() + " vs " + sb.str());
    detail::Node n;
    n.op = detail::Op::Concat3;
    std::vector<int> dims = sa.dims;
    dims[static_cast<size_t>(axis)] = sa[axis] + sb[axis];
    n.shape = Shape(dims);
    n.attr.a0 = axis; n.attr.a1 = sa[axis];
    set_inputs(n, a, b);
    return push(std::move(n));
  }

  /// Reflection-pad the two spatial axes of an H x W x C tensor at the
  /// bottom/right edges (mirror without repeating the edge sample).
  DiffTensor pad_reflect2d(DiffTensor x, int target_h, int target_w) {
    check_graph(x);
    const Shape& s = x.shape();
    if (s.rank() != 3) throw ShapeError("pad_reflect2d expects rank-3");
    if (target_h < s[0] || target_w < s[1] || target_h > 2 * s[0] - 1 || target_w > 2 * s[1] - 1)
      throw ShapeError("pad_reflect2d target out of range");
    detail::Node n;
    n.op = detail::Op::PadReflect2d;
    n.shape = Shape{target_h, target_w, s[2]};
    n.attr.a0 = s[0]; n.attr.a1 = s[1];
    set_inputs(n, x);
    return push(std::move(n));
  }

  // ---- reductions ----------------------------------------------------------

  /// Sum over the given axes (sorted, unique); empty means all axes.
  /// Reducing all axes yields a [1] scalar.
  DiffTensor sum_axes(DiffTensor x, std::vector<int> axes) {
    check_graph(x);
    const Shape& s = x.shape();
    normalize_axes(axes, s.rank());
    detail::Node n;
    n.op = detail::Op::SumAxes;
    n.shape = reduced_shape(s, axes);
    n.attr.axes = std::move(axes);
    set_inputs(n, x);
    return push(std::move(n));
  }

  DiffTensor sum_all(DiffTensor x) { return sum_axes(x, {}); }

  DiffTensor mean_all(DiffTensor x) {
    return affine(sum_all(x), 1.0 / static_cast<double>(x.shape().numel()), 0.0);
  }

  DiffTensor mean_axes(DiffTensor x, std::vector<int> axes) {
    const Shape& s = x.shape();
    std::vector<int> ax = axes;
    normalize_axes(ax, s.rank());
    double n = 1;
    for (int a : ax) n *= s[a];
    return affine(sum_axes(x, std::move(ax)), 1.0 / n, 0.0);
  }

  /// Broadcast x back along `axes` to `target` (adjoint of sum_axes).
  DiffTensor expand_axes(DiffTensor x, Shape target, std::vector<int> axes) {
    check_graph(x);
    normalize_axes(axes, target.rank());
    if (reduced_shape(target, axes) != x.shape())
      throw ShapeError("expand_axes: " + x.shape().str() + " does not reduce-match " + target.str());
    detail::Node n;
    n.op = detail::Op::ExpandAxes;
    n.shape = target;
    n.attr.axes = std::move(axes);
    n.attr.target = std::move(target);
    set_inputs(n, x);
    return push(std::move(n));
  }

  /// Full L2 norm over every element; gradient at the zero tensor is zero.
  DiffTensor l2norm(DiffTensor x) { return unary_to(detail::Op::L2Norm, x, scalar_shape()); }

  /// Row-wise L2 norms of an F x K matrix -> F-vector.
  DiffTensor rownorm(DiffTensor x) {
    check_graph(x);
    if (x.shape().rank() != 2) throw ShapeError("rownorm expects rank-2");
    return unary_to(detail::Op::RowNorm, x, Shape{x.shape()[0]});
  }

  /// Per-frame Euclidean distance matrices: F x J x 3 -> F x J x J.
  DiffTensor pairwise_edm(DiffTensor x) {
    check_graph(x);
    const Shape& s = x.shape();
    if (s.rank() != 3 || s[2] != 3) throw ShapeError("pairwise_edm expects F x J x 3");
    return unary_to(detail::Op::PairwiseEdm, x, Shape{s[0], s[1], s[1]});
  }

  /// Spec-facing dispatch over the reduce op set.
  DiffTensor reduce(RdKind kind, DiffTensor x, std::vector<int> axes = {}) {
    switch (kind) {
      case RdKind::Sum: return sum_axes(x, std::move(axes));
      case RdKind::Mean:
        return axes.empty() ? mean_all(x) : mean_axes(x, std::move(axes));
      case RdKind::L2Norm:
        if (!axes.empty()) throw ContractError("l2norm reduces all axes");
        return l2norm(x);
    }
    throw ContractError("unknown reduce kind");
  }

  // ---- autodiff -------------------------------------------------------------

  /// Reverse-mode sweep from a scalar root. Accumulates d(root)/d(leaf) into
  /// the grad slot of every reachable leaf that requires gradients; repeated
  /// calls without reset_grads() keep accumulating.
  void backward(DiffTensor root) {
    check_graph(root);
    if (!node(root.id()).shape.is_scalar())
      throw ContractError("backward root must be scalar, got " + node(root.id()).shape.str());
    auto gm = build_grad_nodes(root.id(), [this](int id) { return nodes_[static_cast<size_t>(id)].requires_grad; });
    for (const auto& [nid, gid] : gm) {
      detail::Node& n = nodes_[static_cast<size_t>(nid)];
      if (n.op != detail::Op::Leaf || !n.requires_grad) continue;
      const std::vector<double>& g = nodes_[static_cast<size_t>(gid)].value;
      if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
      for (size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }
  }

  /// d(root)/d(x) as a graph node, usable inside further expressions
  /// (this is what makes the R1 term differentiable in turn).
  DiffTensor grad_of(DiffTensor root, DiffTensor x) {
    check_graph(root); check_graph(x);
    if (!node(root.id()).shape.is_scalar()) throw ContractError("grad_of root must be scalar");
    // Restrict the sweep to nodes that depend on x.
    std::vector<char> dep(static_cast<size_t>(root.id()) + 1, 0);
    dep[static_cast<size_t>(x.id())] = 1;
    for (int id = x.id() + 1; id <= root.id(); ++id) {
      const detail::Node& n = nodes_[static_cast<size_t>(id)];
      for (int s = 0; s < n.nin; ++s)
        if (dep[static_cast<size_t>(n.in[static_cast<size_t>(s)])]) { dep[static_cast<size_t>(id)] = 1; break; }
    }
    auto gm = build_grad_nodes(root.id(), [&dep](int id) {
      return id < static_cast<int>(dep.size()) && dep[static_cast<size_t>(id)];
    });
    auto it = gm.find(x.id());
    if (it == gm.end()) return constant_fill(x.shape(), 0.0);
    return DiffTensor(this, it->second);
  }

  void reset_grads() {
    for (auto& n : nodes_) n.grad.clear();
  }

 private:
  friend class DiffTensor;

  std::vector<detail::Node> nodes_;
  std::unordered_map<std::string, int> param_nodes_;
  std::vector<std::string> frozen_prefixes_;

  void check_graph(DiffTensor t) const {
    if (!t.defined() || t.graph() != this)
      throw ContractError("tensor does not belong to this graph");
  }

  static void normalize_axes(std::vector<int>& axes, int rank) {
    if (axes.empty()) {
      for (int i = 0; i < rank; ++i) axes.push_back(i);
      return;
    }
    std::sort(axes.begin(), axes.end());
    for (size_t i = 0; i < axes.size(); ++i) {
      if (axes[i] < 0 || axes[i] >= rank) throw ShapeError("reduce axis out of range");
      if (i > 0 && axes[i] == axes[i - 1]) throw ShapeError("duplicate reduce axis");
    }
  }

  static Shape reduced_shape(const Shape& s, const std::vector<int>& axes) {
    std::vector<int> dims;
    size_t k = 0;
    for (int i = 0; i < s.rank(); ++i) {
      if (k < axes.size() && axes[k] == i) { ++k; continue; }
      dims.push_back(s[i]);
    }
    if (dims.empty()) dims.push_back(1);
    return Shape(dims);
  }

  void set_inputs(detail::Node& n, DiffTensor a) {
    n.in[0] = a.id();
    n.nin = 1;
    n.requires_grad = node(a.id()).requires_grad;
  }
  void set_inputs(detail::Node& n, DiffTensor a, DiffTensor b) {
    n.in[0] = a.id();
    n.in[1] = b.id();
    n.nin = 2;
    n.requires_grad = node(a.id()).requires_grad || node(b.id()).requires_grad;
  }

  detail::Node make_unary(detail::Op op, DiffTensor x) {
    check_graph(x);
    detail::Node n;
    n.op = op;
    n.shape = x.shape();
    set_inputs(n, x);
    return n;
  }

  DiffTensor unary(detail::Op op, DiffTensor x) { return push(make_unary(op, x)); }

  DiffTensor unary_to(detail::Op op, DiffTensor x, Shape out) {
    detail::Node n = make_unary(op, x);
    n.shape = std::move(out);
    return push(std::move(n));
  }

  DiffTensor binary(detail::Op op, DiffTensor a, DiffTensor b) {
    check_graph(a); check_graph(b);
    const Shape& sa = a.shape(); const Shape& sb = b.shape();
    Shape out;
    if (sa == sb) out = sa;
    else if (sa.is_scalar()) out = sb;
    else if (sb.is_scalar()) out = sa;
    else throw ShapeError("pointwise shapes incompatible: " + sa.str() + " vs " + sb.str());
    detail::Node n;
    n.op = op;
    n.shape = std::move(out);
    set_inputs(n, a, b);
    return push(std::move(n));
  }

  DiffTensor push(detail::Node n) {
    eval(n);
    nodes_.push_back(std::move(n));
    return DiffTensor(this, static_cast<int>(nodes_.size()) - 1);
  }

  const std::vector<double>& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  // ---- forward kernels ------------------------------------------------------

  void eval(detail::Node& n) {
    using detail::Op;
    if (n.op == Op::Leaf) return;
    n.value.assign(static_cast<size_t>(n.shape.numel()), 0.0);
    double* out = n.value.data();
    const std::vector<double>* a = n.nin > 0 ? &val(n.in[0]) : nullptr;
    const std::vector<double>* b = n.nin > 1 ? &val(n.in[1]) : nullptr;
    switch (n.op) {
      case Op::Add: eval_binary(n, *a, *b, [](double x, double y) { return x + y; }); break;
      case Op::Sub: eval_binary(n, *a, *b, [](double x, double y) { return x - y; }); break;
      case Op::Mul: eval_binary(n, *a, *b, [](double x, double y) { return x * y; }); break;
      case Op::Div: eval_binary(n, *a, *b, [](double x, double y) { return x / y; }); break;
      case Op::SafeDiv:
        eval_binary(n, *a, *b, [](double x, double y) { return y == 0.0 ? 0.0 : x / y; });
        break;
      case Op::Relu:
        for (size_t i = 0; i < a->size(); ++i) out[i] = (*a)[i] > 0.0 ? (*a)[i] : 0.0;
        break;
      case Op::Sigmoid:
        for (size_t i = 0; i < a->size(); ++i) {
          const double x = (*a)[i];
          out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        }
        break;
      case Op::Log:
        for (size_t i = 0; i < a->size(); ++i) {
          if ((*a)[i] <= 0.0) throw DomainError("log of non-positive value");
          out[i] = std::log((*a)[i]);
        }
        break;
      case Op::Square:
        for (size_t i = 0; i < a->size(); ++i) out[i] = (*a)[i] * (*a)[i];
        break;
      case Op::Sqrt:
        for (size_t i = 0; i < a->size(); ++i) {
          if ((*a)[i] < 0.0) throw DomainError("sqrt of negative value");
          out[i] = std::sqrt((*a)[i]);
        }
        break;
      case Op::Abs:
        for (size_t i = 0; i < a->size(); ++i) out[i] = std::fabs((*a)[i]);
        break;
      case Op::Clamp:
        for (size_t i = 0; i < a->size(); ++i)
          out[i] = std::min(std::max((*a)[i], n.attr.d0), n.attr.d1);
        break;
      case Op::Affine:
        for (size_t i = 0; i < a->size(); ++i) out[i] = n.attr.d0 * (*a)[i] + n.attr.d1;
        break;
      case Op::Matmul: {
        const Shape& sa = node(n.in[0]).shape;
        const int rows = sa[0], inner = sa[1], cols = n.shape[1];
        for (int i = 0; i < rows; ++i) {
          const double* arow = a->data() + static_cast<size_t>(i) * inner;
          double* orow = out + static_cast<size_t>(i) * cols;
          for (int k = 0; k < inner; ++k) {
            const double av = arow[k];
            const double* brow = b->data() + static_cast<size_t>(k) * cols;
            for (int j = 0; j < cols; ++j) orow[j] += av * brow[j];
          }
        }
        break;
      }
      case Op::Transpose2d: {
        const Shape& sx = node(n.in[0]).shape;
        const int r = sx[0], c = sx[1];
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            out[static_cast<size_t>(j) * r + i] = (*a)[static_cast<size_t>(i) * c + j];
        break;
      }
      case Op::Bmm: {
        const Shape& sa = node(n.in[0]).shape;
        const int F = sa[0], rows = sa[1], inner = sa[2], cols = n.shape[2];
        for (int f = 0; f < F; ++f) {
          const double* af = a->data() + static_cast<size_t>(f) * rows * inner;
          const double* bf = b->data() + static_cast<size_t>(f) * inner * cols;
          double* of = out + static_cast<size_t>(f) * rows * cols;
          for (int i = 0; i < rows; ++i)
            for (int k = 0; k < inner; ++k) {
              const double av = af[static_cast<size_t>(i) * inner + k];
              const double* brow = bf + static_cast<size_t>(k) * cols;
              double* orow = of + static_cast<size_t>(i) * cols;
              for (int j = 0; j < cols; ++j) orow[j] += av * brow[j];
            }
        }
        break;
      }
      case Op::Transpose12: {
        const Shape& sx = node(n.in[0]).shape;
        const int F = sx[0], r = sx[1], c = sx[2];
        for (int f = 0; f < F; ++f)
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
              out[(static_cast<size_t>(f) * c + j) * r + i] =
                  (*a)[(static_cast<size_t>(f) * r + i) * c + j];
        break;
      }
      case Op::ConvFwd: eval_conv_fwd(n, *a, *b); break;
      case Op::ConvDx: eval_conv_dx(n, *a, *b); break;
      case Op::ConvDk: eval_conv_dk(n, *a, *b); break;
      case Op::PadReflect2d: {
        const int H = n.attr.a0, W = n.attr.a1, C = n.shape[2];
        const int Hp = n.shape[0], Wp = n.shape[1];
        for (int i = 0; i < Hp; ++i) {
          const int si = i < H ? i : 2 * H - 2 - i;
          for (int j = 0; j < Wp; ++j) {
            const int sj = j < W ? j : 2 * W - 2 - j;
            const double* src = a->data() + (static_cast<size_t>(si) * W + sj) * C;
            double* dst = out + (static_cast<size_t>(i) * Wp + j) * C;
            for (int c = 0; c < C; ++c) dst[c] = src[c];
          }
        }
        break;
      }
      case Op::FoldReflect2d: {
        // adjoint of PadReflect2d: scatter-add padded cells back to sources
        const Shape& sx = node(n.in[0]).shape;
        const int Hp = sx[0], Wp = sx[1], C = sx[2];
        const int H = n.shape[0], W = n.shape[1];
        for (int i = 0; i < Hp; ++i) {
          const int si = i < H ? i : 2 * H - 2 - i;
          for (int j = 0; j < Wp; ++j) {
            const int sj = j < W ? j : 2 * W - 2 - j;
            const double* src = a->data() + (static_cast<size_t>(i) * Wp + j) * C;
            double* dst = out + (static_cast<size_t>(si) * W + sj) * C;
            for (int c = 0; c < C; ++c) dst[c] += src[c];
          }
        }
        break;
      }
      case Op::Slice3: {
        const Shape& sx = node(n.in[0]).shape;
        copy_slice3(a->data(), sx, out, n.shape, n.attr.a0, n.attr.a1, /*to_out=*/true);
        break;
      }
      case Op::PadZero3: {
        const Shape& sx = node(n.in[0]).shape;
        copy_slice3(out, n.shape, const_cast<double*>(a->data()), sx, n.attr.a0, n.attr.a1,
                    /*to_out=*/false);
        break;
      }
      case Op::Concat3: {
        const Shape& sa = node(n.in[0]).shape;
        const Shape& sb = node(n.in[1]).shape;
        copy_slice3(out, n.shape, const_cast<double*>(a->data()), sa, n.attr.a0, 0, false);
        copy_slice3(out, n.shape, const_cast<double*>(b->data()), sb, n.attr.a0, sa[n.attr.a0], false);
        break;
      }
      case Op::Reshape: std::copy(a->begin(), a->end(), out); break;
      case Op::SumAxes: {
        const Shape& sx = node(n.in[0]).shape;
        reduce_kernel(a->data(), sx, out, n.attr.axes, /*expand=*/false);
        break;
      }
      case Op::ExpandAxes: {
        reduce_kernel(out, n.shape, const_cast<double*>(a->data()), n.attr.axes, /*expand=*/true);
        break;
      }
      case Op::L2Norm: {
        double s = 0.0;
        for (double v : *a) s += v * v;
        out[0] = std::sqrt(s);
        break;
      }
      case Op::RowNorm: {
        const Shape& sx = node(n.in[0]).shape;
        const int rows = sx[0], cols = sx[1];
        for (int i = 0; i < rows; ++i) {
          double s = 0.0;
          const double* row = a->data() + static_cast<size_t>(i) * cols;
          for (int j = 0; j < cols; ++j) s += row[j] * row[j];
          out[i] = std::sqrt(s);
        }
        break;
      }
      case Op::PairwiseEdm: {
        const Shape& sx = node(n.in[0]).shape;
        const int F = sx[0], J = sx[1];
        for (int f = 0; f < F; ++f) {
          const double* xf = a->data() + static_cast<size_t>(f) * J * 3;
          double* of = out + static_cast<size_t>(f) * J * J;
          for (int i = 0; i < J; ++i)
            for (int j = i + 1; j < J; ++j) {
              const double dx = xf[i * 3] - xf[j * 3];
              const double dy = xf[i * 3 + 1] - xf[j * 3 + 1];
              const double dz = xf[i * 3 + 2] - xf[j * 3 + 2];
              const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
              of[static_cast<size_t>(i) * J + j] = d;
              of[static_cast<size_t>(j) * J + i] = d;
            }
        }
        break;
      }
      case Op::Leaf: break;
    }
  }

  template <typename F>
  void eval_binary(detail::Node& n, const std::vector<double>& a, const std::vector<double>& b,
                   F f) {
    double* out = n.value.data();
    const size_t na = a.size(), nb = b.size();
    if (na == nb) {
      for (size_t i = 0; i < na; ++i) out[i] = f(a[i], b[i]);
    } else if (na == 1) {
      for (size_t i = 0; i < nb; ++i) out[i] = f(a[0], b[i]);
    } else {
      for (size_t i = 0; i < na; ++i) out[i] = f(a[i], b[0]);
    }
  }

  void eval_conv_fwd(detail::Node& n, const std::vector<double>& x, const std::vector<double>& k) {
    const detail::ConvGeom& g = n.attr.geom;
    double* out = n.value.data();
    for (int i = 0; i < g.Ho; ++i)
      for (int j = 0; j < g.Wo; ++j) {
        double* orow = out + (static_cast<size_t>(i) * g.Wo + j) * g.Co;
        for (int a = 0; a < g.kh; ++a) {
          const int p = i * g.stride + a - g.pt;
          if (p < 0 || p >= g.H) continue;
          for (int b = 0; b < g.kw; ++b) {
            const int q = j * g.stride + b - g.pl;
            if (q < 0 || q >= g.W) continue;
            const double* xrow = x.data() + (static_cast<size_t>(p) * g.W + q) * g.Ci;
            const double* krow = k.data() + (static_cast<size_t>(a) * g.kw + b) * g.Ci * g.Co;
            for (int ci = 0; ci < g.Ci; ++ci) {
              const double xv = xrow[ci];
              const double* kk = krow + static_cast<size_t>(ci) * g.Co;
              for (int co = 0; co < g.Co; ++co) orow[co] += xv * kk[co];
            }
          }
        }
      }
  }

  void eval_conv_dx(detail::Node& n, const std::vector<double>& grad,
                    const std::vector<double>& k) {
    const detail::ConvGeom& g = n.attr.geom;
    double* out = n.value.data();  // H x W x Ci
    for (int i = 0; i < g.Ho; ++i)
      for (int j = 0; j < g.Wo; ++j) {
        const double* grow = grad.data() + (static_cast<size_t>(i) * g.Wo + j) * g.Co;
        for (int a = 0; a < g.kh; ++a) {
          const int p = i * g.stride + a - g.pt;
          if (p < 0 || p >= g.H) continue;
          for (int b = 0; b < g.kw; ++b) {
            const int q = j * g.stride + b - g.pl;
            if (q < 0 || q >= g.W) continue;
            double* xrow = out + (static_cast<size_t>(p) * g.W + q) * g.Ci;
            const double* krow = k.data() + (static_cast<size_t>(a) * g.kw + b) * g.Ci * g.Co;
            for (int ci = 0; ci < g.Ci; ++ci) {
              const double* kk = krow + static_cast<size_t>(ci) * g.Co;
              double s = 0.0;
              for (int co = 0; co < g.Co; ++co) s += grow[co] * kk[co];
              xrow[ci] += s;
            }
          }
        }
      }
  }

  void eval_conv_dk(detail::Node& n, const std::vector<double>& x,
                    const std::vector<double>& grad) {
    const detail::ConvGeom& g = n.attr.geom;
    double* out = n.value.data();  // kh x kw x Ci x Co
    for (int i = 0; i < g.Ho; ++i)
      for (int j = 0; j < g.Wo; ++j) {
        const double* grow = grad.data() + (static_cast<size_t>(i) * g.Wo + j) * g.Co;
        for (int a = 0; a < g.kh; ++a) {
          const int p = i * g.stride + a - g.pt;
          if (p < 0 || p >= g.H) continue;
          for (int b = 0; b < g.kw; ++b) {
            const int q = j * g.stride + b - g.pl;
            if (q < 0 || q >= g.W) continue;
            const double* xrow = x.data() + (static_cast<size_t>(p) * g.W + q) * g.Ci;
            double* krow = out + (static_cast<size_t>(a) * g.kw + b) * g.Ci * g.Co;
            for (int ci = 0; ci < g.Ci; ++ci) {
              const double xv = xrow[ci];
              double* kk = krow + static_cast<size_t>(ci) * g.Co;
              for (int co = 0; co < g.Co; ++co) kk[co] += xv * grow[co];
            }
          }
        }
      }
  }

  /// Copy between a rank-3 tensor and a contiguous slice of a larger one.
  /// to_out=true: big -> small (slice); to_out=false: small scattered into big.
  void copy_slice3(const double* big, const Shape& big_shape, double* small,
                   const Shape& small_shape, int axis, int start, bool to_out) {
    const auto bs = detail::row_major_strides(big_shape);
    const int d0 = small_shape[0], d1 = small_shape[1], d2 = small_shape[2];
    size_t si = 0;
    for (int i = 0; i < d0; ++i)
      for (int j = 0; j < d1; ++j)
        for (int k = 0; k < d2; ++k, ++si) {
          const int bi = axis == 0 ? i + start : i;
          const int bj = axis == 1 ? j + start : j;
          const int bk = axis == 2 ? k + start : k;
          const size_t bidx = static_cast<size_t>(bi) * bs[0] + static_cast<size_t>(bj) * bs[1] +
                              static_cast<size_t>(bk) * bs[2];
          if (to_out) small[si] = big[bidx];
          else const_cast<double*>(big)[bidx] = small[si];
        }
  }

  /// expand=false: sum `big` over `axes` into `small` (already zeroed).
  /// expand=true: broadcast `small` along `axes` into `big`.
  void reduce_kernel(const double* big, const Shape& big_shape, double* small,
                     const std::vector<int>& axes, bool expand) {
    const int rank = big_shape.rank();
    std::vector<char> reduced(static_cast<size_t>(rank), 0);
    for (int a : axes) reduced[static_cast<size_t>(a)] = 1;
    std::vector<std::int64_t> small_strides(static_cast<size_t>(rank), 0);
    {
      std::int64_t stride = 1;
      for (int i = rank - 1; i >= 0; --i) {
        if (!reduced[static_cast<size_t>(i)]) {
          small_strides[static_cast<size_t>(i)] = stride;
          stride *= big_shape[i];
        }
      }
    }
    std::vector<int> idx(static_cast<size_t>(rank), 0);
    const std::int64_t total = big_shape.numel();
    std::int64_t sidx = 0;
    for (std::int64_t flat = 0; flat < total; ++flat) {
      if (expand) const_cast<double*>(big)[flat] = small[sidx];
      else small[sidx] += big[flat];
      // advance multi-index
      for (int i = rank - 1; i >= 0; --i) {
        idx[static_cast<size_t>(i)]++;
        sidx += small_strides[static_cast<size_t>(i)];
        if (idx[static_cast<size_t>(i)] < big_shape[i]) break;
        sidx -= small_strides[static_cast<size_t>(i)] * big_shape[i];
        idx[static_cast<size_t>(i)] = 0;
      }
    }
  }

  // ---- symbolic backward ----------------------------------------------------

  /// Reduce an upstream gradient to the shape of a (possibly scalar-broadcast)
  /// input of a pointwise op. Takes the target by value: the argument often
  /// aliases node storage that reallocates as gradient nodes are pushed.
  DiffTensor reduce_to(DiffTensor g, Shape target) {
    if (g.shape() == target) return g;
    if (!target.is_scalar()) throw ShapeError("cannot reduce gradient to " + target.str());
    DiffTensor s = sum_all(g);
    return target == s.shape() ? s : reshape(s, target);
  }

  /// Constant node holding f(value) of node `id`; used for a.e.-constant
  /// local derivatives (relu / abs / clamp masks).
  template <typename F>
  DiffTensor value_mask(int id, F f) {
    const std::vector<double>& v = val(id);
    std::vector<double> m(v.size());
    for (size_t i = 0; i < v.size(); ++i) m[i] = f(v[i]);
    return constant(nodes_[static_cast<size_t>(id)].shape, m);
  }

  template <typename Pred>
  std::unordered_map<int, int> build_grad_nodes(int root, Pred needs) {
    std::unordered_map<int, int> gm;
    gm[root] = scalar(1.0).id();
    auto accum = [&](int nid, DiffTensor g) {
      auto it = gm.find(nid);
      if (it == gm.end()) gm[nid] = g.id();
      else it->second = add(DiffTensor(this, it->second), g).id();
    };
    for (int id = root; id >= 0; --id) {
      auto it = gm.find(id);
      if (it == gm.end()) continue;
      // Copy of the node header: building VJP nodes may reallocate nodes_.
      const detail::Node hdr = [this, id] {
        const detail::Node& n = nodes_[static_cast<size_t>(id)];
        detail::Node h;
        h.op = n.op; h.shape = n.shape; h.in = n.in; h.nin = n.nin; h.attr = n.attr;
        return h;
      }();
      if (hdr.nin == 0) continue;
      DiffTensor u(this, it->second);
      DiffTensor y(this, id);
      const int ia = hdr.in[0];
      const int ib = hdr.in[1];
      const bool na = needs(ia);
      const bool nb = hdr.nin > 1 && needs(ib);
      if (!na && !nb) continue;
      DiffTensor A(this, ia);
      DiffTensor B = hdr.nin > 1 ? DiffTensor(this, ib) : DiffTensor();
      using detail::Op;
      switch (hdr.op) {
        case Op::Add:
          if (na) accum(ia, reduce_to(u, A.shape()));
          if (nb) accum(ib, reduce_to(u, B.shape()));
          break;
        case Op::Sub:
          if (na) accum(ia, reduce_to(u, A.shape()));
          if (nb) accum(ib, reduce_to(neg(u), B.shape()));
          break;
        case Op::Mul:
          if (na) accum(ia, reduce_to(mul(u, B), A.shape()));
          if (nb) accum(ib, reduce_to(mul(u, A), B.shape()));
          break;
        case Op::Div:
          if (na) accum(ia, reduce_to(div(u, B), A.shape()));
          if (nb) accum(ib, reduce_to(neg(mul(u, div(y, B))), B.shape()));
          break;
        case Op::SafeDiv:
          if (na) accum(ia, reduce_to(safe_div(u, B), A.shape()));
          if (nb) accum(ib, reduce_to(neg(mul(u, safe_div(y, B))), B.shape()));
          break;
        case Op::Relu:
          if (na) accum(ia, mul(u, value_mask(ia, [](double v) { return v > 0.0 ? 1.0 : 0.0; })));
          break;
        case Op::Sigmoid:
          if (na) accum(ia, mul(u, mul(y, affine(y, -1.0, 1.0))));
          break;
        case Op::Log:
          if (na) accum(ia, div(u, A));
          break;
        case Op::Square:
          if (na) accum(ia, mul(u, affine(A, 2.0, 0.0)));
          break;
        case Op::Sqrt:
          if (na) accum(ia, div(affine(u, 0.5, 0.0), y));
          break;
        case Op::Abs:
          if (na)
            accum(ia, mul(u, value_mask(ia, [](double v) {
                    return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                  })));
          break;
        case Op::Clamp: {
          const double lo = hdr.attr.d0, hi = hdr.attr.d1;
          if (na)
            accum(ia, mul(u, value_mask(ia, [lo, hi](double v) {
                    return (v >= lo && v <= hi) ? 1.0 : 0.0;
                  })));
          break;
        }
        case Op::Affine:
          if (na) accum(ia, affine(u, hdr.attr.d0, 0.0));
          break;
        case Op::Matmul:
          if (na) accum(ia, matmul(u, transpose2d(B)));
          if (nb) accum(ib, matmul(transpose2d(A), u));
          break;
        case Op::Transpose2d:
          if (na) accum(ia, transpose2d(u));
          break;
        case Op::Bmm:
          if (na) accum(ia, bmm(u, transpose12(B)));
          if (nb) accum(ib, bmm(transpose12(A), u));
          break;
        case Op::Transpose12:
          if (na) accum(ia, transpose12(u));
          break;
        case Op::ConvFwd:
          if (na) accum(ia, conv_partner(detail::Op::ConvDx, u, B, hdr.attr.geom));
          if (nb) accum(ib, conv_partner(detail::Op::ConvDk, A, u, hdr.attr.geom));
          break;
        case Op::ConvDx:
          if (na) accum(ia, conv_partner(detail::Op::ConvFwd, u, B, hdr.attr.geom));
          if (nb) accum(ib, conv_partner(detail::Op::ConvDk, u, A, hdr.attr.geom));
          break;
        case Op::ConvDk:
          if (na) accum(ia, conv_partner(detail::Op::ConvDx, B, u, hdr.attr.geom));
          if (nb) accum(ib, conv_partner(detail::Op::ConvFwd, A, u, hdr.attr.geom));
          break;
        case Op::PadReflect2d: {
          detail::Node m;
          m.op = detail::Op::FoldReflect2d;
          m.shape = Shape{hdr.attr.a0, hdr.attr.a1, hdr.shape[2]};
          m.attr = hdr.attr;
          set_inputs(m, u);
          if (na) accum(ia, push(std::move(m)));
          break;
        }
        case Op::FoldReflect2d:
          if (na) accum(ia, pad_reflect2d(u, node(ia).shape[0], node(ia).shape[1]));
          break;
        case Op::Slice3:
          if (na) accum(ia, pad_zero3(u, hdr.attr.a0, hdr.attr.a1, hdr.attr.a2));
          break;
        case Op::PadZero3:
          if (na) accum(ia, slice3(u, hdr.attr.a0, hdr.attr.a1, hdr.attr.a2));
          break;
        case Op::Concat3:
          if (na) accum(ia, slice3(u, hdr.attr.a0, 0, hdr.attr.a1));
          if (nb) accum(ib, slice3(u, hdr.attr.a0, hdr.attr.a1, hdr.shape[hdr.attr.a0] - hdr.attr.a1));
          break;
        case Op::Reshape:
          if (na) accum(ia, reshape(u, A.shape()));
          break;
        case Op::SumAxes:
          if (na) accum(ia, expand_axes(u, A.shape(), hdr.attr.axes));
          break;
        case Op::ExpandAxes:
          if (na) accum(ia, sum_axes(u, hdr.attr.axes));
          break;
        case Op::L2Norm:
          if (na) accum(ia, mul(A, safe_div(u, y)));
          break;
        case Op::RowNorm: {
          if (na) {
            DiffTensor scale = safe_div(u, y);  // F-vector
            accum(ia, mul(A, expand_axes(scale, A.shape(), {1})));
          }
          break;
        }
        case Op::PairwiseEdm: {
          if (na) {
            DiffTensor S = add(u, transpose12(u));
            DiffTensor R = safe_div(S, y);
            DiffTensor rowsum = sum_axes(R, {2});                       // F x J
            DiffTensor term1 = mul(A, expand_axes(rowsum, A.shape(), {2}));
            DiffTensor term2 = bmm(R, A);
            accum(ia, sub(term1, term2));
          }
          break;
        }
        case Op::Leaf:
          break;
      }
    }
    return gm;
  }

  DiffTensor conv_partner(detail::Op op, DiffTensor a, DiffTensor b, const detail::ConvGeom& geom) {
    detail::Node n;
    n.op = op;
    n.attr.geom = geom;
    switch (op) {
      case detail::Op::ConvFwd: n.shape = Shape{geom.Ho, geom.Wo, geom.Co}; break;
      case detail::Op::ConvDx: n.shape = Shape{geom.H, geom.W, geom.Ci}; break;
      case detail::Op::ConvDk: n.shape = Shape{geom.kh, geom.kw, geom.Ci, geom.Co}; break;
      default: throw ContractError("conv_partner misuse");
    }
    set_inputs(n, a, b);
    return push(std::move(n));
  }
};

inline const Shape& DiffTensor::shape() const { return g_->node(id_).shape; }
inline const std::vector<double>& DiffTensor::value() const { return g_->node(id_).value; }
inline const std::vector<double>& DiffTensor::grad() const { return g_->node(id_).grad; }
inline double DiffTensor::scalar() const {
  if (!shape().is_scalar()) throw ContractError("scalar() on non-scalar tensor");
  return value()[0];
}

}  // namespace stmi
