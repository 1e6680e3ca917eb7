#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace contrastgeo {

/// Dimension list of a dense row-major tensor. An empty shape is a scalar.
using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Dense n-dimensional array of 64-bit reals, optionally attached to a
/// gradient tape. Copies are plain value copies; only the tape handle is
/// shared, never the storage.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  Tape* tape = nullptr;
  int node = -1;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v);

  static Tensor zeros(const Shape& s);
  static Tensor full(const Shape& s, double value);
  static Tensor scalar(double value);
  /// 1-D tensor from a value list.
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  bool on_tape() const { return tape != nullptr && node >= 0; }

  /// Value of a scalar tensor.
  double item() const;
  double at(std::size_t flat) const { return values[flat]; }
  double& at(std::size_t flat) { return values[flat]; }
  double operator()(std::size_t i, std::size_t j) const;
  double& operator()(std::size_t i, std::size_t j);
};

/// Named parameter collection. std::map keeps iteration deterministic.
using ParamMap = std::map<std::string, Tensor>;

/// Gradients produced by one backward pass, indexed by tape node id.
/// Nodes not reached by the sweep report zero gradients.
class GradientMap {
 public:
  GradientMap(std::vector<Shape> shapes, std::vector<std::vector<double>> grads)
      : shapes_(std::move(shapes)), grads_(std::move(grads)) {}

  Tensor at(int node_id) const;
  Tensor at(const Tensor& t) const;
  std::size_t node_count() const { return grads_.size(); }

 private:
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> grads_;
};

/// Backward callback of one tape node: reads the node's output gradient and
/// accumulates into the gradient buffers of its inputs.
using BackwardFn = std::function<void(const std::vector<double>& out_grad,
                                      std::vector<std::vector<double>>& grads)>;

/// Append-only reverse-mode gradient tape. Forward kernels append nodes;
/// backward walks the nodes in strict reverse append order, which makes
/// fan-out accumulation order fixed and results bit-deterministic.
/// Single-threaded by contract.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Attach a constant value as a differentiable leaf.
  Tensor leaf(const Tensor& value);
  Tensor leaf(Shape shape, std::vector<double> values);

  /// Record a computed node. Called by kernels, not by user code.
  Tensor emit(const char* op, Shape out_shape, std::vector<double> out_values,
              std::vector<int> input_nodes, BackwardFn backward);

  /// Reverse sweep from a scalar loss. A tape may be swept once; reset()
  /// rearms it.
  GradientMap backward(const Tensor& loss);

  void reset();
  std::size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    const char* op;
    Shape shape;
    std::vector<int> inputs;
    BackwardFn backward;  // empty for leaves
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Attach every parameter in the map to the tape; returns the bound map.
ParamMap bind_params(const ParamMap& params, Tape& tape);

/// Fetch a named parameter; a missing key is a contract error.
const Tensor& param(const ParamMap& params, const std::string& key);

// ---------------------------------------------------------------------------
// Kernels. Each computes the forward value eagerly and, when any input is on
// a tape, records the matching backward rule. Mixing tensors from two
// different tapes is a contract error.
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// Broadcast-add a vector over the last axis: out[..., j] = x[..., j] + v[j].
Tensor add_rowvec(const Tensor& x, const Tensor& v);
/// Numerically stable softmax along `axis` (max subtraction).
Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalize the last axis to zero mean / unit variance, then apply the
/// affine map gain, bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
/// Concatenate along the last axis; all other dimensions must agree.
Tensor concat_last(const Tensor& a, const Tensor& b);
/// Stack equal-shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);
Tensor mean_axis(const Tensor& x, std::size_t axis);
/// Sum of all entries, as a scalar.
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
/// Extract row `index` of a 2-D tensor as a 1-D tensor.
Tensor row(const Tensor& x, std::size_t index);
/// Gather rows of `table` by id; backward scatter-adds into the table.
Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids);
/// s[i][j] = cos(t_i, l_j) for row sets t [N x d], l [K x d].
/// Zero-norm rows are rejected.
Tensor cosine_similarity_matrix(const Tensor& t, const Tensor& l);
/// Mean over rows of -sum_c y[c] * ln(p[c] + 1e-12). Rows of p and y must
/// each sum to one.
Tensor cross_entropy(const Tensor& p, const Tensor& y);

}  // namespace contrastgeo
