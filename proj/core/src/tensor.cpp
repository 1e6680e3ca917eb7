#include "contrastgeo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "contrastgeo/errors.hpp"

namespace contrastgeo {

namespace {

constexpr double kLogEps = 1e-12;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

/// Resolve the tape shared by a kernel's inputs; nullptr when all detached.
Tape* joint_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->on_tape()) continue;
    if (tape == nullptr) {
      tape = t->tape;
    } else if (tape != t->tape) {
      throw ContractError("kernel inputs belong to different gradient tapes");
    }
  }
  return tape;
}

/// Split a shape around `axis` into [outer, n, inner] extents so that the
/// element at (o, k, i) lives at flat index (o * n + k) * inner + i.
struct AxisView {
  std::size_t outer, n, inner;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

void check_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    std::ostringstream msg;
    msg << op << ": axis " << axis << " out of range for shape " << shape_str(x.shape);
    throw ShapeError(msg.str());
  }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  }
}

void check_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got shape " +
                     shape_str(x.shape));
  }
}

/// Emit helper for unary elementwise kernels: dy/dx supplied per element.
Tensor elementwise_unary(const Tensor& x, const char* op,
                         const std::function<double(double)>& f,
                         const std::function<double(double)>& df) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x.values[i]);
  Tape* tape = joint_tape({&x});
  if (tape == nullptr) return Tensor(x.shape, std::move(out));
  const int xn = x.node;
  std::vector<double> local(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) local[i] = df(x.values[i]);
  return tape->emit(op, x.shape, std::move(out), {xn},
                    [xn, local = std::move(local)](const std::vector<double>& og,
                                                   std::vector<std::vector<double>>& grads) {
                      auto& gx = grads[static_cast<std::size_t>(xn)];
                      for (std::size_t i = 0; i < og.size(); ++i) gx[i] += og[i] * local[i];
                    });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (const std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << "x";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (values.size() != shape_size(shape)) {
    throw ShapeError("Tensor: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  for (const std::size_t d : shape) {
    if (d == 0) throw ShapeError("Tensor: zero dimension in shape " + shape_str(shape));
  }
}

Tensor Tensor::zeros(const Shape& s) {
  return Tensor(s, std::vector<double>(shape_size(s), 0.0));
}

Tensor Tensor::full(const Shape& s, double value) {
  return Tensor(s, std::vector<double>(shape_size(s), value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("Tensor::item: tensor of shape " + shape_str(shape) +
                        " is not a scalar");
  }
  return values[0];
}

double Tensor::operator()(std::size_t i, std::size_t j) const {
  return values[i * shape[1] + j];
}

double& Tensor::operator()(std::size_t i, std::size_t j) {
  return values[i * shape[1] + j];
}

// --------------------------------------------------------------------------
// Tape
// --------------------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value) {
  Tensor out = value;
  out.tape = this;
  out.node = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{"leaf", out.shape, {}, {}});
  return out;
}

Tensor Tape::leaf(Shape shape, std::vector<double> values) {
  return leaf(Tensor(std::move(shape), std::move(values)));
}

Tensor Tape::emit(const char* op, Shape out_shape, std::vector<double> out_values,
                  std::vector<int> input_nodes, BackwardFn backward) {
  std::vector<int> recorded;
  recorded.reserve(input_nodes.size());
  for (const int id : input_nodes) {
    if (id >= 0) recorded.push_back(id);
  }
  Tensor out(std::move(out_shape), std::move(out_values));
  out.tape = this;
  out.node = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{op, out.shape, std::move(recorded), std::move(backward)});
  return out;
}

GradientMap Tape::backward(const Tensor& loss) {
  if (!loss.on_tape() || loss.tape != this) {
    throw ContractError("backward: loss is not attached to this tape");
  }
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape));
  }
  if (consumed_) {
    throw ContractError("backward: tape already consumed; call reset() first");
  }
  consumed_ = true;

  std::vector<Shape> shapes(nodes_.size());
  std::vector<std::vector<double>> grads(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    shapes[i] = nodes_[i].shape;
    grads[i].assign(shape_size(nodes_[i].shape), 0.0);
  }
  grads[static_cast<std::size_t>(loss.node)][0] = 1.0;

  for (int i = loss.node; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backward) n.backward(grads[static_cast<std::size_t>(i)], grads);
  }
  return GradientMap(std::move(shapes), std::move(grads));
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

Tensor GradientMap::at(int node_id) const {
  if (node_id < 0 || static_cast<std::size_t>(node_id) >= grads_.size()) {
    throw ContractError("GradientMap: node id " + std::to_string(node_id) +
                        " not covered by this backward pass");
  }
  return Tensor(shapes_[static_cast<std::size_t>(node_id)],
                grads_[static_cast<std::size_t>(node_id)]);
}

Tensor GradientMap::at(const Tensor& t) const {
  if (!t.on_tape()) throw ContractError("GradientMap: tensor is not on a tape");
  return at(t.node);
}

ParamMap bind_params(const ParamMap& params, Tape& tape) {
  ParamMap bound;
  for (const auto& [name, value] : params) bound.emplace(name, tape.leaf(value));
  return bound;
}

const Tensor& param(const ParamMap& params, const std::string& key) {
  const auto it = params.find(key);
  if (it == params.end()) throw ContractError("missing parameter " + key);
  return it->second;
}

// --------------------------------------------------------------------------
// Kernels
// --------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  if (b.shape[0] != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  }
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.values[i * k + p];
      const double* brow = b.values.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  Tape* tape = joint_tape({&a, &b});
  if (tape == nullptr) return Tensor({m, n}, std::move(out));
  const int an = a.node, bn = b.node;
  return tape->emit(
      "matmul", {m, n}, std::move(out), {an, bn},
      [m, k, n, an, bn, av = a.values, bv = b.values](
          const std::vector<double>& og, std::vector<std::vector<double>>& grads) {
        if (an >= 0) {
          auto& ga = grads[static_cast<std::size_t>(an)];
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double* ogrow = og.data() + i * n;
              const double* brow = bv.data() + p * n;
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += ogrow[j] * brow[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (bn >= 0) {
          auto& gb = grads[static_cast<std::size_t>(bn)];
          for (std::size_t i = 0; i < m; ++i) {
            const double* ogrow = og.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double s = av[i * k + p];
              double* gbrow = gb.data() + p * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * ogrow[j];
            }
          }
        }
      });
}

Tensor transpose(const Tensor& x) {
  check_matrix(x, "transpose");
  const std::size_t m = x.shape[0], n = x.shape[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.values[i * n + j];
  Tape* tape = joint_tape({&x});
  if (tape == nullptr) return Tensor({n, m}, std::move(out));
  const int xn = x.node;
  return tape->emit("transpose", {n, m}, std::move(out), {xn},
                    [m, n, xn](const std::vector<double>& og,
                               std::vector<std::vector<double>>& grads) {
                      auto& gx = grads[static_cast<std::size_t>(xn)];
                      for (std::size_t j = 0; j < n; ++j)
                        for (std::size_t i = 0; i < m; ++i)
                          gx[i * n + j] += og[j * m + i];
                    });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.values[i] + b.values[i];
  Tape* tape = joint_tape({&a, &b});
  if (tape == nullptr) return Tensor(a.shape, std::move(out));
  const int an = a.node, bn = b.node;
  return tape->emit("add", a.shape, std::move(out), {an, bn},
                    [an, bn](const std::vector<double>& og,
                             std::vector<std::vector<double>>& grads) {
                      if (an >= 0) {
                        auto& ga = grads[static_cast<std::size_t>(an)];
                        for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i];
                      }
                      if (bn >= 0) {
                        auto& gb = grads[static_cast<std::size_t>(bn)];
                        for (std::size_t i = 0; i < og.size(); ++i) gb[i] += og[i];
                      }
                    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.values[i] - b.values[i];
  Tape* tape = joint_tape({&a, &b});
  if (tape == nullptr) return Tensor(a.shape, std::move(out));
  const int an = a.node, bn = b.node;
  return tape->emit("sub", a.shape, std::move(out), {an, bn},
                    [an, bn](const std::vector<double>& og,
                             std::vector<std::vector<double>>& grads) {
                      if (an >= 0) {
                        auto& ga = grads[static_cast<std::size_t>(an)];
                        for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i];
                      }
                      if (bn >= 0) {
                        auto& gb = grads[static_cast<std::size_t>(bn)];
                        for (std::size_t i = 0; i < og.size(); ++i) gb[i] -= og[i];
                      }
                    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.values[i] * b.values[i];
  Tape* tape = joint_tape({&a, &b});
  if (tape == nullptr) return Tensor(a.shape, std::move(out));
  const int an = a.node, bn = b.node;
  return tape->emit("mul", a.shape, std::move(out), {an, bn},
                    [an, bn, av = a.values, bv = b.values](
                        const std::vector<double>& og,
                        std::vector<std::vector<double>>& grads) {
                      if (an >= 0) {
                        auto& ga = grads[static_cast<std::size_t>(an)];
                        for (std::size_t i = 0; i < og.size(); ++i) ga[i] += og[i] * bv[i];
                      }
                      if (bn >= 0) {
                        auto& gb = grads[static_cast<std::size_t>(bn)];
                        for (std::size_t i = 0; i < og.size(); ++i) gb[i] += og[i] * av[i];
                      }
                    });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x.values[i] * factor;
  Tape* tape = joint_tape({&x});
  if (tape == nullptr) return Tensor(x.shape, std::move(out));
  const int xn = x.node;
  return tape->emit("scale", x.shape, std::move(out), {xn},
                    [xn, factor](const std::vector<double>& og,
                                 std::vector<std::vector<double>>& grads) {
                      auto& gx = grads[static_cast<std::size_t>(xn)];
                      for (std::size_t i = 0; i < og.size(); ++i) gx[i] += og[i] * factor;
                    });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.rank() < 1 || v.rank() != 1 || x.shape.back() != v.shape[0]) {
    throw ShapeError("add_rowvec: cannot broadcast " + shape_str(v.shape) +
                     " over last axis of " + shape_str(x.shape));
  }
  const std::size_t n = v.shape[0];
  const std::size_t rows = x.size() / n;
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x.values[r * n + j] + v.values[j];
  Tape* tape = joint_tape({&x, &v});
  if (tape == nullptr) return Tensor(x.shape, std::move(out));
  const int xn = x.node, vn = v.node;
  return tape->emit("add_rowvec", x.shape, std::move(out), {xn, vn},
                    [xn, vn, rows, n](const std::vector<double>& og,
                                      std::vector<std::vector<double>>& grads) {
                      if (xn >= 0) {
                        auto& gx = grads[static_cast<std::size_t>(xn)];
                        for (std::size_t i = 0; i < og.size(); ++i) gx[i] += og[i];
                      }
                      if (vn >= 0) {
                        auto& gv = grads[static_cast<std::size_t>(vn)];
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t j = 0; j < n; ++j) gv[j] += og[r * n + j];
                      }
                    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "softmax");
  const AxisView v = axis_view(x.shape, axis);
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.n * v.inner + i;
      double mx = x.values[base];
      for (std::size_t k = 1; k < v.n; ++k)
        mx = std::max(mx, x.values[base + k * v.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < v.n; ++k) {
        const double e = std::exp(x.values[base + k * v.inner] - mx);
        out[base + k * v.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < v.n; ++k) out[base + k * v.inner] /= total;
    }
  }
  Tape* tape = joint_tape({&x});
  if (tape == nullptr) return Tensor(x.shape, std::move(out));
  const int xn = x.node;
  std::vector<double> saved = out;
  return tape->emit(
      "softmax", x.shape, std::move(out), {xn},
      [xn, v, y = std::move(saved)](const std::vector<double>& og,
                                    std::vector<std::vector<double>>& grads) {
        auto& gx = grads[static_cast<std::size_t>(xn)];
        for (std::size_t o = 0; o < v.outer; ++o) {
          for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.n * v.inner + i;
            double dot = 0.0;
            for (std::size_t k = 0; k < v.n; ++k) {
              const std::size_t at = base + k * v.inner;
              dot += og[at] * y[at];
            }
            for (std::size_t k = 0; k < v.n; ++k) {
              const std::size_t at = base + k * v.inner;
              gx[at] += y[at] * (og[at] - dot);
            }
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
  const std::size_t d = x.shape.back();
  if (gain.shape != Shape{d} || bias.shape != Shape{d}) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  }
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.values.data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * inv[r];
      xhat[r * d + j] = h;
      out[r * d + j] = gain.values[j] * h + bias.values[j];
    }
  }
  Tape* tape = joint_tape({&x, &gain, &bias});
  if (tape == nullptr) return Tensor(x.shape, std::move(out));
  const int xn = x.node, gn = gain.node, bn = bias.node;
  return tape->emit(
      "layer_norm", x.shape, std::move(out), {xn, gn, bn},
      [xn, gn, bn, rows, d, gv = gain.values, xh = std::move(xhat),
       iv = std::move(inv)](const std::vector<double>& og,
                            std::vector<std::vector<double>>& grads) {
        for (std::size_t r = 0; r < rows; ++r) {
          const double* ogr = og.data() + r * d;
          const double* xhr = xh.data() + r * d;
          if (xn >= 0) {
            auto& gx = grads[static_cast<std::size_t>(xn)];
            double sum1 = 0.0, sum2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = ogr[j] * gv[j];
              sum1 += dh;
              sum2 += dh * xhr[j];
            }
            const double invd = 1.0 / static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = ogr[j] * gv[j];
              gx[r * d + j] += iv[r] * (dh - sum1 * invd - xhr[j] * sum2 * invd);
            }
          }
          if (gn >= 0) {
            auto& gg = grads[static_cast<std::size_t>(gn)];
            for (std::size_t j = 0; j < d; ++j) gg[j] += ogr[j] * xhr[j];
          }
          if (bn >= 0) {
            auto& gb = grads[static_cast<std::size_t>(bn)];
            for (std::size_t j = 0; j < d; ++j) gb[j] += ogr[j];
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  return elementwise_unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); },
      [](double v) {
        const double phi = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
        return cdf + v * phi;
      });
}

Tensor relu(const Tensor& x) {
  return elementwise_unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return elementwise_unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double v) {
        const double t = std::tanh(v);
        return 1.0 - t * t;
      });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 1) {
    throw ShapeError("concat_last: rank mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
  for (std::size_t i = 0; i + 1 < a.rank(); ++i) {
    if (a.shape[i] != b.shape[i]) {
      throw ShapeError("concat_last: leading dimensions disagree, " +
                       shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
  }
  const std::size_t la = a.shape.back(), lb = b.shape.back();
  const std::size_t rows = a.size() / la;
  Shape out_shape = a.shape;
  out_shape.back() = la + lb;
  std::vector<double> out(rows * (la + lb));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < la; ++j) out[r * (la + lb) + j] = a.values[r * la + j];
    for (std::size_t j = 0; j < lb; ++j)
      out[r * (la + lb) + la + j] = b.values[r * lb + j];
  }
  Tape* tape = joint_tape({&a, &b});
  if (tape == nullptr) return Tensor(out_shape, std::move(out));
  const int an = a.node, bn = b.node;
  return tape->emit("concat_last", out_shape, std::move(out), {an, bn},
                    [an, bn, rows, la, lb](const std::vector<double>& og,
                                           std::vector<std::vector<double>>& grads) {
                      for (std::size_t r = 0; r < rows; ++r) {
                        if (an >= 0) {
                          auto& ga = grads[static_cast<std::size_t>(an)];
                          for (std::size_t j = 0; j < la; ++j)
                            ga[r * la + j] += og[r * (la + lb) + j];
                        }
                        if (bn >= 0) {
                          auto& gb = grads[static_cast<std::size_t>(bn)];
                          for (std::size_t j = 0; j < lb; ++j)
                            gb[r * lb + j] += og[r * (la + lb) + la + j];
                        }
                      }
                    });
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack: need at least one tensor");
  const Shape& inner = parts[0].shape;
  const std::size_t step = parts[0].size();
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(parts.size());
  for (const Tensor& p : parts) {
    if (p.shape != inner) {
      throw ShapeError("stack: mixed shapes " + shape_str(inner) + " vs " +
                       shape_str(p.shape));
    }
    ptrs.push_back(&p);
  }
  Shape out_shape;
  out_shape.push_back(parts.size());
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  std::vector<double> out;
  out.reserve(parts.size() * step);
  for (const Tensor& p : parts) out.insert(out.end(), p.values.begin(), p.values.end());

  Tape* tape = nullptr;
  for (const Tensor* p : ptrs) {
    Tape* t = joint_tape({p});
    if (t != nullptr) {
      if (tape != nullptr && tape != t) {
        throw ContractError("stack: inputs belong to different gradient tapes");
      }
      tape = t;
    }
  }
  if (tape == nullptr) return Tensor(out_shape, std::move(out));
  std::vector<int> nodes(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) nodes[i] = parts[i].node;
  std::vector<int> recorded = nodes;
  return tape->emit("stack", out_shape, std::move(out), std::move(recorded),
                    [nodes = std::move(nodes), step](
                        const std::vector<double>& og,
                        std::vector<std::vector<double>>& grads) {
                      for (std::size_t i = 0; i < nodes.size(); ++i) {
                        if (nodes[i] < 0) continue;
                        auto& gp = grads[static_cast<std::size_t>(nodes[i])];
                        const double* src = og.data() + i * step;
                        for (std::size_t j = 0; j < step; ++j) gp[j] += src[j];
                      }
                    });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "mean_axis");
  const AxisView v = axis_view(x.shape, axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.shape[i]);
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t k = 0; k < v.n; ++k)
      for (std::size_t i = 0; i < v.inner; ++i)
        out[o * v.inner + i] += x.values[(o * v.n + k) * v.inner + i];
  const double invn = 1.0 / static_cast<double>(v.n);
  for (double& e : out) e *= invn;
  Tape* tape = joint_tape({&x});
  if (tape == nullptr) return Tensor(out_shape, std::move(out));
  const int xn = x.node;
  return tape->emit("mean_axis", out_shape, std::move(out), {xn},
                    [xn, v, invn](const std::vector<double>& og,
                                  std::vector<std::vector<double>>& grads) {
                      auto& gx = grads[static_cast<std::size_t>(xn)];
                      for (std::size_t o = 0; o < v.outer; ++o)
                        for (std::size_t k = 0; k < v.n; ++k)
                          for (std::size_t i = 0; i < v.inner; ++i)
                            gx[(o * v.n + k) * v.inner + i] += og[o * v.inner + i] * invn;
                    });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (const double e : x.values) total += e;
  Tape* tape = joint_tape({&x});
  if (tape == nullptr) return Tensor::scalar(total);
  const int xn = x.node;
  return tape->emit("sum", {}, {total}, {xn},
                    [xn](const std::vector<double>& og,
                         std::vector<std::vector<double>>& grads) {
                      auto& gx = grads[static_cast<std::size_t>(xn)];
                      for (double& e : gx) e += og[0];
                    });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_size(new_shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " +
                     shape_str(new_shape));
  }
  Tape* tape = joint_tape({&x});
  if (tape == nullptr) return Tensor(std::move(new_shape), x.values);
  const int xn = x.node;
  return tape->emit("reshape", std::move(new_shape), x.values, {xn},
                    [xn](const std::vector<double>& og,
                         std::vector<std::vector<double>>& grads) {
                      auto& gx = grads[static_cast<std::size_t>(xn)];
                      for (std::size_t i = 0; i < og.size(); ++i) gx[i] += og[i];
                    });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  check_matrix(x, "slice_cols");
  const std::size_t m = x.shape[0], n = x.shape[1];
  if (count == 0 || start + count > n) {
    throw ShapeError("slice_cols: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") exceeds width " +
                     std::to_string(n));
  }
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x.values[i * n + start + j];
  Tape* tape = joint_tape({&x});
  if (tape == nullptr) return Tensor({m, count}, std::move(out));
  const int xn = x.node;
  return tape->emit("slice_cols", {m, count}, std::move(out), {xn},
                    [xn, m, n, start, count](const std::vector<double>& og,
                                             std::vector<std::vector<double>>& grads) {
                      auto& gx = grads[static_cast<std::size_t>(xn)];
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < count; ++j)
                          gx[i * n + start + j] += og[i * count + j];
                    });
}

Tensor row(const Tensor& x, std::size_t index) {
  check_matrix(x, "row");
  const std::size_t m = x.shape[0], n = x.shape[1];
  if (index >= m) {
    throw ShapeError("row: index " + std::to_string(index) + " out of range for " +
                     shape_str(x.shape));
  }
  std::vector<double> out(x.values.begin() + static_cast<std::ptrdiff_t>(index * n),
                          x.values.begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
  Tape* tape = joint_tape({&x});
  if (tape == nullptr) return Tensor({n}, std::move(out));
  const int xn = x.node;
  return tape->emit("row", {n}, std::move(out), {xn},
                    [xn, n, index](const std::vector<double>& og,
                                   std::vector<std::vector<double>>& grads) {
                      auto& gx = grads[static_cast<std::size_t>(xn)];
                      for (std::size_t j = 0; j < n; ++j) gx[index * n + j] += og[j];
                    });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
  check_matrix(table, "embedding_lookup");
  if (ids.empty()) throw ContractError("embedding_lookup: empty id sequence");
  const std::size_t v = table.shape[0], d = table.shape[1];
  for (const std::size_t id : ids) {
    if (id >= v) {
      throw ContractError("embedding_lookup: id " + std::to_string(id) +
                          " out of range for table with " + std::to_string(v) + " rows");
    }
  }
  const std::size_t len = ids.size();
  std::vector<double> out(len * d);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = table.values[ids[i] * d + j];
  Tape* tape = joint_tape({&table});
  if (tape == nullptr) return Tensor({len, d}, std::move(out));
  const int tn = table.node;
  return tape->emit("embedding_lookup", {len, d}, std::move(out), {tn},
                    [tn, d, ids](const std::vector<double>& og,
                                 std::vector<std::vector<double>>& grads) {
                      auto& gt = grads[static_cast<std::size_t>(tn)];
                      for (std::size_t i = 0; i < ids.size(); ++i)
                        for (std::size_t j = 0; j < d; ++j)
                          gt[ids[i] * d + j] += og[i * d + j];
                    });
}

Tensor cosine_similarity_matrix(const Tensor& t, const Tensor& l) {
  check_matrix(t, "cosine_similarity_matrix");
  check_matrix(l, "cosine_similarity_matrix");
  if (t.shape[1] != l.shape[1]) {
    throw ShapeError("cosine_similarity_matrix: dimension mismatch " +
                     shape_str(t.shape) + " vs " + shape_str(l.shape));
  }
  const std::size_t n = t.shape[0], k = l.shape[0], d = t.shape[1];
  std::vector<double> tn_(n), ln_(k);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += t.values[i * d + c] * t.values[i * d + c];
    tn_[i] = std::sqrt(s);
    if (tn_[i] == 0.0) {
      throw DegenerateInputError("cosine_similarity_matrix: zero-norm row " +
                                 std::to_string(i) + " in first argument");
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += l.values[j * d + c] * l.values[j * d + c];
    ln_[j] = std::sqrt(s);
    if (ln_[j] == 0.0) {
      throw DegenerateInputError("cosine_similarity_matrix: zero-norm row " +
                                 std::to_string(j) + " in second argument");
    }
  }
  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += t.values[i * d + c] * l.values[j * d + c];
      out[i * k + j] = dot / (tn_[i] * ln_[j]);
    }
  }
  Tape* tape = joint_tape({&t, &l});
  if (tape == nullptr) return Tensor({n, k}, std::move(out));
  const int tnode = t.node, lnode = l.node;
  std::vector<double> saved = out;
  return tape->emit(
      "cosine_similarity_matrix", {n, k}, std::move(out), {tnode, lnode},
      [tnode, lnode, n, k, d, tv = t.values, lv = l.values, tn = std::move(tn_),
       ln = std::move(ln_), s = std::move(saved)](
          const std::vector<double>& og, std::vector<std::vector<double>>& grads) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < k; ++j) {
            const double g = og[i * k + j];
            if (g == 0.0) continue;
            const double sij = s[i * k + j];
            const double denom = tn[i] * ln[j];
            if (tnode >= 0) {
              auto& gt = grads[static_cast<std::size_t>(tnode)];
              for (std::size_t c = 0; c < d; ++c) {
                gt[i * d + c] += g * (lv[j * d + c] / denom -
                                      sij * tv[i * d + c] / (tn[i] * tn[i]));
              }
            }
            if (lnode >= 0) {
              auto& gl = grads[static_cast<std::size_t>(lnode)];
              for (std::size_t c = 0; c < d; ++c) {
                gl[j * d + c] += g * (tv[i * d + c] / denom -
                                      sij * lv[j * d + c] / (ln[j] * ln[j]));
              }
            }
          }
        }
      });
}

Tensor cross_entropy(const Tensor& p, const Tensor& y) {
  if (p.rank() < 1) throw ShapeError("cross_entropy: input must have rank >= 1");
  check_same_shape(p, y, "cross_entropy");
  const std::size_t c = p.shape.back();
  const std::size_t rows = p.size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    double ps = 0.0, ys = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      ps += p.values[r * c + j];
      ys += y.values[r * c + j];
    }
    if (std::abs(ps - 1.0) > 1e-6) {
      throw DistributionError("cross_entropy: row " + std::to_string(r) +
                              " of predictions sums to " + std::to_string(ps));
    }
    if (std::abs(ys - 1.0) > 1e-6) {
      throw DistributionError("cross_entropy: row " + std::to_string(r) +
                              " of targets sums to " + std::to_string(ys));
    }
  }
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      loss -= y.values[r * c + j] * std::log(p.values[r * c + j] + kLogEps);
  loss /= static_cast<double>(rows);

  Tape* tape = joint_tape({&p, &y});
  if (tape == nullptr) return Tensor::scalar(loss);
  const int pn = p.node, yn = y.node;
  return tape->emit(
      "cross_entropy", {}, {loss}, {pn, yn},
      [pn, yn, rows, c, pv = p.values, yv = y.values](
          const std::vector<double>& og, std::vector<std::vector<double>>& grads) {
        const double s = og[0] / static_cast<double>(rows);
        if (pn >= 0) {
          auto& gp = grads[static_cast<std::size_t>(pn)];
          for (std::size_t i = 0; i < pv.size(); ++i)
            gp[i] -= s * yv[i] / (pv[i] + kLogEps);
        }
        if (yn >= 0) {
          auto& gy = grads[static_cast<std::size_t>(yn)];
          for (std::size_t i = 0; i < yv.size(); ++i)
            gy[i] -= s * std::log(pv[i] + kLogEps);
        }
      });
}

}  // namespace contrastgeo
