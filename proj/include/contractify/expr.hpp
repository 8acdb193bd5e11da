#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace contractify {

enum class Kind : std::uint8_t {
  input, parameter, constant,
  add, sub, mul, matvec, dot,
  square, power, sin, relu, tanh, min, neg, scale
};

/** One vector-valued node; children are indices of earlier nodes. */
struct Node {
  Kind kind;
  int a = -1;
  int b = -1;
  int dim = 0;
  int offset = 0;    // payload offset for input/parameter/constant
  int rows = 0;      // matvec
  int cols = 0;      // matvec
  int exponent = 0;  // power
  double factor = 1.0;  // scale
};

/** Immutable computation graph over a flat input and a flat parameter vector. */
class ExprGraph {
 public:
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<double>& constants() const { return consts_; }
  const std::vector<int>& outputs() const { return outputs_; }
  int input_dim() const { return input_dim_; }
  int param_dim() const { return param_dim_; }
  int value_offset(int node) const { return value_offset_[node]; }
  int value_size() const { return value_size_; }
  int node_dim(int node) const { return nodes_[node].dim; }

 private:
  friend class GraphBuilder;
  std::vector<Node> nodes_;
  std::vector<double> consts_;
  std::vector<int> outputs_;
  std::vector<int> value_offset_;
  int input_dim_ = 0;
  int param_dim_ = 0;
  int value_size_ = 0;
};

/** Appends nodes with dimension checks; produces an ExprGraph. */
class GraphBuilder {
 public:
  int input(int dim) {
    require(dim > 0, "input dim must be positive");
    int off = g_.input_dim_;
    g_.input_dim_ += dim;
    return push({Kind::input, -1, -1, dim, off});
  }

  int param(int dim) {
    require(dim > 0, "param dim must be positive");
    int off = g_.param_dim_;
    g_.param_dim_ += dim;
    return push({Kind::parameter, -1, -1, dim, off});
  }

  int constant(const std::vector<double>& v) {
    require(!v.empty(), "constant must be non-empty");
    int off = static_cast<int>(g_.consts_.size());
    g_.consts_.insert(g_.consts_.end(), v.begin(), v.end());
    return push({Kind::constant, -1, -1, static_cast<int>(v.size()), off});
  }

  int constant(double v) { return constant(std::vector<double>{v}); }

  int add(int x, int y) { return binary(Kind::add, x, y); }
  int sub(int x, int y) { return binary(Kind::sub, x, y); }
  int mul(int x, int y) { return binary(Kind::mul, x, y); }
  int min(int x, int y) { return binary(Kind::min, x, y); }

  int matvec(int m, int v, int rows, int cols) {
    require(dim(m) == rows * cols, "matvec: matrix node dim != rows*cols");
    require(dim(v) == cols, "matvec: vector dim != cols");
    Node n{Kind::matvec, m, v, rows};
    n.rows = rows;
    n.cols = cols;
    return push(n);
  }

  int dot(int x, int y) {
    require(dim(x) == dim(y), "dot: dims differ");
    return push({Kind::dot, x, y, 1});
  }

  int square(int x) { return unary(Kind::square, x); }
  int sin(int x) { return unary(Kind::sin, x); }
  int relu(int x) { return unary(Kind::relu, x); }
  int tanh(int x) { return unary(Kind::tanh, x); }
  int neg(int x) { return unary(Kind::neg, x); }

  int power(int x, int p) {
    require(p >= 2, "power: exponent must be an integer >= 2");
    Node n{Kind::power, x, -1, dim(x)};
    n.exponent = p;
    return push(n);
  }

  int scale(int x, double k) {
    Node n{Kind::scale, x, -1, dim(x)};
    n.factor = k;
    return push(n);
  }

  void output(int x) {
    check_node(x);
    g_.outputs_.push_back(x);
  }

  int dim(int x) const {
    check_node(x);
    return g_.nodes_[x].dim;
  }

  ExprGraph build() {
    require(!g_.outputs_.empty(), "graph has no outputs");
    g_.value_offset_.resize(g_.nodes_.size());
    int off = 0;
    for (size_t i = 0; i < g_.nodes_.size(); ++i) {
      g_.value_offset_[i] = off;
      off += g_.nodes_[i].dim;
    }
    g_.value_size_ = off;
    return std::move(g_);
  }

 private:
  int push(Node n) {
    g_.nodes_.push_back(n);
    return static_cast<int>(g_.nodes_.size()) - 1;
  }

  int binary(Kind k, int x, int y) {
    require(dim(x) == dim(y), "binary op: dims differ");
    return push({k, x, y, dim(x)});
  }

  int unary(Kind k, int x) { return push({k, x, -1, dim(x)}); }

  void check_node(int x) const {
    if (x < 0 || x >= static_cast<int>(g_.nodes_.size()))
      throw std::invalid_argument("node index out of range");
  }

  static void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
  }

  ExprGraph g_;
};

/** Per-evaluation scratch: forward values and cotangent accumulators. */
struct Tape {
  std::vector<double> val;
  std::vector<double> cot;
};

inline void eval_graph(const ExprGraph& g, std::span<const double> inputs,
                       std::span<const double> params, Tape& t) {
  if (static_cast<int>(inputs.size()) != g.input_dim())
    throw std::invalid_argument("eval_graph: input length " + std::to_string(inputs.size()) +
                                " != declared " + std::to_string(g.input_dim()));
  if (static_cast<int>(params.size()) != g.param_dim())
    throw std::invalid_argument("eval_graph: param length " + std::to_string(params.size()) +
                                " != declared " + std::to_string(g.param_dim()));
  t.val.resize(g.value_size());
  const auto& nodes = g.nodes();
  for (size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    double* out = t.val.data() + g.value_offset(static_cast<int>(i));
    const double* x = n.a >= 0 ? t.val.data() + g.value_offset(n.a) : nullptr;
    const double* y = n.b >= 0 ? t.val.data() + g.value_offset(n.b) : nullptr;
    switch (n.kind) {
      case Kind::input:
        for (int j = 0; j < n.dim; ++j) out[j] = inputs[n.offset + j];
        break;
      case Kind::parameter:
        for (int j = 0; j < n.dim; ++j) out[j] = params[n.offset + j];
        break;
      case Kind::constant:
        for (int j = 0; j < n.dim; ++j) out[j] = g.constants()[n.offset + j];
        break;
      case Kind::add:
        for (int j = 0; j < n.dim; ++j) out[j] = x[j] + y[j];
        break;
      case Kind::sub:
        for (int j = 0; j < n.dim; ++j) out[j] = x[j] - y[j];
        break;
      case Kind::mul:
        for (int j = 0; j < n.dim; ++j) out[j] = x[j] * y[j];
        break;
      case Kind::matvec:
        for (int r = 0; r < n.rows; ++r) {
          double s = 0.0;
          const double* row = x + r * n.cols;
          for (int c = 0; c < n.cols; ++c) s += row[c] * y[c];
          out[r] = s;
        }
        break;
      case Kind::dot: {
        double s = 0.0;
        int d = g.node_dim(n.a);
        for (int j = 0; j < d; ++j) s += x[j] * y[j];
        out[0] = s;
        break;
      }
      case Kind::square:
        for (int j = 0; j < n.dim; ++j) out[j] = x[j] * x[j];
        break;
      case Kind::power:
        for (int j = 0; j < n.dim; ++j) {
          double v = 1.0;
          for (int e = 0; e < n.exponent; ++e) v *= x[j];
          out[j] = v;
        }
        break;
      case Kind::sin:
        for (int j = 0; j < n.dim; ++j) out[j] = std::sin(x[j]);
        break;
      case Kind::relu:
        for (int j = 0; j < n.dim; ++j) out[j] = x[j] > 0.0 ? x[j] : 0.0;
        break;
      case Kind::tanh:
        for (int j = 0; j < n.dim; ++j) out[j] = std::tanh(x[j]);
        break;
      case Kind::min:
        for (int j = 0; j < n.dim; ++j) out[j] = x[j] <= y[j] ? x[j] : y[j];
        break;
      case Kind::neg:
        for (int j = 0; j < n.dim; ++j) out[j] = -x[j];
        break;
      case Kind::scale:
        for (int j = 0; j < n.dim; ++j) out[j] = n.factor * x[j];
        break;
    }
  }
}

inline std::vector<double> eval_graph(const ExprGraph& g, std::span<const double> inputs,
                                      std::span<const double> params) {
  Tape t;
  eval_graph(g, inputs, params, t);
  std::vector<double> out;
  for (int id : g.outputs()) {
    const double* v = t.val.data() + g.value_offset(id);
    out.insert(out.end(), v, v + g.node_dim(id));
  }
  return out;
}

struct Gradients {
  std::vector<double> input;
  std::vector<double> param;
};

/** Reverse sweep from a scalar root; relu at exactly 0 contributes subgradient 0,
    elementwise-min ties route to the first argument. */
inline void gradient(const ExprGraph& g, int root, std::span<const double> inputs,
                     std::span<const double> params, Tape& t, Gradients& out) {
  if (root < 0 || root >= static_cast<int>(g.nodes().size()))
    throw std::invalid_argument("gradient: root out of range");
  if (g.node_dim(root) != 1) throw std::invalid_argument("gradient: root is not scalar");
  eval_graph(g, inputs, params, t);
  t.cot.assign(g.value_size(), 0.0);
  t.cot[g.value_offset(root)] = 1.0;
  out.input.assign(g.input_dim(), 0.0);
  out.param.assign(g.param_dim(), 0.0);

  const auto& nodes = g.nodes();
  for (int i = root; i >= 0; --i) {
    const Node& n = nodes[i];
    const double* c = t.cot.data() + g.value_offset(i);
    const double* x = n.a >= 0 ? t.val.data() + g.value_offset(n.a) : nullptr;
    const double* y = n.b >= 0 ? t.val.data() + g.value_offset(n.b) : nullptr;
    double* cx = n.a >= 0 ? t.cot.data() + g.value_offset(n.a) : nullptr;
    double* cy = n.b >= 0 ? t.cot.data() + g.value_offset(n.b) : nullptr;
    switch (n.kind) {
      case Kind::input:
        for (int j = 0; j < n.dim; ++j) out.input[n.offset + j] += c[j];
        break;
      case Kind::parameter:
        for (int j = 0; j < n.dim; ++j) out.param[n.offset + j] += c[j];
        break;
      case Kind::constant:
        break;
      case Kind::add:
        for (int j = 0; j < n.dim; ++j) {
          cx[j] += c[j];
          cy[j] += c[j];
        }
        break;
      case Kind::sub:
        for (int j = 0; j < n.dim; ++j) {
          cx[j] += c[j];
          cy[j] -= c[j];
        }
        break;
      case Kind::mul:
        for (int j = 0; j < n.dim; ++j) {
          cx[j] += c[j] * y[j];
          cy[j] += c[j] * x[j];
        }
        break;
      case Kind::matvec:
        for (int r = 0; r < n.rows; ++r) {
          double cr = c[r];
          if (cr == 0.0) continue;
          double* mrow = cx + r * n.cols;
          const double* xrow = x + r * n.cols;
          for (int k = 0; k < n.cols; ++k) {
            mrow[k] += cr * y[k];
            cy[k] += cr * xrow[k];
          }
        }
        break;
      case Kind::dot: {
        int d = g.node_dim(n.a);
        for (int j = 0; j < d; ++j) {
          cx[j] += c[0] * y[j];
          cy[j] += c[0] * x[j];
        }
        break;
      }
      case Kind::square:
        for (int j = 0; j < n.dim; ++j) cx[j] += 2.0 * x[j] * c[j];
        break;
      case Kind::power:
        for (int j = 0; j < n.dim; ++j) {
          double v = 1.0;
          for (int e = 0; e < n.exponent - 1; ++e) v *= x[j];
          cx[j] += n.exponent * v * c[j];
        }
        break;
      case Kind::sin:
        for (int j = 0; j < n.dim; ++j) cx[j] += std::cos(x[j]) * c[j];
        break;
      case Kind::relu:
        for (int j = 0; j < n.dim; ++j)
          if (x[j] > 0.0) cx[j] += c[j];
        break;
      case Kind::tanh: {
        const double* v = t.val.data() + g.value_offset(i);
        for (int j = 0; j < n.dim; ++j) cx[j] += (1.0 - v[j] * v[j]) * c[j];
        break;
      }
      case Kind::min:
        for (int j = 0; j < n.dim; ++j) {
          if (x[j] <= y[j])
            cx[j] += c[j];
          else
            cy[j] += c[j];
        }
        break;
      case Kind::neg:
        for (int j = 0; j < n.dim; ++j) cx[j] -= c[j];
        break;
      case Kind::scale:
        for (int j = 0; j < n.dim; ++j) cx[j] += n.factor * c[j];
        break;
    }
  }
}

inline Gradients gradient(const ExprGraph& g, int root, std::span<const double> inputs,
                          std::span<const double> params) {
  Tape t;
  Gradients out;
  gradient(g, root, inputs, params, t, out);
  return out;
}

/** Splice a parameter-free graph into a builder, feeding its input nodes from
    existing nodes (one replacement per input node, in declaration order).
    Returns the spliced graph's single output node id. */
inline int inline_graph(GraphBuilder& b, const ExprGraph& g,
                        const std::vector<int>& input_replacements) {
  if (g.param_dim() != 0)
    throw std::invalid_argument("inline_graph: parametric graphs cannot be spliced");
  if (g.outputs().size() != 1)
    throw std::invalid_argument("inline_graph: graph must have exactly one output");
  std::vector<int> map(g.nodes().size(), -1);
  size_t next_input = 0;
  for (size_t i = 0; i < g.nodes().size(); ++i) {
    const Node& n = g.nodes()[i];
    switch (n.kind) {
      case Kind::input: {
        if (next_input >= input_replacements.size())
          throw std::invalid_argument("inline_graph: not enough input replacements");
        int rep = input_replacements[next_input++];
        if (b.dim(rep) != n.dim)
          throw std::invalid_argument("inline_graph: replacement dim mismatch");
        map[i] = rep;
        break;
      }
      case Kind::constant: {
        std::vector<double> v(g.constants().begin() + n.offset,
                              g.constants().begin() + n.offset + n.dim);
        map[i] = b.constant(v);
        break;
      }
      case Kind::parameter:
        throw std::invalid_argument("inline_graph: unexpected parameter node");
      case Kind::add: map[i] = b.add(map[n.a], map[n.b]); break;
      case Kind::sub: map[i] = b.sub(map[n.a], map[n.b]); break;
      case Kind::mul: map[i] = b.mul(map[n.a], map[n.b]); break;
      case Kind::min: map[i] = b.min(map[n.a], map[n.b]); break;
      case Kind::matvec: map[i] = b.matvec(map[n.a], map[n.b], n.rows, n.cols); break;
      case Kind::dot: map[i] = b.dot(map[n.a], map[n.b]); break;
      case Kind::square: map[i] = b.square(map[n.a]); break;
      case Kind::power: map[i] = b.power(map[n.a], n.exponent); break;
      case Kind::sin: map[i] = b.sin(map[n.a]); break;
      case Kind::relu: map[i] = b.relu(map[n.a]); break;
      case Kind::tanh: map[i] = b.tanh(map[n.a]); break;
      case Kind::neg: map[i] = b.neg(map[n.a]); break;
      case Kind::scale: map[i] = b.scale(map[n.a], n.factor); break;
    }
  }
  return map[g.outputs()[0]];
}

/** Selection helpers: component extraction and reassembly via constant matrices. */
inline int component(GraphBuilder& b, int vec, int i, int n) {
  std::vector<double> e(n, 0.0);
  e[i] = 1.0;
  return b.matvec(b.constant(e), vec, 1, n);
}

inline int assemble(GraphBuilder& b, const std::vector<int>& scalars) {
  int n = static_cast<int>(scalars.size());
  int acc = -1;
  for (int i = 0; i < n; ++i) {
    std::vector<double> col(n, 0.0);
    col[i] = 1.0;
    int lifted = b.matvec(b.constant(col), scalars[i], n, 1);
    acc = acc < 0 ? lifted : b.add(acc, lifted);
  }
  return acc;
}

}  // namespace contractify
