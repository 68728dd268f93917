#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pmdp/tensor.hpp"

namespace pmdp {

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class OpKind {
  leaf,
  matmul,
  add,          // same shape, or second operand a 1xC bias row
  sub,
  elemwise_mul,
  relu,
  leaky_relu,   // slope 0.01
  sum,
  mean,
  l1_norm,
  sq_l2_norm,
  softmax_rows,
  scale,
  max_scalar,
  sqrt_elem,
  concat_cols,  // k column vectors (Nx1) -> Nxk
};

namespace detail {

// C += A (MxK) @ B (KxN)
inline void matmul_acc(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA += dC (MxN) @ B^T (NxK)  i.e. dA[i,p] += sum_j dC[i,j] * B[p,j]
inline void matmul_acc_bt(const double* dc, const double* b, double* da,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    double* darow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// dB += A^T (KxM) @ dC (MxN)  i.e. dB[p,j] += sum_i A[i,p] * dC[i,j]
inline void matmul_acc_at(const double* a, const double* dc, double* db,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* dcrow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* dbrow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

}  // namespace detail

/// Define-by-run reverse-mode tape over dense tensors. Rebuilt per forward
/// pass; confined to a single training run.
class Tape {
 public:
  Var leaf(Tensor v, bool trainable = false, std::string name = {}) {
    check_finite(v, "leaf");
    return push(OpKind::leaf, std::move(v), {}, 0.0, trainable,
                std::move(name));
  }

  Var constant(Tensor v) { return leaf(std::move(v), false); }

  const Tensor& val(Var x) const { return node(x).value; }

  Var matmul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    const std::size_t m = ta.rows(), k = ta.cols();
    if (tb.rows() != k) {
      throw DimensionError("matmul: inner dims " + shape_str(ta) + " vs " +
                           shape_str(tb));
    }
    const std::size_t n = tb.cols();
    Tensor out({m, n});
    detail::matmul_acc(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
    return push(OpKind::matmul, std::move(out), {a, b});
  }

  Var add(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    Tensor out = ta;
    if (ta.same_shape(tb)) {
      for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += tb.data[i];
    } else if (tb.rows() == 1 && tb.cols() == ta.cols()) {
      // bias row broadcast over rows
      const std::size_t r = ta.rows(), c = ta.cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += tb.data[j];
    } else {
      throw DimensionError("add: shapes " + shape_str(ta) + " vs " +
                           shape_str(tb));
    }
    return push(OpKind::add, std::move(out), {a, b});
  }

  Var sub(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) {
      throw DimensionError("sub: shapes " + shape_str(ta) + " vs " +
                           shape_str(tb));
    }
    Tensor out = ta;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= tb.data[i];
    return push(OpKind::sub, std::move(out), {a, b});
  }

  Var elemwise_mul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) {
      throw DimensionError("elemwise_mul: shapes " + shape_str(ta) + " vs " +
                           shape_str(tb));
    }
    Tensor out = ta;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= tb.data[i];
    return push(OpKind::elemwise_mul, std::move(out), {a, b});
  }

  Var relu(Var a) {
    Tensor out = val(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(OpKind::relu, std::move(out), {a});
  }

  Var leaky_relu(Var a) {
    Tensor out = val(a);
    for (double& v : out.data) v = v > 0.0 ? v : kLeakySlope * v;
    return push(OpKind::leaky_relu, std::move(out), {a});
  }

  Var sum(Var a) {
    double acc = 0.0;
    for (double v : val(a).data) acc += v;
    return push(OpKind::sum, Tensor::scalar(acc), {a});
  }

  Var mean(Var a) {
    double acc = 0.0;
    for (double v : val(a).data) acc += v;
    return push(OpKind::mean,
                Tensor::scalar(acc / static_cast<double>(val(a).numel())), {a});
  }

  Var l1_norm(Var a) {
    double acc = 0.0;
    for (double v : val(a).data) acc += std::abs(v);
    return push(OpKind::l1_norm, Tensor::scalar(acc), {a});
  }

  Var sq_l2_norm(Var a) {
    double acc = 0.0;
    for (double v : val(a).data) acc += v * v;
    return push(OpKind::sq_l2_norm, Tensor::scalar(acc), {a});
  }

  Var softmax_rows(Var a) {
    const Tensor& ta = val(a);
    const std::size_t r = ta.rows(), c = ta.cols();
    Tensor out = ta;
    for (std::size_t i = 0; i < r; ++i) {
      double* row = out.data.data() + i * c;
      double mx = row[0];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      for (std::size_t j = 0; j < c; ++j) row[j] /= z;
    }
    return push(OpKind::softmax_rows, std::move(out), {a});
  }

  Var scale(Var a, double c) {
    Tensor out = val(a);
    for (double& v : out.data) v *= c;
    return push(OpKind::scale, std::move(out), {a}, c);
  }

  Var max_scalar(Var a, double c) {
    Tensor out = val(a);
    for (double& v : out.data) v = v > c ? v : c;
    return push(OpKind::max_scalar, std::move(out), {a}, c);
  }

  // Derivative at 0 is taken as 0, consistent with the relu/l1 kink choices.
  Var sqrt_elem(Var a) {
    Tensor out = val(a);
    for (double& v : out.data) {
      if (v < 0.0) throw NumericError("sqrt_elem: negative input");
      v = std::sqrt(v);
    }
    return push(OpKind::sqrt_elem, std::move(out), {a});
  }

  Var concat_cols(const std::vector<Var>& cols) {
    if (cols.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t n = val(cols[0]).rows();
    for (Var v : cols) {
      const Tensor& t = val(v);
      if (t.ndim() != 2 || t.cols() != 1 || t.rows() != n) {
        throw DimensionError("concat_cols: inputs must be Nx1 columns");
      }
    }
    const std::size_t k = cols.size();
    Tensor out({n, k});
    for (std::size_t j = 0; j < k; ++j) {
      const Tensor& t = val(cols[j]);
      for (std::size_t i = 0; i < n; ++i) out.data[i * k + j] = t.data[i];
    }
    return push(OpKind::concat_cols, std::move(out), cols);
  }

  /// Reverse sweep from a scalar loss. Every node's gradient buffer is
  /// (re)initialized to zeros, so unused trainable leaves read back as
  /// zero tensors.
  void backward(Var loss) {
    if (!val(loss).is_scalar()) {
      throw ContractError("backward: loss must be a scalar");
    }
    for (Node& nd : nodes_) nd.grad = Tensor::zeros(nd.value.shape);
    nodes_[static_cast<std::size_t>(loss.id)].grad.data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) backprop_node(i);
    has_grads_ = true;
  }

  const Tensor& grad(Var x) const {
    if (!has_grads_) throw ContractError("grad: backward has not run");
    return node(x).grad;
  }

  /// Gradients of all trainable leaves, keyed by leaf name.
  std::map<std::string, Tensor> trainable_grads() const {
    std::map<std::string, Tensor> out;
    for (const Node& nd : nodes_) {
      if (nd.kind == OpKind::leaf && nd.trainable) out[nd.name] = nd.grad;
    }
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

  static constexpr double kLeakySlope = 0.01;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Var> parents;
    OpKind kind;
    double aux = 0.0;
    bool trainable = false;
    std::string name;
  };

  // deque keeps val()/grad() references stable while new ops are recorded
  std::deque<Node> nodes_;
  bool has_grads_ = false;

  const Node& node(Var x) const { return nodes_.at(static_cast<std::size_t>(x.id)); }
  Node& node(Var x) { return nodes_.at(static_cast<std::size_t>(x.id)); }

  static void check_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) {
      throw NumericError(std::string("non-finite value out of op ") + op);
    }
  }

  Var push(OpKind kind, Tensor value, std::vector<Var> parents,
           double aux = 0.0, bool trainable = false, std::string name = {}) {
    if (kind != OpKind::leaf) check_finite(value, op_name(kind));
    Node nd;
    nd.value = std::move(value);
    nd.parents = std::move(parents);
    nd.kind = kind;
    nd.aux = aux;
    nd.trainable = trainable;
    nd.name = std::move(name);
    nodes_.push_back(std::move(nd));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  static const char* op_name(OpKind k) {
    switch (k) {
      case OpKind::leaf: return "leaf";
      case OpKind::matmul: return "matmul";
      case OpKind::add: return "add";
      case OpKind::sub: return "sub";
      case OpKind::elemwise_mul: return "elemwise_mul";
      case OpKind::relu: return "relu";
      case OpKind::leaky_relu: return "leaky_relu";
      case OpKind::sum: return "sum";
      case OpKind::mean: return "mean";
      case OpKind::l1_norm: return "l1_norm";
      case OpKind::sq_l2_norm: return "sq_l2_norm";
      case OpKind::softmax_rows: return "softmax_rows";
      case OpKind::scale: return "scale";
      case OpKind::max_scalar: return "max_scalar";
      case OpKind::sqrt_elem: return "sqrt_elem";
      case OpKind::concat_cols: return "concat_cols";
    }
    return "?";
  }

  void backprop_node(int idx) {
    Node& nd = nodes_[static_cast<std::size_t>(idx)];
    if (nd.kind == OpKind::leaf) return;
    const Tensor& g = nd.grad;
    const Tensor& y = nd.value;
    switch (nd.kind) {
      case OpKind::matmul: {
        const Tensor& a = node(nd.parents[0]).value;
        const Tensor& b = node(nd.parents[1]).value;
        Tensor& da = node(nd.parents[0]).grad;
        Tensor& db = node(nd.parents[1]).grad;
        const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        detail::matmul_acc_bt(g.data.data(), b.data.data(), da.data.data(), m, k, n);
        detail::matmul_acc_at(a.data.data(), g.data.data(), db.data.data(), m, k, n);
        break;
      }
      case OpKind::add: {
        Tensor& da = node(nd.parents[0]).grad;
        Tensor& db = node(nd.parents[1]).grad;
        for (std::size_t i = 0; i < g.numel(); ++i) da.data[i] += g.data[i];
        if (db.same_shape(g)) {
          for (std::size_t i = 0; i < g.numel(); ++i) db.data[i] += g.data[i];
        } else {
          const std::size_t r = g.rows(), c = g.cols();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) db.data[j] += g.data[i * c + j];
        }
        break;
      }
      case OpKind::sub: {
        Tensor& da = node(nd.parents[0]).grad;
        Tensor& db = node(nd.parents[1]).grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          da.data[i] += g.data[i];
          db.data[i] -= g.data[i];
        }
        break;
      }
      case OpKind::elemwise_mul: {
        const Tensor& a = node(nd.parents[0]).value;
        const Tensor& b = node(nd.parents[1]).value;
        Tensor& da = node(nd.parents[0]).grad;
        Tensor& db = node(nd.parents[1]).grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          da.data[i] += g.data[i] * b.data[i];
          db.data[i] += g.data[i] * a.data[i];
        }
        break;
      }
      case OpKind::relu: {
        const Tensor& x = node(nd.parents[0]).value;
        Tensor& dx = node(nd.parents[0]).grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          if (x.data[i] > 0.0) dx.data[i] += g.data[i];
        }
        break;
      }
      case OpKind::leaky_relu: {
        const Tensor& x = node(nd.parents[0]).value;
        Tensor& dx = node(nd.parents[0]).grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          dx.data[i] += g.data[i] * (x.data[i] > 0.0 ? 1.0 : kLeakySlope);
        }
        break;
      }
      case OpKind::sum: {
        Tensor& dx = node(nd.parents[0]).grad;
        const double gv = g.data[0];
        for (double& v : dx.data) v += gv;
        break;
      }
      case OpKind::mean: {
        Tensor& dx = node(nd.parents[0]).grad;
        const double gv = g.data[0] / static_cast<double>(dx.numel());
        for (double& v : dx.data) v += gv;
        break;
      }
      case OpKind::l1_norm: {
        const Tensor& x = node(nd.parents[0]).value;
        Tensor& dx = node(nd.parents[0]).grad;
        const double gv = g.data[0];
        for (std::size_t i = 0; i < x.numel(); ++i) {
          // subgradient at exactly 0 is 0
          if (x.data[i] > 0.0) dx.data[i] += gv;
          else if (x.data[i] < 0.0) dx.data[i] -= gv;
        }
        break;
      }
      case OpKind::sq_l2_norm: {
        const Tensor& x = node(nd.parents[0]).value;
        Tensor& dx = node(nd.parents[0]).grad;
        const double gv = 2.0 * g.data[0];
        for (std::size_t i = 0; i < x.numel(); ++i) dx.data[i] += gv * x.data[i];
        break;
      }
      case OpKind::softmax_rows: {
        Tensor& dx = node(nd.parents[0]).grad;
        const std::size_t r = y.rows(), c = y.cols();
        for (std::size_t i = 0; i < r; ++i) {
          const double* yr = y.data.data() + i * c;
          const double* gr = g.data.data() + i * c;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += yr[j] * gr[j];
          double* dr = dx.data.data() + i * c;
          for (std::size_t j = 0; j < c; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
        break;
      }
      case OpKind::scale: {
        Tensor& dx = node(nd.parents[0]).grad;
        for (std::size_t i = 0; i < g.numel(); ++i)
          dx.data[i] += nd.aux * g.data[i];
        break;
      }
      case OpKind::max_scalar: {
        const Tensor& x = node(nd.parents[0]).value;
        Tensor& dx = node(nd.parents[0]).grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          if (x.data[i] > nd.aux) dx.data[i] += g.data[i];
        }
        break;
      }
      case OpKind::sqrt_elem: {
        Tensor& dx = node(nd.parents[0]).grad;
        for (std::size_t i = 0; i < g.numel(); ++i) {
          if (y.data[i] > 0.0) dx.data[i] += 0.5 / y.data[i] * g.data[i];
        }
        break;
      }
      case OpKind::concat_cols: {
        const std::size_t n = y.rows(), k = y.cols();
        for (std::size_t j = 0; j < k; ++j) {
          Tensor& dc = node(nd.parents[j]).grad;
          for (std::size_t i = 0; i < n; ++i) dc.data[i] += g.data[i * k + j];
        }
        break;
      }
      case OpKind::leaf:
        break;
    }
  }
};

}  // namespace pmdp
