#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "pmdp/autodiff.hpp"
#include "pmdp/model.hpp"
#include "pmdp/tensor.hpp"

namespace pmdp {

struct LossWeights {
  double beta1 = 0.1;
  double beta2 = 100.0;
  double beta3 = 0.0001;
  double margin = 1.0;  // m in the contrastive branch
  double tau = 10.0;    // softmax sharpness on squared distances

  void validate() const {
    if (!(beta1 >= 0 && beta2 >= 0 && beta3 >= 0)) {
      throw ContractError("loss weights must be non-negative");
    }
    if (!(margin > 0)) throw ContractError("margin must be > 0");
    if (!(tau > 0)) throw ContractError("tau must be > 0");
  }
};

/// Which terms participate in the current step. Inactive terms are skipped
/// entirely: they contribute exactly 0 and receive no gradient.
struct PhaseFlags {
  bool rec = true;
  bool reg = false;
  bool dis = false;  // covers both the distance and the sparsity term
  bool cons = false;
};

/// Exponential moving average of per-subspace code norms; the divisor that
/// makes distances comparable across subspaces. Frozen during evaluation.
class NormTracker {
 public:
  explicit NormTracker(std::size_t k, double momentum = 0.99,
                       double eps = 1e-8)
      : mu_(k, 1.0), momentum_(momentum), eps_(eps) {}

  void update(const std::vector<double>& batch_mean_norms) {
    if (batch_mean_norms.size() != mu_.size()) {
      throw DimensionError("norm tracker: subspace count mismatch");
    }
    for (std::size_t i = 0; i < mu_.size(); ++i) {
      mu_[i] = momentum_ * mu_[i] + (1.0 - momentum_) * batch_mean_norms[i];
      mu_[i] = std::max(mu_[i], eps_);
    }
  }

  double divisor(std::size_t i) const { return std::max(mu_[i], eps_); }
  const std::vector<double>& mu() const { return mu_; }
  std::vector<double>& mu_mutable() { return mu_; }
  double eps() const { return eps_; }
  std::size_t size() const { return mu_.size(); }

 private:
  std::vector<double> mu_;
  double momentum_;
  double eps_;
};

/// delta[n,i] = ||s_i_1[n] - s_i_2[n]|| / mu_i, assembled as an Nxk matrix.
inline Var subspace_distances(Tape& tape, const std::vector<Var>& codes1,
                              const std::vector<Var>& codes2,
                              const NormTracker& tracker) {
  if (codes1.size() != codes2.size() || codes1.size() != tracker.size()) {
    throw DimensionError("subspace_distances: subspace count mismatch");
  }
  const std::size_t d = tape.val(codes1[0]).cols();
  Var ones_col = tape.constant(Tensor::full({d, 1}, 1.0));
  std::vector<Var> cols;
  cols.reserve(codes1.size());
  for (std::size_t i = 0; i < codes1.size(); ++i) {
    Var diff = tape.sub(codes1[i], codes2[i]);
    Var sq = tape.elemwise_mul(diff, diff);
    Var row_sq = tape.matmul(sq, ones_col);  // Nx1 squared row norms
    Var dist = tape.sqrt_elem(row_sq);
    cols.push_back(tape.scale(dist, 1.0 / tracker.divisor(i)));
  }
  return tape.concat_cols(cols);
}

/// Value-only counterpart used by evaluation paths; cross-checked against
/// the tape version in tests.
inline Tensor subspace_distances_values(const std::vector<Tensor>& codes1,
                                        const std::vector<Tensor>& codes2,
                                        const NormTracker& tracker) {
  const std::size_t k = codes1.size();
  const std::size_t n = codes1[0].rows();
  const std::size_t d = codes1[0].cols();
  Tensor delta({n, k});
  for (std::size_t i = 0; i < k; ++i) {
    const double inv = 1.0 / tracker.divisor(i);
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double dv = codes1[i].at(r, c) - codes2[i].at(r, c);
        acc += dv * dv;
      }
      delta.at(r, i) = std::sqrt(acc) * inv;
    }
  }
  return delta;
}

/// argmax_i delta_i with lowest-index tie break.
inline std::size_t estimate_oracle(const std::vector<double>& delta) {
  if (delta.empty()) throw ContractError("estimate_oracle: empty distances");
  std::size_t best = 0;
  for (std::size_t i = 1; i < delta.size(); ++i) {
    if (delta[i] > delta[best]) best = i;
  }
  return best;
}

inline std::vector<std::size_t> hard_oracle_rows(const Tensor& delta) {
  std::vector<std::size_t> alpha(delta.rows());
  for (std::size_t r = 0; r < delta.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < delta.cols(); ++i) {
      if (delta.at(r, i) > delta.at(r, best)) best = i;
    }
    alpha[r] = best;
  }
  return alpha;
}

/// A[n,:] = softmax(tau * delta[n,:]^2); the differentiable stand-in for the
/// hard oracle.
inline Var soft_mask(Tape& tape, Var delta, double tau) {
  if (!(tau > 0)) throw ContractError("soft_mask: tau must be > 0");
  Var sq = tape.elemwise_mul(delta, delta);
  return tape.softmax_rows(tape.scale(sq, tau));
}

/// Mean over the batch of ||x - x_hat||^2.
inline Var rec_loss(Tape& tape, Var x, Var x_hat) {
  const std::size_t n = tape.val(x).rows();
  Var diff = tape.sub(x, x_hat);
  return tape.scale(tape.sq_l2_norm(diff), 1.0 / static_cast<double>(n));
}

/// Mean over pairs of sum_i (1-a_i) delta_i^2 + a_i max(m - delta_i, 0)^2.
/// `mask` is either the soft matrix A or a constant one-hot matrix.
inline Var dis_loss(Tape& tape, Var delta, Var mask, double margin) {
  const Tensor& dv = tape.val(delta);
  const std::size_t n = dv.rows();
  Var sq = tape.elemwise_mul(delta, delta);
  Var ones = tape.constant(Tensor::full(dv.shape, 1.0));
  Var pull = tape.elemwise_mul(tape.sub(ones, mask), sq);
  Var m_full = tape.constant(Tensor::full(dv.shape, margin));
  Var hinge = tape.relu(tape.sub(m_full, delta));
  Var push = tape.elemwise_mul(mask, tape.elemwise_mul(hinge, hinge));
  Var total = tape.sum(tape.add(pull, push));
  return tape.scale(total, 1.0 / static_cast<double>(n));
}

inline Var one_hot_mask(Tape& tape, const std::vector<std::size_t>& alpha,
                        std::size_t k) {
  Tensor m({alpha.size(), k});
  for (std::size_t r = 0; r < alpha.size(); ++r) m.at(r, alpha[r]) = 1.0;
  return tape.constant(std::move(m));
}

/// Mean over the batch of sum_i ||P_i(f(x_hat_{s_i})) - s_i||^2 where
/// x_hat_{s_i} swaps subspace i of x1 into the codes of x2. Gradients flow
/// through the whole f o g composition.
inline Var cons_loss(Tape& tape, const ModelVars& m,
                     const std::vector<Var>& codes1,
                     const std::vector<Var>& codes2) {
  const std::size_t n = tape.val(codes1[0]).rows();
  Var total{};
  for (std::size_t i = 0; i < codes1.size(); ++i) {
    Var x_si = swap_recombine(tape, m, codes1, codes2, i);
    Var z_rt = encode(tape, m, x_si);
    Var s_rt = project_one(tape, m, z_rt, i);
    Var term = tape.sq_l2_norm(tape.sub(s_rt, codes1[i]));
    total = total.valid() ? tape.add(total, term) : term;
  }
  return tape.scale(total, 1.0 / static_cast<double>(n));
}

/// Mean over the batch of sum_i || s_i (.) sum_{j != i} s_j ||_1.
inline Var spar_loss(Tape& tape, const std::vector<Var>& codes) {
  if (codes.size() < 2) throw ContractError("spar_loss: needs k >= 2");
  const std::size_t n = tape.val(codes[0]).rows();
  Var z = aggregate(tape, codes);
  Var total{};
  for (std::size_t i = 0; i < codes.size(); ++i) {
    Var others = tape.sub(z, codes[i]);
    Var term = tape.l1_norm(tape.elemwise_mul(codes[i], others));
    total = total.valid() ? tape.add(total, term) : term;
  }
  return tape.scale(total, 1.0 / static_cast<double>(n));
}

/// sum_j (mean_n A[n,j] - 1/k)^2: pushes the oracle's selections toward the
/// uniform distribution over subspaces.
inline Var reg_loss(Tape& tape, Var mask) {
  const Tensor& a = tape.val(mask);
  const std::size_t n = a.rows(), k = a.cols();
  Var mean_row = tape.constant(Tensor::full({1, n}, 1.0 / static_cast<double>(n)));
  Var col_means = tape.matmul(mean_row, mask);  // 1xk
  Var uniform = tape.constant(Tensor::full({1, k}, 1.0 / static_cast<double>(k)));
  return tape.sq_l2_norm(tape.sub(col_means, uniform));
}

struct TotalLossResult {
  Var total{};
  // raw (unweighted) term values; inactive terms stay 0
  double rec = 0, dis = 0, spar = 0, cons = 0, reg = 0;
  double total_value = 0;
  Tensor delta;                     // Nxk normalized distances (if computed)
  std::vector<std::size_t> alpha;   // hard oracle per pair (if computed)
  bool degenerate_pair = false;     // some pair had all delta == 0
};

/// L = L_rec + b1 (L_dis + L_spar) + b2 L_cons + b3 L_reg over a pair batch.
/// When training, the norm tracker is updated with the batch's code norms
/// before distances are computed. `hard_oracle` switches the mask inside
/// L_dis from the soft matrix A to the one-hot argmax.
inline TotalLossResult total_loss(Tape& tape, const ModelVars& m, Var x1,
                                  Var x2, const LossWeights& w,
                                  const PhaseFlags& flags, NormTracker& tracker,
                                  bool training, bool hard_oracle) {
  w.validate();
  TotalLossResult out;
  const std::size_t n = tape.val(x1).rows();
  const std::size_t k = m.cfg->num_subspaces;

  std::vector<Var> codes1, codes2;
  Var xhat1 = autoencode(tape, m, x1, &codes1);
  Var xhat2 = autoencode(tape, m, x2, &codes2);

  // reconstruction over both pair elements
  Var rec1 = rec_loss(tape, x1, xhat1);
  Var rec2 = rec_loss(tape, x2, xhat2);
  Var rec = tape.scale(tape.add(rec1, rec2), 0.5);
  out.rec = tape.val(rec).value();
  Var total = rec;

  const bool need_delta = flags.dis || flags.reg;
  if (need_delta) {
    if (training) {
      std::vector<double> norms(k, 0.0);
      for (std::size_t i = 0; i < k; ++i) {
        const Tensor& c1 = tape.val(codes1[i]);
        const Tensor& c2 = tape.val(codes2[i]);
        double acc = 0.0;
        const std::size_t d = c1.cols();
        for (std::size_t r = 0; r < n; ++r) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            s1 += c1.at(r, c) * c1.at(r, c);
            s2 += c2.at(r, c) * c2.at(r, c);
          }
          acc += std::sqrt(s1) + std::sqrt(s2);
        }
        norms[i] = acc / static_cast<double>(2 * n);
      }
      tracker.update(norms);
    }

    Var delta = subspace_distances(tape, codes1, codes2, tracker);
    out.delta = tape.val(delta);
    out.alpha = hard_oracle_rows(out.delta);
    for (std::size_t r = 0; r < n; ++r) {
      double mx = 0.0;
      for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, out.delta.at(r, i));
      if (mx == 0.0) out.degenerate_pair = true;
    }

    Var mask_soft{};
    if (flags.reg || (flags.dis && !hard_oracle)) {
      mask_soft = soft_mask(tape, delta, w.tau);
    }

    if (flags.dis) {
      Var mask = hard_oracle ? one_hot_mask(tape, out.alpha, k) : mask_soft;
      Var dis = dis_loss(tape, delta, mask, w.margin);
      // sparsity over both pair elements
      Var spar = tape.scale(
          tape.add(spar_loss(tape, codes1), spar_loss(tape, codes2)), 0.5);
      out.dis = tape.val(dis).value();
      out.spar = tape.val(spar).value();
      total = tape.add(total, tape.scale(tape.add(dis, spar), w.beta1));
    }
    if (flags.cons) {
      Var cons = cons_loss(tape, m, codes1, codes2);
      out.cons = tape.val(cons).value();
      total = tape.add(total, tape.scale(cons, w.beta2));
    }
    if (flags.reg) {
      Var reg = reg_loss(tape, mask_soft);
      out.reg = tape.val(reg).value();
      total = tape.add(total, tape.scale(reg, w.beta3));
    }
  } else if (flags.cons) {
    Var cons = cons_loss(tape, m, codes1, codes2);
    out.cons = tape.val(cons).value();
    total = tape.add(total, tape.scale(cons, w.beta2));
  }

  out.total = total;
  out.total_value = tape.val(total).value();
  return out;
}

}  // namespace pmdp
