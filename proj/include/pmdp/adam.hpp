#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "pmdp/tensor.hpp"

namespace pmdp {

using ParamMap = std::map<std::string, Tensor>;

struct AdamConfig {
  double lr = 0.0005;
  double b1 = 0.9;
  double b2 = 0.99;
  double eps = 1e-8;
};

/// Per-parameter first/second moment accumulators plus the shared step count.
struct AdamState {
  AdamConfig cfg;
  ParamMap m;
  ParamMap v;
  std::uint64_t t = 0;

  explicit AdamState(AdamConfig c = {}) : cfg(c) {}
};

/// One bias-corrected Adam update, in place. Parameters missing a gradient
/// entry are left untouched (their moments still decay).
inline void adam_step(ParamMap& params, const ParamMap& grads, AdamState& st) {
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.cfg.b1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.cfg.b2, static_cast<double>(st.t));
  for (auto& [name, p] : params) {
    Tensor& m = st.m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    Tensor& v = st.v.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    if (!m.same_shape(p) || !v.same_shape(p)) {
      throw DimensionError("adam_step: state shape mismatch for " + name);
    }
    const Tensor* g = nullptr;
    if (auto it = grads.find(name); it != grads.end()) {
      if (!it->second.same_shape(p)) {
        throw DimensionError("adam_step: grad shape mismatch for " + name);
      }
      g = &it->second;
    }
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g ? g->data[i] : 0.0;
      m.data[i] = st.cfg.b1 * m.data[i] + (1.0 - st.cfg.b1) * gi;
      v.data[i] = st.cfg.b2 * v.data[i] + (1.0 - st.cfg.b2) * gi * gi;
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
    }
  }
}

}  // namespace pmdp
