#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pmdp/adam.hpp"
#include "pmdp/autodiff.hpp"
#include "pmdp/gradcheck.hpp"
#include "pmdp/rng.hpp"
#include "pmdp/tensor.hpp"

namespace pmdp {

/// Encoder -> k nonlinear projectors -> sum aggregation -> decoder.
/// Every subspace shares the latent dimensionality d.
struct ModelConfig {
  std::size_t input_dim = 12;
  std::size_t latent_dim = 6;    // d
  std::size_t num_subspaces = 4; // k
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::vector<std::size_t> decoder_hidden{64, 64};

  void validate() const {
    if (input_dim < 1 || latent_dim < 1 || num_subspaces < 1) {
      throw ContractError("model config: dims must be positive");
    }
    for (std::size_t w : encoder_hidden)
      if (w < 1) throw ContractError("model config: zero encoder width");
    for (std::size_t w : decoder_hidden)
      if (w < 1) throw ContractError("model config: zero decoder width");
  }
};

namespace detail {

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out,
                             RngStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({fan_in, fan_out});
  for (double& v : w.data) v = rng.uniform(-bound, bound);
  return w;
}

inline void init_mlp(ParamMap& params, const std::string& prefix,
                     std::size_t in_dim, const std::vector<std::size_t>& hidden,
                     std::size_t out_dim, RngStream& rng) {
  std::vector<std::size_t> widths = hidden;
  widths.push_back(out_dim);
  std::size_t prev = in_dim;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    params[base + ".w"] = glorot_uniform(prev, widths[l], rng);
    params[base + ".b"] = Tensor::zeros({1, widths[l]});
    prev = widths[l];
  }
}

// x @ W + b, relu between layers, final layer linear
inline Var mlp_forward(Tape& tape, const VarMap& vars,
                       const std::string& prefix, std::size_t num_layers,
                       Var x) {
  Var h = x;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    h = tape.add(tape.matmul(h, vars.at(base + ".w")), vars.at(base + ".b"));
    if (l + 1 < num_layers) h = tape.relu(h);
  }
  return h;
}

}  // namespace detail

/// Deterministic parameter init: Glorot-uniform weights, zero biases,
/// creation order fixed (encoder, decoder, projectors 0..k-1).
inline ParamMap init_params(const ModelConfig& cfg, RngStream& rng) {
  cfg.validate();
  ParamMap params;
  detail::init_mlp(params, "enc", cfg.input_dim, cfg.encoder_hidden,
                   cfg.latent_dim, rng);
  detail::init_mlp(params, "dec", cfg.latent_dim, cfg.decoder_hidden,
                   cfg.input_dim, rng);
  for (std::size_t i = 0; i < cfg.num_subspaces; ++i) {
    // two affine layers of width d with a relu between
    detail::init_mlp(params, "proj." + std::to_string(i), cfg.latent_dim,
                     {cfg.latent_dim}, cfg.latent_dim, rng);
  }
  return params;
}

/// Model parameters registered on a tape for one forward/backward pass.
struct ModelVars {
  const ModelConfig* cfg = nullptr;
  VarMap p;
};

inline ModelVars register_model(Tape& tape, const ModelConfig& cfg,
                                const ParamMap& params, bool trainable) {
  return ModelVars{&cfg, register_params(tape, params, trainable)};
}

inline Var encode(Tape& tape, const ModelVars& m, Var x) {
  if (tape.val(x).cols() != m.cfg->input_dim) {
    throw DimensionError("encode: input width != input_dim");
  }
  return detail::mlp_forward(tape, m.p, "enc", m.cfg->encoder_hidden.size() + 1,
                             x);
}

inline Var project_one(Tape& tape, const ModelVars& m, Var zhat,
                       std::size_t i) {
  if (i >= m.cfg->num_subspaces) {
    throw ContractError("project_one: subspace index out of range");
  }
  return detail::mlp_forward(tape, m.p, "proj." + std::to_string(i), 2, zhat);
}

inline std::vector<Var> project(Tape& tape, const ModelVars& m, Var zhat) {
  if (tape.val(zhat).cols() != m.cfg->latent_dim) {
    throw DimensionError("project: input width != latent_dim");
  }
  std::vector<Var> codes;
  codes.reserve(m.cfg->num_subspaces);
  for (std::size_t i = 0; i < m.cfg->num_subspaces; ++i) {
    codes.push_back(project_one(tape, m, zhat, i));
  }
  return codes;
}

/// aggr = +: elementwise sum of the subspace codes.
inline Var aggregate(Tape& tape, const std::vector<Var>& codes) {
  if (codes.empty()) throw ContractError("aggregate: no codes");
  Var z = codes[0];
  for (std::size_t i = 1; i < codes.size(); ++i) z = tape.add(z, codes[i]);
  return z;
}

inline Var decode(Tape& tape, const ModelVars& m, Var z) {
  if (tape.val(z).cols() != m.cfg->latent_dim) {
    throw DimensionError("decode: input width != latent_dim");
  }
  return detail::mlp_forward(tape, m.p, "dec", m.cfg->decoder_hidden.size() + 1,
                             z);
}

/// Decodes s^i taken from codes1 with all s^j (j != i) taken from codes2.
inline Var swap_recombine(Tape& tape, const ModelVars& m,
                          const std::vector<Var>& codes1,
                          const std::vector<Var>& codes2, std::size_t i) {
  if (i >= codes1.size() || codes1.size() != codes2.size()) {
    throw ContractError("swap_recombine: subspace index out of range");
  }
  std::vector<Var> mixed = codes2;
  mixed[i] = codes1[i];
  return decode(tape, m, aggregate(tape, mixed));
}

/// Full pipeline x -> x_hat; also hands back the intermediate subspace codes.
inline Var autoencode(Tape& tape, const ModelVars& m, Var x,
                      std::vector<Var>* codes_out = nullptr) {
  Var zhat = encode(tape, m, x);
  std::vector<Var> codes = project(tape, m, zhat);
  Var z = aggregate(tape, codes);
  if (codes_out) *codes_out = std::move(codes);
  return decode(tape, m, z);
}

}  // namespace pmdp
