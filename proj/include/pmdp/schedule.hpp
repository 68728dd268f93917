#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pmdp/adam.hpp"
#include "pmdp/losses.hpp"
#include "pmdp/model.hpp"
#include "pmdp/synthdata.hpp"

namespace pmdp {

/// Exponential slow-start ramps. Reconstruction trains alone for the warmup
/// fraction, then the remaining terms enter in the order reg, dis, cons.
/// beta3 decays complementarily to beta2's ramp: the regularizer holds the
/// subspaces open until the consistency loss runs at full strength.
struct BetaSchedule {
  std::size_t total_steps = 30000;
  double warmup_frac = 0.20;
  double entry_reg = 0.20;
  double entry_dis = 0.30;
  double entry_cons = 0.40;
  double ramp_frac = 0.10;
  double beta1_max = 0.1;
  double beta2_max = 100.0;
  double beta3_max = 0.0001;

  void validate() const {
    if (!(warmup_frac > 0 && warmup_frac < 1)) {
      throw ContractError("schedule: warmup_frac must be in (0,1)");
    }
    if (!(entry_reg <= entry_dis && entry_dis <= entry_cons)) {
      throw ContractError("schedule: entries must be non-decreasing");
    }
    if (beta1_max < 0 || beta2_max < 0 || beta3_max < 0) {
      throw ContractError("schedule: beta maxima must be >= 0");
    }
  }
};

struct BetaValues {
  double beta1 = 0, beta2 = 0, beta3 = 0;
  PhaseFlags flags;
};

inline BetaValues beta_at(std::size_t step, const BetaSchedule& s) {
  s.validate();
  if (step > s.total_steps) throw ContractError("beta_at: step out of range");
  const double t = static_cast<double>(step);
  const double total = static_cast<double>(s.total_steps);
  const double ramp_steps = s.ramp_frac * total;

  auto ramp = [&](double entry_frac, double max_value) -> double {
    const double entry = entry_frac * total;
    if (t < entry) return 0.0;
    if (ramp_steps <= 0.0) return max_value;
    return max_value * (1.0 - std::exp(-(t - entry) / ramp_steps));
  };

  BetaValues out;
  out.beta1 = ramp(s.entry_dis, s.beta1_max);
  out.beta2 = ramp(s.entry_cons, s.beta2_max);
  out.flags.rec = true;
  out.flags.reg = t >= s.entry_reg * total;
  out.flags.dis = t >= s.entry_dis * total;
  out.flags.cons = t >= s.entry_cons * total;
  if (out.flags.reg) {
    out.beta3 = s.beta2_max > 0.0
                    ? s.beta3_max * (1.0 - out.beta2 / s.beta2_max)
                    : s.beta3_max;
  }
  return out;
}

enum class OracleMode { auto_switch, soft, hard };

inline OracleMode parse_oracle_mode(const std::string& s) {
  if (s == "auto") return OracleMode::auto_switch;
  if (s == "soft") return OracleMode::soft;
  if (s == "hard") return OracleMode::hard;
  throw ContractError("unknown oracle mode: " + s);
}

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t steps = 30000;
  std::size_t batch_size = 32;
  ModelConfig model;
  LossWeights weights;  // margin and tau; betas come from the schedule
  AdamConfig adam;
  BetaSchedule schedule;
  OracleMode oracle_mode = OracleMode::auto_switch;

  void validate() const {
    if (batch_size < 2) throw ContractError("train: batch_size must be >= 2");
    if (steps < 1) throw ContractError("train: steps must be >= 1");
    model.validate();
    schedule.validate();
  }
};

struct StepRecord {
  std::size_t step = 0;
  double rec = 0, dis = 0, spar = 0, cons = 0, reg = 0, total = 0;
  double beta1 = 0, beta2 = 0, beta3 = 0;
  PhaseFlags flags;
  double oracle_agreement = std::numeric_limits<double>::quiet_NaN();
  bool degenerate_pair = false;
};

struct TrainResult {
  ParamMap params;
  std::vector<double> tracker_mu;
  std::vector<StepRecord> history;
};

/// Raised when the loss goes non-finite; carries the parameters at the
/// failing step for a diagnostic snapshot.
struct TrainDivergence : NumericError {
  std::size_t step;
  ParamMap snapshot;
  TrainDivergence(std::size_t s, ParamMap p, const std::string& what)
      : NumericError(what), step(s), snapshot(std::move(p)) {}
};

/// Per-batch diagnostic: fraction of pairs whose estimated oracle lands in
/// the modal subspace of their changed factors. The factor-to-subspace map
/// is rebuilt from the batch's single-change pairs, so this is a consistency
/// signal, not the held-out agreement used for acceptance.
inline double batch_oracle_agreement(
    const std::vector<std::size_t>& alpha,
    const std::vector<std::vector<std::size_t>>& changed,
    std::size_t num_subspaces, std::size_t num_factors) {
  std::vector<std::vector<std::size_t>> counts(
      num_factors, std::vector<std::size_t>(num_subspaces, 0));
  for (std::size_t r = 0; r < alpha.size(); ++r) {
    if (changed[r].size() == 1) counts[changed[r][0]][alpha[r]] += 1;
  }
  std::vector<int> modal(num_factors, -1);
  for (std::size_t c = 0; c < num_factors; ++c) {
    std::size_t best = 0, total = 0;
    for (std::size_t i = 0; i < num_subspaces; ++i) {
      total += counts[c][i];
      if (counts[c][i] > counts[c][best]) best = i;
    }
    if (total > 0) modal[c] = static_cast<int>(best);
  }
  std::size_t hits = 0, considered = 0;
  for (std::size_t r = 0; r < alpha.size(); ++r) {
    bool resolvable = true;
    for (std::size_t c : changed[r]) resolvable &= modal[c] >= 0;
    if (!resolvable) continue;
    considered += 1;
    for (std::size_t c : changed[r]) {
      if (modal[c] == static_cast<int>(alpha[r])) {
        hits += 1;
        break;
      }
    }
  }
  if (considered == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(hits) / static_cast<double>(considered);
}

/// T Adam steps over freshly sampled pair batches, betas from the schedule.
inline TrainResult train(const TrainConfig& cfg,
                         const SyntheticDataset& dataset) {
  cfg.validate();
  if (cfg.model.input_dim != dataset.observation_dim()) {
    throw DimensionError("train: model input_dim != dataset observation dim");
  }
  BetaSchedule sched = cfg.schedule;
  sched.total_steps = cfg.steps;

  RngStream init_rng = make_stream(cfg.seed, "init");
  ParamMap params = init_params(cfg.model, init_rng);
  NormTracker tracker(cfg.model.num_subspaces);
  AdamState adam(cfg.adam);

  TrainResult result;
  result.history.reserve(cfg.steps);

  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const BetaValues bv = beta_at(t, sched);
    LossWeights w = cfg.weights;
    w.beta1 = bv.beta1;
    w.beta2 = bv.beta2;
    w.beta3 = bv.beta3;

    bool hard = false;
    switch (cfg.oracle_mode) {
      case OracleMode::soft: hard = false; break;
      case OracleMode::hard: hard = true; break;
      case OracleMode::auto_switch:
        hard = sched.beta3_max <= 0.0 || bv.beta3 < 1e-3 * sched.beta3_max;
        break;
    }

    PairBatch batch = dataset.sample_pair_batch(cfg.batch_size, t);

    Tape tape;
    ModelVars mv = register_model(tape, cfg.model, params, true);
    Var x1 = tape.constant(batch.x1);
    Var x2 = tape.constant(batch.x2);

    TotalLossResult res;
    try {
      res = total_loss(tape, mv, x1, x2, w, bv.flags, tracker, true, hard);
      tape.backward(res.total);
    } catch (const NumericError& e) {
      throw TrainDivergence(t, params,
                            "non-finite loss at step " + std::to_string(t) +
                                ": " + e.what());
    }
    adam_step(params, tape.trainable_grads(), adam);

    StepRecord rec;
    rec.step = t;
    rec.rec = res.rec;
    rec.dis = res.dis;
    rec.spar = res.spar;
    rec.cons = res.cons;
    rec.reg = res.reg;
    rec.total = res.total_value;
    rec.beta1 = bv.beta1;
    rec.beta2 = bv.beta2;
    rec.beta3 = bv.beta3;
    rec.flags = bv.flags;
    rec.degenerate_pair = res.degenerate_pair;
    if (!res.alpha.empty()) {
      rec.oracle_agreement =
          batch_oracle_agreement(res.alpha, batch.changed,
                                 cfg.model.num_subspaces, dataset.num_factors());
    }
    result.history.push_back(rec);
  }

  result.params = std::move(params);
  result.tracker_mu = tracker.mu();
  return result;
}

}  // namespace pmdp
