#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pmdp/rng.hpp"
#include "pmdp/tensor.hpp"

namespace pmdp {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

enum class FactorKind { circle, interval, categorical };

struct Factor {
  FactorKind kind = FactorKind::circle;
  double radius = 1.0;         // circle
  double lo = 0.0, hi = 1.0;   // interval
  int num_values = 0;          // categorical

  std::size_t raw_dim() const {
    switch (kind) {
      case FactorKind::circle: return 2;
      case FactorKind::interval: return 1;
      case FactorKind::categorical: return 2;
    }
    return 0;
  }
};

struct FactorSpec {
  std::vector<Factor> factors;

  std::size_t count() const { return factors.size(); }

  std::size_t raw_dim() const {
    std::size_t d = 0;
    for (const Factor& f : factors) d += f.raw_dim();
    return d;
  }
};

/// Parses "circle", "circle:R", "interval", "interval:lo:hi",
/// "categorical:V"; factors separated by commas.
inline FactorSpec parse_factors(const std::string& text) {
  FactorSpec spec;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string::npos) end = text.size();
    std::string item = text.substr(pos, end - pos);
    std::vector<std::string> parts;
    std::size_t p = 0;
    while (p <= item.size()) {
      std::size_t q = item.find(':', p);
      if (q == std::string::npos) q = item.size();
      parts.push_back(item.substr(p, q - p));
      p = q + 1;
    }
    Factor f;
    if (parts[0] == "circle") {
      f.kind = FactorKind::circle;
      if (parts.size() > 1) f.radius = std::stod(parts[1]);
      if (!(f.radius > 0)) throw ContractError("circle radius must be > 0");
    } else if (parts[0] == "interval") {
      f.kind = FactorKind::interval;
      if (parts.size() > 2) {
        f.lo = std::stod(parts[1]);
        f.hi = std::stod(parts[2]);
      }
      if (!(f.hi > f.lo)) throw ContractError("interval needs hi > lo");
    } else if (parts[0] == "categorical") {
      f.kind = FactorKind::categorical;
      if (parts.size() < 2) throw ContractError("categorical needs a value count");
      f.num_values = std::stoi(parts[1]);
      if (f.num_values < 2) throw ContractError("categorical needs V >= 2");
    } else {
      throw ContractError("unknown factor kind: " + parts[0]);
    }
    spec.factors.push_back(f);
    pos = end + 1;
    if (end == text.size()) break;
  }
  return spec;
}

/// Standard torus parametrization; theta runs around the tube of radius r,
/// phi around the axis at distance R.
inline std::array<double, 3> torus_point(double theta, double phi, double R,
                                         double r) {
  if (!(R > r && r > 0)) throw ContractError("torus needs R > r > 0");
  const double ring = R + r * std::cos(theta);
  return {ring * std::cos(phi), ring * std::sin(phi), r * std::sin(theta)};
}

/// Per-factor ground-truth metric: angular for circles, absolute difference
/// for intervals, 0/1 for categorical values.
inline double factor_distance(const FactorSpec& spec, std::size_t index,
                              double a, double b) {
  const Factor& f = spec.factors.at(index);
  switch (f.kind) {
    case FactorKind::circle: {
      double d = std::fmod(std::abs(a - b), kTwoPi);
      return std::min(d, kTwoPi - d);
    }
    case FactorKind::interval: {
      if (a < f.lo - 1e-12 || a > f.hi + 1e-12 || b < f.lo - 1e-12 ||
          b > f.hi + 1e-12) {
        throw ContractError("interval value outside domain");
      }
      return std::abs(a - b);
    }
    case FactorKind::categorical: {
      const int ia = static_cast<int>(std::lround(a));
      const int ib = static_cast<int>(std::lround(b));
      if (ia < 0 || ia >= f.num_values || ib < 0 || ib >= f.num_values) {
        throw ContractError("categorical value outside domain");
      }
      return ia == ib ? 0.0 : 1.0;
    }
  }
  return 0.0;
}

/// L2 combination of the per-factor distances.
inline double product_distance(const FactorSpec& spec,
                               const std::vector<double>& f1,
                               const std::vector<double>& f2) {
  if (f1.size() != spec.count() || f2.size() != spec.count()) {
    throw DimensionError("product_distance: factor count mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < spec.count(); ++i) {
    const double d = factor_distance(spec, i, f1[i], f2[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

/// Number of discrete levels used when a factor enters an entropy /
/// mutual-information computation.
inline int factor_level_count(const Factor& f, int continuous_levels = 10) {
  return f.kind == FactorKind::categorical ? f.num_values : continuous_levels;
}

inline int factor_level(const Factor& f, double value,
                        int continuous_levels = 10) {
  switch (f.kind) {
    case FactorKind::circle: {
      double a = std::fmod(value, kTwoPi);
      if (a < 0) a += kTwoPi;
      int lvl = static_cast<int>(a / kTwoPi * continuous_levels);
      return std::min(lvl, continuous_levels - 1);
    }
    case FactorKind::interval: {
      double t = (value - f.lo) / (f.hi - f.lo);
      int lvl = static_cast<int>(t * continuous_levels);
      return std::clamp(lvl, 0, continuous_levels - 1);
    }
    case FactorKind::categorical:
      return static_cast<int>(std::lround(value));
  }
  return 0;
}

enum class PairPolicy { exactly_one, variable };

struct DatasetConfig {
  std::string kind = "product";  // product | torus
  FactorSpec factors;
  std::size_t ambient_dim = 12;
  double noise = 0.01;
  PairPolicy policy = PairPolicy::exactly_one;
  std::uint64_t seed = 1;
  double torus_R = 2.0;
  double torus_r = 0.5;
};

struct LabeledPair {
  std::vector<double> factors1, factors2;
  std::vector<double> x1, x2;
  std::vector<std::size_t> changed;  // changed-factor set C, sorted
};

struct PairBatch {
  Tensor x1, x2;  // N x observation_dim
  std::vector<std::vector<double>> factors1, factors2;
  std::vector<std::vector<std::size_t>> changed;
};

/// Frozen random smooth map from raw factor coordinates into R^N:
/// raw -> tanh(W1 raw + b1) -> W2 h. Circles enter as radius-scaled
/// (cos, sin) pairs, categorical values as fixed random anchor 2-vectors.
class Embedding {
 public:
  Embedding(const FactorSpec& spec, std::size_t ambient_dim,
            std::uint64_t seed)
      : spec_(spec), ambient_(ambient_dim) {
    const std::size_t raw = spec.raw_dim();
    hidden_ = std::max<std::size_t>(8, 2 * ambient_dim);
    RngStream rng = make_stream(seed, "embed");
    w1_.assign(hidden_ * raw, 0.0);
    b1_.assign(hidden_, 0.0);
    w2_.assign(ambient_ * hidden_, 0.0);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(raw));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
    for (double& v : w1_) v = rng.normal() * s1;
    for (double& v : b1_) v = 0.3 * rng.normal();
    for (double& v : w2_) v = rng.normal() * s2;
    RngStream arng = make_stream(seed, "anchor");
    for (const Factor& f : spec.factors) {
      if (f.kind == FactorKind::categorical) {
        std::vector<std::array<double, 2>> anchors(
            static_cast<std::size_t>(f.num_values));
        for (auto& a : anchors) {
          a[0] = arng.normal();
          a[1] = arng.normal();
        }
        anchors_.push_back(std::move(anchors));
      } else {
        anchors_.emplace_back();
      }
    }
  }

  std::vector<double> raw_coords(const std::vector<double>& factors) const {
    std::vector<double> raw;
    raw.reserve(spec_.raw_dim());
    for (std::size_t i = 0; i < spec_.count(); ++i) {
      const Factor& f = spec_.factors[i];
      switch (f.kind) {
        case FactorKind::circle:
          raw.push_back(f.radius * std::cos(factors[i]));
          raw.push_back(f.radius * std::sin(factors[i]));
          break;
        case FactorKind::interval:
          raw.push_back(factors[i]);
          break;
        case FactorKind::categorical: {
          const auto& a =
              anchors_[i][static_cast<std::size_t>(std::lround(factors[i]))];
          raw.push_back(a[0]);
          raw.push_back(a[1]);
          break;
        }
      }
    }
    return raw;
  }

  std::vector<double> embed(const std::vector<double>& factors) const {
    const std::vector<double> raw = raw_coords(factors);
    std::vector<double> h(hidden_, 0.0);
    for (std::size_t i = 0; i < hidden_; ++i) {
      double acc = b1_[i];
      for (std::size_t j = 0; j < raw.size(); ++j) {
        acc += w1_[i * raw.size() + j] * raw[j];
      }
      h[i] = std::tanh(acc);
    }
    std::vector<double> out(ambient_, 0.0);
    for (std::size_t i = 0; i < ambient_; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < hidden_; ++j) {
        acc += w2_[i * hidden_ + j] * h[j];
      }
      out[i] = acc;
    }
    return out;
  }

 private:
  FactorSpec spec_;
  std::size_t ambient_;
  std::size_t hidden_;
  std::vector<double> w1_, b1_, w2_;
  std::vector<std::vector<std::array<double, 2>>> anchors_;
};

/// Deterministic generator: every sample is a pure function of
/// (dataset seed, draw index).
class SyntheticDataset {
 public:
  explicit SyntheticDataset(DatasetConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.kind == "torus") {
      if (cfg_.factors.factors.empty()) {
        cfg_.factors.factors = {Factor{FactorKind::circle, cfg_.torus_R},
                                Factor{FactorKind::circle, cfg_.torus_r}};
      }
      if (cfg_.factors.count() != 2 ||
          cfg_.factors.factors[0].kind != FactorKind::circle ||
          cfg_.factors.factors[1].kind != FactorKind::circle) {
        throw ContractError("torus dataset needs exactly two circle factors");
      }
    } else if (cfg_.kind == "product") {
      if (cfg_.factors.factors.empty()) {
        throw ContractError("product dataset needs dataset.factors");
      }
      embedding_.emplace(cfg_.factors, cfg_.ambient_dim, cfg_.seed);
    } else {
      throw ContractError("unknown dataset kind: " + cfg_.kind);
    }
  }

  const DatasetConfig& config() const { return cfg_; }
  const FactorSpec& factors() const { return cfg_.factors; }
  std::size_t num_factors() const { return cfg_.factors.count(); }

  std::size_t observation_dim() const {
    return cfg_.kind == "torus" ? 3 : cfg_.ambient_dim;
  }

  std::vector<double> sample_tuple(RngStream& rng) const {
    std::vector<double> t;
    t.reserve(num_factors());
    for (const Factor& f : cfg_.factors.factors) {
      switch (f.kind) {
        case FactorKind::circle: t.push_back(rng.uniform(0.0, kTwoPi)); break;
        case FactorKind::interval: t.push_back(rng.uniform(f.lo, f.hi)); break;
        case FactorKind::categorical:
          t.push_back(static_cast<double>(
              rng.below(static_cast<std::uint64_t>(f.num_values))));
          break;
      }
    }
    return t;
  }

  /// Noise-free embedding of a factor tuple.
  std::vector<double> embed(const std::vector<double>& tuple) const {
    if (cfg_.kind == "torus") {
      auto p = torus_point(tuple[1], tuple[0], cfg_.torus_R, cfg_.torus_r);
      return {p[0], p[1], p[2]};
    }
    return embedding_->embed(tuple);
  }

  std::vector<double> observe(const std::vector<double>& tuple,
                              RngStream& rng) const {
    std::vector<double> x = embed(tuple);
    if (cfg_.noise > 0.0) {
      for (double& v : x) v += cfg_.noise * rng.normal();
    }
    return x;
  }

  /// Resamples the changed set C into a copy of `tuple`.
  std::vector<double> apply_changes(const std::vector<double>& tuple,
                                    const std::vector<std::size_t>& changed,
                                    RngStream& rng) const {
    std::vector<double> out = tuple;
    for (std::size_t c : changed) {
      const Factor& f = cfg_.factors.factors.at(c);
      switch (f.kind) {
        case FactorKind::circle: out[c] = rng.uniform(0.0, kTwoPi); break;
        case FactorKind::interval: out[c] = rng.uniform(f.lo, f.hi); break;
        case FactorKind::categorical: {
          double v = out[c];
          do {
            v = static_cast<double>(
                rng.below(static_cast<std::uint64_t>(f.num_values)));
          } while (v == out[c]);
          out[c] = v;
          break;
        }
      }
    }
    return out;
  }

  std::vector<std::size_t> sample_changed_set(RngStream& rng) const {
    const std::size_t nf = num_factors();
    if (nf < 2) throw ContractError("pair sampling needs >= 2 factors");
    std::size_t count = 1;
    if (cfg_.policy == PairPolicy::variable) {
      count = 1 + static_cast<std::size_t>(rng.below(nf - 1));
    }
    // partial Fisher-Yates over factor indices
    std::vector<std::size_t> idx(nf);
    for (std::size_t i = 0; i < nf; ++i) idx[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(nf - i));
      std::swap(idx[i], idx[j]);
    }
    std::vector<std::size_t> changed(idx.begin(),
                                     idx.begin() + static_cast<long>(count));
    std::sort(changed.begin(), changed.end());
    return changed;
  }

  LabeledPair sample_pair(std::uint64_t draw_index) const {
    RngStream rng = make_stream(cfg_.seed, "pair", draw_index);
    LabeledPair p;
    p.factors1 = sample_tuple(rng);
    p.changed = sample_changed_set(rng);
    p.factors2 = apply_changes(p.factors1, p.changed, rng);
    p.x1 = observe(p.factors1, rng);
    p.x2 = observe(p.factors2, rng);
    return p;
  }

  PairBatch sample_pair_batch(std::size_t n, std::uint64_t batch_index) const {
    PairBatch b;
    const std::size_t dim = observation_dim();
    b.x1 = Tensor({n, dim});
    b.x2 = Tensor({n, dim});
    for (std::size_t r = 0; r < n; ++r) {
      LabeledPair p = sample_pair(batch_index * n + r);
      std::copy(p.x1.begin(), p.x1.end(), b.x1.data.begin() + r * dim);
      std::copy(p.x2.begin(), p.x2.end(), b.x2.data.begin() + r * dim);
      b.factors1.push_back(std::move(p.factors1));
      b.factors2.push_back(std::move(p.factors2));
      b.changed.push_back(std::move(p.changed));
    }
    return b;
  }

  /// Single observations for evaluation sets, independent of the pair stream.
  std::pair<std::vector<double>, std::vector<double>> sample_observation(
      std::uint64_t draw_index) const {
    RngStream rng = make_stream(cfg_.seed, "obs", draw_index);
    std::vector<double> tuple = sample_tuple(rng);
    std::vector<double> x = observe(tuple, rng);
    return {std::move(tuple), std::move(x)};
  }

 private:
  DatasetConfig cfg_;
  std::optional<Embedding> embedding_;
};

}  // namespace pmdp
