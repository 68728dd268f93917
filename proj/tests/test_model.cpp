#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>

#include "pmdp/checkpoint.hpp"
#include "pmdp/gradcheck.hpp"
#include "pmdp/model.hpp"
#include "pmdp/rng.hpp"

using namespace pmdp;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.input_dim = 5;
  cfg.latent_dim = 4;
  cfg.num_subspaces = 3;
  cfg.encoder_hidden = {8};
  cfg.decoder_hidden = {8};
  return cfg;
}

Tensor random_batch(std::size_t n, std::size_t dim, std::uint64_t seed) {
  RngStream rng = make_stream(seed, "batch");
  Tensor x({n, dim});
  for (double& v : x.data) v = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("encode shape, determinism, zero-parameter case") {
  ModelConfig cfg = small_config();
  RngStream rng = make_stream(3, "init");
  ParamMap params = init_params(cfg, rng);

  Tensor x = random_batch(7, cfg.input_dim, 9);
  Tape t;
  ModelVars mv = register_model(t, cfg, params, false);
  Var z = encode(t, mv, t.constant(x));
  CHECK(t.val(z).rows() == 7);
  CHECK(t.val(z).cols() == cfg.latent_dim);

  Tape t2;
  ModelVars mv2 = register_model(t2, cfg, params, false);
  Var z2 = encode(t2, mv2, t2.constant(x));
  CHECK(std::memcmp(t.val(z).data.data(), t2.val(z2).data.data(),
                    t.val(z).numel() * sizeof(double)) == 0);

  ParamMap zeros = params;
  for (auto& [k, v] : zeros) v = Tensor::zeros(v.shape);
  Tape t3;
  ModelVars mv3 = register_model(t3, cfg, zeros, false);
  Var z3 = encode(t3, mv3, t3.constant(x));
  for (double v : t3.val(z3).data) CHECK(v == 0.0);

  Tape t4;
  ModelVars mv4 = register_model(t4, cfg, params, false);
  CHECK_THROWS_AS(encode(t4, mv4, t4.constant(Tensor({2, 3}))), DimensionError);
}

TEST_CASE("project and aggregate contracts") {
  ModelConfig cfg = small_config();
  RngStream rng = make_stream(5, "init");
  ParamMap params = init_params(cfg, rng);
  Tensor x = random_batch(4, cfg.input_dim, 2);

  Tape t;
  ModelVars mv = register_model(t, cfg, params, false);
  Var zhat = encode(t, mv, t.constant(x));
  auto codes = project(t, mv, zhat);
  REQUIRE(codes.size() == cfg.num_subspaces);
  for (Var c : codes) {
    CHECK(t.val(c).rows() == 4);
    CHECK(t.val(c).cols() == cfg.latent_dim);
  }

  // aggregation of disjoint supports reproduces the concatenation pattern
  Tape t2;
  Var a = t2.constant(Tensor::row({1.5, 0, 0}));
  Var b = t2.constant(Tensor::row({0, -2.0, 0}));
  Var c = t2.constant(Tensor::row({0, 0, 7.25}));
  Var z = aggregate(t2, {a, b, c});
  CHECK(t2.val(z).data == std::vector<double>{1.5, -2.0, 7.25});

  // permutation invariance of the sum
  Var zp = aggregate(t2, {c, a, b});
  CHECK(t2.val(zp).data == t2.val(z).data);
}

TEST_CASE("swap with self equals plain decode, bit for bit") {
  ModelConfig cfg = small_config();
  RngStream rng = make_stream(8, "init");
  ParamMap params = init_params(cfg, rng);
  Tensor x = random_batch(3, cfg.input_dim, 4);

  Tape t;
  ModelVars mv = register_model(t, cfg, params, false);
  auto codes = project(t, mv, encode(t, mv, t.constant(x)));
  Var direct = decode(t, mv, aggregate(t, codes));
  for (std::size_t i = 0; i < cfg.num_subspaces; ++i) {
    Var swapped = swap_recombine(t, mv, codes, codes, i);
    CHECK(std::memcmp(t.val(swapped).data.data(), t.val(direct).data.data(),
                      t.val(direct).numel() * sizeof(double)) == 0);
  }
  CHECK_THROWS_AS(swap_recombine(t, mv, codes, codes, cfg.num_subspaces),
                  ContractError);
}

TEST_CASE("k=2 swap takes subspace 0 from the first sample") {
  Tape t;
  std::vector<Var> c1 = {t.constant(Tensor::row({1, 0})),
                         t.constant(Tensor::row({0, 10}))};
  std::vector<Var> c2 = {t.constant(Tensor::row({5, 0})),
                         t.constant(Tensor::row({0, 70}))};
  std::vector<Var> mixed = c2;
  mixed[0] = c1[0];
  Var z = aggregate(t, mixed);
  CHECK(t.val(z).data == std::vector<double>{1, 70});
}

TEST_CASE("full pipeline is differentiable end to end") {
  ModelConfig cfg = small_config();
  RngStream rng = make_stream(13, "init");
  ParamMap params = init_params(cfg, rng);
  Tensor x = random_batch(2, cfg.input_dim, 21);

  auto fn = [&](Tape& t, const VarMap& vars) {
    ModelVars mv{&cfg, vars};
    Var xc = t.constant(x);
    Var xhat = autoencode(t, mv, xc);
    return t.sq_l2_norm(t.sub(xc, xhat));
  };
  auto res = finite_diff_check(fn, params, 1e-5);
  INFO("worst: ", res.worst_param, "[", res.worst_index, "]");
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("masking an aggregated disjoint-support code recovers the inputs") {
  // with sparsity satisfied, sum behaves as concatenation: masking z by each
  // support gives back the exact subspace codes
  const std::size_t d = 6;
  RngStream rng = make_stream(31, "mask");
  std::vector<std::vector<std::size_t>> supports = {{0, 1}, {2, 3}, {4, 5}};
  std::vector<Tensor> codes;
  for (const auto& sup : supports) {
    Tensor c({1, d});
    for (std::size_t r : sup) c.data[r] = rng.normal();
    codes.push_back(c);
  }
  Tensor z({1, d});
  for (const Tensor& c : codes) {
    for (std::size_t i = 0; i < d; ++i) z.data[i] += c.data[i];
  }
  for (std::size_t i = 0; i < codes.size(); ++i) {
    Tensor rec({1, d});
    for (std::size_t r : supports[i]) rec.data[r] = z.data[r];
    CHECK(rec.data == codes[i].data);
  }
}

TEST_CASE("checkpoint round trip is bit exact and sorted by name") {
  ModelConfig cfg = small_config();
  RngStream rng = make_stream(17, "init");
  ParamMap params = init_params(cfg, rng);
  params["tracker.mu"] = Tensor::vec({1.0, 2.0, 3.0});

  const std::string path = "test_model_ckpt.bin";
  save_checkpoint(path, params);
  ParamMap loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == params.size());
  for (const auto& [name, t] : params) {
    REQUIRE(loaded.count(name) == 1);
    CHECK(loaded[name].shape == t.shape);
    CHECK(std::memcmp(loaded[name].data.data(), t.data.data(),
                      t.data.size() * sizeof(double)) == 0);
  }

  // file starts with the magic and the first (lexicographically smallest) name
  std::FILE* f = std::fopen(path.c_str(), "rb");
  char head[9] = {};
  REQUIRE(std::fread(head, 1, 9, f) == 9);
  std::fclose(f);
  CHECK(std::memcmp(head, "PMDP1", 5) == 0);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(load_checkpoint("does_not_exist.bin"), ContractError);
}

TEST_CASE("parameter count matches the architecture") {
  ModelConfig cfg = small_config();
  RngStream rng = make_stream(23, "init");
  ParamMap params = init_params(cfg, rng);
  std::size_t total = 0;
  for (const auto& [k, v] : params) total += v.numel();
  auto mlp = [](std::size_t in, std::vector<std::size_t> hidden,
                std::size_t out) {
    hidden.push_back(out);
    std::size_t n = 0, prev = in;
    for (std::size_t w : hidden) {
      n += prev * w + w;
      prev = w;
    }
    return n;
  };
  std::size_t expect =
      mlp(cfg.input_dim, cfg.encoder_hidden, cfg.latent_dim) +
      mlp(cfg.latent_dim, cfg.decoder_hidden, cfg.input_dim) +
      cfg.num_subspaces * mlp(cfg.latent_dim, {cfg.latent_dim}, cfg.latent_dim);
  CHECK(total == expect);
}
