#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "pmdp/adam.hpp"
#include "pmdp/autodiff.hpp"
#include "pmdp/gradcheck.hpp"
#include "pmdp/losses.hpp"
#include "pmdp/model.hpp"
#include "pmdp/rng.hpp"

using namespace pmdp;

TEST_CASE("forward op values") {
  Tape t;
  Var x = t.constant(Tensor::vec({-2.5, 3.0}));
  Var y = t.relu(x);
  CHECK(t.val(y).data[0] == 0.0);
  CHECK(t.val(y).data[1] == 3.0);

  Var z = t.softmax_rows(t.constant(Tensor::row({0, 0, 0})));
  for (double v : t.val(z).data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));

  Var n = t.sq_l2_norm(t.constant(Tensor::vec({3, 4})));
  CHECK(t.val(n).value() == 25.0);

  Var l = t.l1_norm(t.constant(Tensor::vec({-1.5, 2.0})));
  CHECK(t.val(l).value() == 3.5);

  Var m = t.max_scalar(t.constant(Tensor::vec({-1.0, 0.5})), 0.0);
  CHECK(t.val(m).data[0] == 0.0);
  CHECK(t.val(m).data[1] == 0.5);
}

TEST_CASE("shape mismatch raises dimension error") {
  Tape t;
  Var a = t.constant(Tensor({2, 3}));
  Var b = t.constant(Tensor({2, 2}));
  CHECK_THROWS_AS(t.matmul(a, b), DimensionError);
  CHECK_THROWS_AS(t.sub(a, b), DimensionError);
  CHECK_THROWS_AS(t.elemwise_mul(a, b), DimensionError);
}

TEST_CASE("non-finite forward output raises numeric error") {
  Tape t;
  Var a = t.constant(Tensor::vec({1e308}));
  CHECK_THROWS_AS(t.elemwise_mul(a, a), NumericError);
  Var neg = t.constant(Tensor::vec({-1.0}));
  CHECK_THROWS_AS(t.sqrt_elem(neg), NumericError);
}

TEST_CASE("backward basics") {
  SUBCASE("d(x^2)/dx at 3 is 6") {
    Tape t;
    Var x = t.leaf(Tensor::scalar(3.0), true, "x");
    Var loss = t.sum(t.elemwise_mul(x, x));
    t.backward(loss);
    CHECK(t.grad(x).value() == doctest::Approx(6.0).epsilon(1e-15));
  }
  SUBCASE("relu subgradient zero on the negative side") {
    Tape t;
    Var x = t.leaf(Tensor::vec({-1.0, 2.0}), true, "x");
    t.backward(t.sum(t.relu(x)));
    CHECK(t.grad(x).data[0] == 0.0);
    CHECK(t.grad(x).data[1] == 1.0);
  }
  SUBCASE("l1 sign gradient, zero at exactly zero") {
    Tape t;
    Var x = t.leaf(Tensor::vec({-0.5, 0.7, 0.0}), true, "x");
    t.backward(t.l1_norm(x));
    CHECK(t.grad(x).data[0] == -1.0);
    CHECK(t.grad(x).data[1] == 1.0);
    CHECK(t.grad(x).data[2] == 0.0);
  }
  SUBCASE("unused trainable leaf gets a zero gradient of matching shape") {
    Tape t;
    Var x = t.leaf(Tensor::scalar(2.0), true, "x");
    Var unused = t.leaf(Tensor({2, 2}), true, "unused");
    t.backward(t.sum(x));
    CHECK(t.grad(unused).same_shape(Tensor({2, 2})));
    for (double v : t.grad(unused).data) CHECK(v == 0.0);
  }
  SUBCASE("non-scalar loss rejected") {
    Tape t;
    Var x = t.leaf(Tensor::vec({1, 2}), true, "x");
    CHECK_THROWS_AS(t.backward(x), ContractError);
  }
}

TEST_CASE("bias add broadcast and its reduction gradient") {
  Tape t;
  Var x = t.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), true, "x");
  Var b = t.leaf(Tensor::row({10, 20, 30}), true, "b");
  Var y = t.add(x, b);
  CHECK(t.val(y).at(1, 2) == 36.0);
  t.backward(t.sum(y));
  for (double v : t.grad(b).data) CHECK(v == 2.0);  // summed over rows
}

TEST_CASE("matmul values and gradient") {
  Tape t;
  Var a = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}), true, "a");
  Var b = t.leaf(Tensor({2, 2}, {5, 6, 7, 8}), true, "b");
  Var c = t.matmul(a, b);
  CHECK(t.val(c).data == std::vector<double>{19, 22, 43, 50});
  t.backward(t.sum(c));
  // d sum(AB)/dA = ones @ B^T
  CHECK(t.grad(a).data == std::vector<double>{11, 15, 11, 15});
  CHECK(t.grad(b).data == std::vector<double>{4, 4, 6, 6});
}

TEST_CASE("backward is linear in the loss") {
  RngStream rng = make_stream(7, "linear");
  Tensor xv({3, 2});
  for (double& v : xv.data) v = rng.normal();

  auto grad_of = [&](double a, double b) {
    Tape t;
    Var x = t.leaf(xv, true, "x");
    Var f = t.sq_l2_norm(x);
    Var g = t.l1_norm(x);
    Var loss = t.add(t.scale(f, a), t.scale(g, b));
    t.backward(loss);
    return t.grad(x).data;
  };

  auto gf = grad_of(1.0, 0.0);
  auto gg = grad_of(0.0, 1.0);
  auto combined = grad_of(2.5, -1.25);
  for (std::size_t i = 0; i < gf.size(); ++i) {
    CHECK(combined[i] ==
          doctest::Approx(2.5 * gf[i] - 1.25 * gg[i]).epsilon(1e-10));
  }
}

TEST_CASE("determinism: identical seeds give bit-identical gradients") {
  auto run = [] {
    RngStream rng = make_stream(42, "det");
    Tensor xv({4, 3});
    for (double& v : xv.data) v = rng.normal();
    Tape t;
    Var x = t.leaf(xv, true, "x");
    Var y = t.softmax_rows(t.relu(x));
    Var loss = t.sq_l2_norm(y);
    t.backward(loss);
    return std::make_pair(t.val(loss).value(), t.grad(x).data);
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(std::memcmp(&l1, &l2, sizeof(double)) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("finite differences: quadratic is exact up to roundoff") {
  ParamMap params;
  params["x"] = Tensor::scalar(3.0);
  auto fn = [](Tape& t, const VarMap& v) {
    return t.sum(t.elemwise_mul(v.at("x"), v.at("x")));
  };
  auto res = finite_diff_check(fn, params, 1e-5);
  CHECK(res.max_rel_error < 1e-7);
}

TEST_CASE("finite differences across every op, away from kinks") {
  RngStream rng = make_stream(11, "fd");
  ParamMap params;
  params["a"] = Tensor({3, 4});
  params["b"] = Tensor({4, 2});
  params["c"] = Tensor::row({1.0, -2.0});
  for (auto* t : {&params["a"], &params["b"], &params["c"]}) {
    for (double& v : t->data) {
      do {
        v = rng.normal();
      } while (std::abs(v) < 1e-2);  // keep clear of relu/l1 kinks
    }
  }
  auto fn = [](Tape& t, const VarMap& v) {
    Var h = t.matmul(v.at("a"), v.at("b"));         // 3x2
    Var biased = t.add(h, v.at("c"));
    Var r = t.relu(biased);
    Var lr = t.leaky_relu(t.sub(biased, r));
    Var sm = t.softmax_rows(biased);
    Var mixed = t.elemwise_mul(sm, t.add(r, lr));
    Var sq = t.elemwise_mul(mixed, mixed);
    Var root = t.sqrt_elem(t.max_scalar(sq, 1e-6));
    Var partial = t.add(t.scale(t.l1_norm(root), 0.3),
                        t.scale(t.sq_l2_norm(mixed), 0.7));
    return t.add(t.add(partial, t.mean(biased)), t.sum(sm));
  };
  auto res = finite_diff_check(fn, params, 1e-5);
  INFO("worst: ", res.worst_param, "[", res.worst_index, "]");
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("adam steps") {
  SUBCASE("first step moves by about -lr when g == 1") {
    ParamMap p;
    p["w"] = Tensor::vec({1.0, 2.0});
    ParamMap g;
    g["w"] = Tensor::vec({1.0, 1.0});
    AdamConfig cfg;
    cfg.lr = 0.01;
    AdamState st(cfg);
    adam_step(p, g, st);
    // bias-corrected m-hat = v-hat = 1 at t=1
    const double expected = 1.0 - 0.01 * (1.0 / (1.0 + cfg.eps));
    CHECK(p["w"].data[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(st.t == 1);
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamMap p;
    p["w"] = Tensor::vec({1.5});
    ParamMap g;
    g["w"] = Tensor::vec({0.0});
    AdamState st;
    adam_step(p, g, st);
    adam_step(p, g, st);
    CHECK(p["w"].data[0] == 1.5);
    CHECK(st.m["w"].data[0] == 0.0);
  }
  SUBCASE("constant gradient: second delta no larger than the first") {
    ParamMap p;
    p["w"] = Tensor::vec({0.0});
    ParamMap g;
    g["w"] = Tensor::vec({0.3});
    AdamState st;
    adam_step(p, g, st);
    const double d1 = std::abs(p["w"].data[0]);
    const double before = p["w"].data[0];
    adam_step(p, g, st);
    const double d2 = std::abs(p["w"].data[0] - before);
    CHECK(d2 <= d1 * (1.0 + 1e-6));
  }
  SUBCASE("shape mismatch rejected") {
    ParamMap p;
    p["w"] = Tensor::vec({1.0, 2.0});
    ParamMap g;
    g["w"] = Tensor::vec({1.0});
    AdamState st;
    CHECK_THROWS_AS(adam_step(p, g, st), DimensionError);
  }
}
