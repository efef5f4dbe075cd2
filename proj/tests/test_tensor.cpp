// SPDX-License-Identifier: Apache-2.0
//
// Tensor / tape tests. Forward values are checked against small hand cases
// and a naive triple-loop matmul oracle; every backward rule is checked
// against central finite differences in double precision.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "nqg/tape.hpp"
#include "nqg/tensor.hpp"
#include "test_util.hpp"

using nqg::Activation;
using nqg::Rng;
using nqg::Tape;
using nqg::Tensor;
using nqg::test::max_grad_rel_err;
using nqg::test::rel_err;

namespace {

// Independent matmul oracle: plain triple loop, no shared code with the tape.
template <typename T>
Tensor<T> naive_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out = Tensor<T>::zeros({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      T acc = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("rng determinism") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng c(42), d(43);
  REQUIRE(c.next_u64() != d.next_u64());

  std::vector<int> v1{1, 2, 3, 4, 5, 6, 7}, v2{1, 2, 3, 4, 5, 6, 7};
  Rng e(7), f(7);
  e.shuffle(v1);
  f.shuffle(v2);
  REQUIRE(v1 == v2);
}

TEST_CASE("matmul basics") {
  Tape<double> t;
  auto id2 = t.lease(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto m = t.lease(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto prod = t.matmul(id2, m);
  REQUIRE(t.value(prod).data == std::vector<double>{1, 2, 3, 4});

  auto col = t.lease(Tensor<double>({2, 1}, {5, 6}));
  auto mv = t.matmul(m, col);
  REQUIRE(t.value(mv).data == std::vector<double>{17, 39});

  auto z = t.lease(Tensor<double>::zeros({2, 3}));
  auto any = t.lease(Tensor<double>({3, 4}, std::vector<double>(12, 3.5)));
  auto zp = t.matmul(z, any);
  for (double v : t.value(zp).data) REQUIRE(v == 0.0);

  REQUIRE_THROWS_AS(t.matmul(z, m), nqg::DimensionError);
}

TEMPLATE_TEST_CASE("matmul agrees with naive oracle", "", float, double) {
  using T = TestType;
  const double tol = std::is_same_v<T, double> ? 1e-12 : 1e-5;
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<T> a = Tensor<T>::uniform({10, 10}, rng, T(-1), T(1));
    Tensor<T> b = Tensor<T>::uniform({10, 10}, rng, T(-1), T(1));
    Tape<T> t;
    auto prod = t.matmul(t.lease(a), t.lease(b));
    Tensor<T> expect = naive_matmul(a, b);
    for (std::size_t i = 0; i < expect.data.size(); ++i) {
      REQUIRE(rel_err(t.value(prod).data[i], expect.data[i]) < tol);
    }
  }
}

TEST_CASE("softmax values and masking") {
  Tape<double> t;
  auto u = t.softmax(t.lease(Tensor<double>::vec({0, 0, 0})));
  for (double v : t.value(u).data) REQUIRE(v == Catch::Approx(1.0 / 3).epsilon(1e-9));

  auto forced = t.softmax(t.lease(Tensor<double>::vec({0, std::log(2.0)})));
  REQUIRE(t.value(forced).data[0] == Catch::Approx(1.0 / 3).epsilon(1e-9));
  REQUIRE(t.value(forced).data[1] == Catch::Approx(2.0 / 3).epsilon(1e-9));

  std::vector<bool> keep{true, false};
  auto single = t.softmax(t.lease(Tensor<double>::vec({5, 5})), &keep);
  REQUIRE(t.value(single).data[0] == 1.0);
  REQUIRE(t.value(single).data[1] == 0.0);

  std::vector<bool> none{false, false};
  auto in = t.lease(Tensor<double>::vec({1, 2}));
  REQUIRE_THROWS_AS(t.softmax(in, &none), nqg::DegenerateInputError);
}

TEST_CASE("softmax is a probability vector under extreme logits") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 1 + rng.below(8);
    Tensor<double> logits = Tensor<double>::uniform({n}, rng, -500.0, 500.0);
    std::vector<bool> keep(n, false);
    keep[rng.below(n)] = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.unit() < 0.5) keep[i] = true;
    }
    Tape<double> t;
    auto y = t.softmax(t.lease(logits), &keep);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = t.value(y).data[i];
      REQUIRE(v >= 0.0);
      if (!keep[i]) REQUIRE(v == 0.0);
      total += v;
    }
    REQUIRE(total == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("activation values") {
  Tape<double> t;
  auto x = t.lease(Tensor<double>::vec({0, 1}));
  auto th = t.activation(x, Activation::tanh_fn);
  REQUIRE(t.value(th).data[0] == 0.0);
  REQUIRE(t.value(th).data[1] == Catch::Approx(0.7615941559557649).epsilon(1e-12));
  auto sg = t.activation(x, Activation::sigmoid_fn);
  REQUIRE(t.value(sg).data[0] == 0.5);
}

TEST_CASE("concat and slice") {
  Tape<double> t;
  auto a = t.lease(Tensor<double>::vec({1, 2}));
  auto b = t.lease(Tensor<double>::vec({3}));
  auto c = t.concat({a, b});
  REQUIRE(t.value(c).data == std::vector<double>{1, 2, 3});

  auto empty = t.lease(Tensor<double>::vec({}));
  auto pass = t.concat({empty, b});
  REQUIRE(t.value(pass).data == std::vector<double>{3});

  REQUIRE_THROWS_AS(t.concat(std::span<const Tape<double>::Var>{}),
                    nqg::DegenerateInputError);

  // split(concat(a,b), |a|) round-trips
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t la = rng.below(6), lb = 1 + rng.below(6);
    Tensor<double> ta = Tensor<double>::uniform({la}, rng, -1, 1);
    Tensor<double> tb = Tensor<double>::uniform({lb}, rng, -1, 1);
    Tape<double> t2;
    auto cat = t2.concat({t2.lease(ta), t2.lease(tb)});
    auto left = t2.slice(cat, 0, la);
    auto right = t2.slice(cat, la, lb);
    REQUIRE(t2.value(left).data == ta.data);
    REQUIRE(t2.value(right).data == tb.data);
  }
}

TEST_CASE("backward basics") {
  SECTION("sum gradient is all ones") {
    Tape<double> t;
    auto x = t.lease(Tensor<double>::vec({1, 2, 3}));
    t.backward(t.sum(x));
    REQUIRE(t.grad(x).data == std::vector<double>{1, 1, 1});
  }

  SECTION("unused parameter keeps exactly zero gradient") {
    Tape<double> t;
    auto x = t.lease(Tensor<double>::vec({1, 2}));
    auto unused = t.lease(Tensor<double>::vec({4, 5, 6}));
    t.backward(t.sum(t.tanh_of(x)));
    for (double g : t.grad(unused).data) REQUIRE(g == 0.0);
  }

  SECTION("non-scalar loss is a usage error") {
    Tape<double> t;
    auto x = t.lease(Tensor<double>::vec({1, 2}));
    REQUIRE_THROWS_AS(t.backward(x), nqg::UsageError);
  }

  SECTION("invalid loss variable is a usage error") {
    Tape<double> t;
    REQUIRE_THROWS_AS(t.backward(Tape<double>::Var{}), nqg::UsageError);
  }

  SECTION("grad before backward is a usage error") {
    Tape<double> t;
    auto x = t.lease(Tensor<double>::vec({1}));
    REQUIRE_THROWS_AS(t.grad(x), nqg::UsageError);
  }
}

TEST_CASE("sum(tanh(W x)) gradient matches finite differences") {
  Rng rng(17);
  Tensor<double> w = Tensor<double>::uniform({4, 3}, rng, -1, 1);
  Tensor<double> x = Tensor<double>::uniform({3}, rng, -1, 1);
  const auto eval = [&] {
    Tape<double> t;
    return t.value(t.sum(t.tanh_of(t.matvec(t.lease(w), t.lease(x))))).data[0];
  };
  Tape<double> t;
  auto wv = t.lease(w);
  auto xv = t.lease(x);
  t.backward(t.sum(t.tanh_of(t.matvec(wv, xv))));
  REQUIRE(max_grad_rel_err(w, t.grad(wv), eval) < 1e-6);
  REQUIRE(max_grad_rel_err(x, t.grad(xv), eval) < 1e-6);
}

// Finite-difference sweep across the full operation set: builds a scalar loss
// through each op and checks every input gradient.
TEST_CASE("all op gradients match finite differences") {
  Rng seed_rng(99);

  const auto check = [&](auto&& build, std::vector<Tensor<double>*> inputs) {
    const auto eval = [&] {
      Tape<double> t;
      std::vector<Tape<double>::Var> vars;
      vars.reserve(inputs.size());
      for (Tensor<double>* in : inputs) vars.push_back(t.lease(*in));
      return t.value(build(t, vars)).data[0];
    };
    Tape<double> t;
    std::vector<Tape<double>::Var> vars;
    for (Tensor<double>* in : inputs) vars.push_back(t.lease(*in));
    t.backward(build(t, vars));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      INFO("input " << i);
      REQUIRE(max_grad_rel_err(*inputs[i], t.grad(vars[i]), eval) < 1e-5);
    }
  };

  using Vars = std::vector<Tape<double>::Var>;

  Tensor<double> a = Tensor<double>::uniform({3, 4}, seed_rng, -1, 1);
  Tensor<double> b = Tensor<double>::uniform({4, 2}, seed_rng, -1, 1);
  check([](Tape<double>& t, const Vars& v) {
    return t.sum(t.tanh_of(t.matmul(v[0], v[1])));
  }, {&a, &b});

  Tensor<double> m = Tensor<double>::uniform({3, 5}, seed_rng, -1, 1);
  Tensor<double> x = Tensor<double>::uniform({5}, seed_rng, -1, 1);
  check([](Tape<double>& t, const Vars& v) {
    return t.sum(t.sigmoid_of(t.matvec(v[0], v[1])));
  }, {&m, &x});

  Tensor<double> vv = Tensor<double>::uniform({3}, seed_rng, -1, 1);
  check([](Tape<double>& t, const Vars& v) {
    return t.sum(t.vecmat(v[0], v[1]));
  }, {&vv, &m});

  Tensor<double> d1 = Tensor<double>::uniform({6}, seed_rng, -1, 1);
  Tensor<double> d2 = Tensor<double>::uniform({6}, seed_rng, -1, 1);
  check([](Tape<double>& t, const Vars& v) { return t.dot(v[0], v[1]); }, {&d1, &d2});
  check([](Tape<double>& t, const Vars& v) {
    return t.sum(t.mul(t.add(v[0], v[1]), t.sub(v[0], v[1])));
  }, {&d1, &d2});
  check([](Tape<double>& t, const Vars& v) {
    return t.sum(t.scale(t.exp_of(v[0]), 0.3));
  }, {&d1});

  check([](Tape<double>& t, const Vars& v) {
    return t.sum(t.mul(t.softmax(v[0]), v[1]));
  }, {&d1, &d2});

  std::vector<bool> keep{true, false, true, true, false, true};
  check([keep](Tape<double>& t, const Vars& v) {
    return t.sum(t.mul(t.softmax(v[0], &keep), v[1]));
  }, {&d1, &d2});

  check([](Tape<double>& t, const Vars& v) {
    return t.pick(t.log_softmax(v[0]), 2);
  }, {&d1});

  check([](Tape<double>& t, const Vars& v) {
    auto cat = t.concat({v[0], v[1]});
    return t.sum(t.tanh_of(t.slice(cat, 2, 7)));
  }, {&d1, &d2});

  Tensor<double> r1 = Tensor<double>::uniform({4}, seed_rng, -1, 1);
  Tensor<double> r2 = Tensor<double>::uniform({4}, seed_rng, -1, 1);
  Tensor<double> q = Tensor<double>::uniform({4}, seed_rng, -1, 1);
  check([](Tape<double>& t, const Vars& v) {
    std::vector<Tape<double>::Var> rows{v[0], v[1]};
    auto stacked = t.stack_rows(rows);
    return t.sum(t.matvec(stacked, v[2]));
  }, {&r1, &r2, &q});

  Tensor<double> emb = Tensor<double>::uniform({5, 3}, seed_rng, -1, 1);
  check([](Tape<double>& t, const Vars& v) {
    return t.sum(t.tanh_of(t.row(v[0], 3)));
  }, {&emb});

  // dropout: fresh Rng with a fixed seed per evaluation keeps the mask
  // identical across finite-difference probes.
  check([](Tape<double>& t, const Vars& v) {
    Rng mask_rng(123);
    return t.sum(t.dropout(v[0], 0.4, mask_rng));
  }, {&d1});
}

TEST_CASE("forward operations are deterministic") {
  Rng rng(8);
  Tensor<double> a = Tensor<double>::uniform({4, 4}, rng, -1, 1);
  Tensor<double> b = Tensor<double>::uniform({4}, rng, -1, 1);
  const auto run = [&] {
    Tape<double> t;
    return t.value(t.sum(t.softmax(t.matvec(t.lease(a), t.lease(b))))).data[0];
  };
  const double first = run();
  for (int i = 0; i < 5; ++i) REQUIRE(run() == first);
}

TEST_CASE("tensor invariants") {
  REQUIRE_THROWS_AS(Tensor<double>({2, 2}, {1, 2, 3}), nqg::DimensionError);
  Tensor<double> t = Tensor<double>::zeros({3, 4});
  REQUIRE(t.numel() == 12);
  REQUIRE(all_finite(t));
  t.at(1, 2) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE(!all_finite(t));
}
