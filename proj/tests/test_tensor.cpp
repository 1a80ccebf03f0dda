// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "pcfuse/gradcheck.hpp"
#include "pcfuse/rng.hpp"
#include "pcfuse/tensor.hpp"

using namespace pcfuse;

namespace {

template <typename Real>
bool close(Real a, Real b, double tol = 1e-12) {
  return std::abs(static_cast<double>(a) - static_cast<double>(b)) <= tol;
}

}  // namespace

TEST_CASE("tensor shape/data invariants") {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.shape() == Shape{2, 3});
  CHECK_THROWS_AS(Tensor<double>({2, 3}, {1, 2}), ShapeError);
  CHECK_FALSE(t.tracked());
}

TEST_CASE("matmul known values") {
  // identity case
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  auto r = matmul(eye, a);
  CHECK(r.data() == std::vector<double>{1, 2, 3, 4});

  // 1x1
  auto s = matmul(Tensor<double>({1, 1}, {2}), Tensor<double>({1, 1}, {3}));
  CHECK(s.scalar() == 6);

  // hand-expanded 2x2
  auto p = matmul(a, Tensor<double>({2, 2}, {5, 6, 7, 8}));
  CHECK(p.data() == std::vector<double>{19, 22, 43, 50});

  CHECK_THROWS_AS(matmul(a, Tensor<double>({3, 2}, {0, 0, 0, 0, 0, 0})), ShapeError);
}

TEST_CASE("matmul shape error names both shapes") {
  Tensor<double> a({2, 3}, std::vector<double>(6, 1));
  Tensor<double> b({2, 2}, std::vector<double>(4, 1));
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[2, 2]") != std::string::npos);
  }
}

TEST_CASE("softmax_rows known values") {
  auto sym = softmax_rows(Tensor<double>({3}, {0, 0, 0}));
  for (double v : sym.data()) CHECK(close(v, 1.0 / 3.0, 1e-15));

  auto one = softmax_rows(Tensor<double>({1}, {5}));
  CHECK(one.scalar() == 1.0);

  auto two = softmax_rows(Tensor<double>({2}, {std::log(2.0), 0.0}));
  CHECK(close(two.data()[0], 2.0 / 3.0, 1e-15));
  CHECK(close(two.data()[1], 1.0 / 3.0, 1e-15));
}

TEST_CASE("softmax stability for large magnitudes") {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> row(7);
    for (auto& v : row) v = rng.uniform(-1e3, 1e3);
    auto y = softmax_rows(Tensor<double>({7}, row));
    double sum = 0;
    for (double v : y.data()) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("layer_norm known values") {
  Tensor<double> gamma({2}, {1, 1});
  Tensor<double> beta({2}, {0, 0});

  // constant row: eps absorbs the zero variance
  auto c = layer_norm(Tensor<double>({1, 2}, {3, 3}), gamma, beta, 1e-5);
  CHECK(close(c.data()[0], 0.0, 1e-12));
  CHECK(close(c.data()[1], 0.0, 1e-12));

  // [1,-1]: already zero mean, unit variance
  auto u = layer_norm(Tensor<double>({1, 2}, {1, -1}), gamma, beta, 1e-12);
  CHECK(close(u.data()[0], 1.0, 1e-6));
  CHECK(close(u.data()[1], -1.0, 1e-6));

  // gamma = 0 -> row of beta
  auto b = layer_norm(Tensor<double>({1, 2}, {7, -2}), Tensor<double>({2}, {0, 0}),
                      Tensor<double>({2}, {4, 4}), 1e-5);
  CHECK(b.data() == std::vector<double>{4, 4});

  CHECK_THROWS_AS(layer_norm(Tensor<double>({1, 2}, {1, 2}), gamma, beta, 0.0), ArgumentError);
}

TEST_CASE("relu, concat, reduce_max basics") {
  auto r = relu(Tensor<double>({3}, {-1, 0, 2}));
  CHECK(r.data() == std::vector<double>{0, 0, 2});

  auto c = concat<double>({Tensor<double>({1}, {1}), Tensor<double>({1}, {2})}, 0);
  CHECK(c.data() == std::vector<double>{1, 2});

  // first-argmax tie rule
  Tape<double> tape;
  auto x = tape.leaf({3}, {3, 7, 7});
  auto m = reduce_max(x, 0);
  CHECK(m.scalar() == 7);
  tape.backward(m);
  CHECK(tape.grad(x.node()) == std::vector<double>{0, 1, 0});
}

TEST_CASE("reduce_max axis out of range") {
  Tensor<double> x({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(reduce_max(x, 2), ShapeError);
  CHECK_THROWS_AS(reduce_sum(x, 5), ShapeError);
}

TEST_CASE("backward on quadratic") {
  Tape<double> tape;
  auto x = tape.leaf({4}, {1, -2, 3, 0.5});
  auto loss = sum_all(mul(x, x));
  tape.backward(loss);
  const auto& g = tape.grad(x.node());
  for (std::size_t i = 0; i < 4; ++i) CHECK(close(g[i], 2.0 * x.data()[i], 1e-14));
}

TEST_CASE("backward requires scalar loss on tape") {
  Tape<double> tape;
  auto x = tape.leaf({2}, {1, 2});
  auto y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
  Tensor<double> constant({1}, {1});
  CHECK_THROWS_AS(tape.backward(constant), ContractError);
}

TEST_CASE("detached inputs get no gradient slot") {
  Tape<double> tape;
  auto x = tape.leaf({2}, {1, 2}, true);
  Tensor<double> detached({2}, {5, 5});  // requires_grad = false
  CHECK_FALSE(detached.tracked());
  auto loss = sum_all(mul(x, detached));
  tape.backward(loss);
  CHECK(tape.grad(x.node()) == std::vector<double>{5, 5});
}

TEST_CASE("gradients of unused leaves are zero") {
  Tape<double> tape;
  auto x = tape.leaf({2}, {1, 2});
  auto unused = tape.leaf({3}, {1, 1, 1});
  auto loss = sum_all(x);
  tape.backward(loss);
  CHECK(tape.grad(unused.node()) == std::vector<double>{0, 0, 0});
}

TEST_CASE("backward is deterministic") {
  Rng rng(99);
  Tape<double> tape;
  auto a = tape.leaf({4, 4}, gradcheck_rand(rng, 16));
  auto b = tape.leaf({4, 4}, gradcheck_rand(rng, 16));
  auto loss = sum_all(relu(matmul(a, b)));
  tape.backward(loss);
  auto g1 = tape.grad(a.node());
  tape.backward(loss);
  auto g2 = tape.grad(a.node());
  CHECK(g1 == g2);  // bitwise
}

TEST_CASE("concat-split round trip is identity") {
  Rng rng(5);
  auto av = gradcheck_rand(rng, 12);
  auto bv = gradcheck_rand(rng, 8);
  Tensor<double> a({3, 4}, av);
  Tensor<double> b({2, 4}, bv);
  auto joined = concat<double>({a, b}, 0);
  auto sa = slice(joined, 0, 0, 3);
  auto sb = slice(joined, 0, 3, 2);
  CHECK(sa.data() == av);
  CHECK(sb.data() == bv);

  auto j2 = concat<double>({a, b}, 0);
  CHECK(j2.data() == joined.data());
}

TEST_CASE("add suffix broadcast and error") {
  auto y = add(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}), Tensor<double>({3}, {10, 20, 30}));
  CHECK(y.data() == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK_THROWS_AS(add(Tensor<double>({2, 3}, std::vector<double>(6, 0)),
                      Tensor<double>({2}, {1, 2})),
                  ShapeError);
}

TEST_CASE("gather_rows validates indices") {
  Tensor<double> x({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(gather_rows(x, {0, 3}, Shape{2}), ArgumentError);
  auto g = gather_rows(x, {2, 0}, Shape{2});
  CHECK(g.data() == std::vector<double>{5, 6, 1, 2});
}

TEST_CASE("operations on two tapes are rejected") {
  Tape<double> t1, t2;
  auto a = t1.leaf({2}, {1, 2});
  auto b = t2.leaf({2}, {3, 4});
  CHECK_THROWS_AS(add(a, b), ContractError);
}

TEST_CASE("finite-difference gradcheck suite passes") {
  const auto cases = run_gradcheck_suite(/*seed=*/42);
  CHECK(cases.size() >= 20);
  for (const auto& c : cases) {
    INFO(c.op, " max_rel_err=", c.max_rel_err);
    CHECK(c.pass);
  }
}

TEST_CASE("corrupted backward rule is caught by the harness") {
  Rng rng(3);
  auto result = check_gradients(
      "corrupted_scale",
      [](const std::vector<Tensor<double>>& in) { return sum_all(corrupted_scale(in[0], 3.0)); },
      {{{2, 2}, gradcheck_rand(rng, 4)}});
  CHECK_FALSE(result.pass);
}

TEST_CASE("gradcheck suite is deterministic per seed") {
  const auto a = run_gradcheck_suite(7);
  const auto b = run_gradcheck_suite(7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].op == b[i].op);
    CHECK(a[i].max_rel_err == b[i].max_rel_err);  // bitwise
  }
}
