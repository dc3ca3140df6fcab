#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "niva/rng.hpp"
#include "niva/tensor.hpp"

using namespace niva;

TEST_CASE("matmul identity and direct arithmetic") {
  DenseArray m = DenseArray::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  Tensor out = matmul(Tensor(DenseArray::identity(3)), Tensor(m));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) CHECK(out(i, j) == m.at(i, j));

  Tensor p = matmul(Tensor(DenseArray::matrix(2, 2, {1, 2, 3, 4})),
                    Tensor(DenseArray::matrix(2, 1, {0, 1})));
  CHECK(p(0, 0) == 2.0);
  CHECK(p(1, 0) == 4.0);
}

TEST_CASE("matmul rejects shape mismatch") {
  Tensor a(DenseArray::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Tensor b(DenseArray::matrix(2, 2, {1, 0, 0, 1}));
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul gradient vs central differences") {
  DenseArray a = random_array({4, 5}, 11);
  DenseArray b = random_array({5, 3}, 12);
  double err = grad_check_multi(
      [](Tape&, const std::vector<Tensor>& xs) {
        Tensor w(random_array({4, 3}, 13));
        return dot(matmul(xs[0], xs[1]), w);
      },
      {a, b});
  CHECK(err <= 1e-5);
}

TEST_CASE("layer_norm constant row maps to offset") {
  Tensor gain(DenseArray::full({4}, 1.0));
  Tensor offset(DenseArray::zeros({4}));
  Tensor x(DenseArray::matrix(1, 4, {3.7, 3.7, 3.7, 3.7}));
  Tensor y = layer_norm(x, gain, offset);
  for (int j = 0; j < 4; ++j) CHECK(y(0, j) == 0.0);
}

TEST_CASE("layer_norm unit-variance row is near-identity") {
  Tensor gain(DenseArray::full({2}, 1.0));
  Tensor offset(DenseArray::zeros({2}));
  Tensor y = layer_norm(Tensor(DenseArray::matrix(1, 2, {1.0, -1.0})), gain, offset);
  CHECK(y(0, 0) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(y(0, 1) == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm row statistics before affine") {
  DenseArray x = random_array({6, 8}, 21, 3.0);
  Tensor y = layer_norm(Tensor(x), Tensor(DenseArray::full({8}, 1.0)),
                        Tensor(DenseArray::zeros({8})));
  for (int i = 0; i < 6; ++i) {
    double m = 0.0, v = 0.0;
    for (int j = 0; j < 8; ++j) m += y(i, j);
    m /= 8;
    for (int j = 0; j < 8; ++j) v += (y(i, j) - m) * (y(i, j) - m);
    v /= 8;
    CHECK(std::abs(m) <= 1e-10);
    CHECK(std::abs(v - 1.0) <= 1e-4);
  }
}

TEST_CASE("layer_norm gradient check") {
  DenseArray x = random_array({2, 8}, 31);
  DenseArray gain = random_array({8}, 32);
  DenseArray offset = random_array({8}, 33);
  double err = grad_check_multi(
      [](Tape&, const std::vector<Tensor>& xs) {
        Tensor w(random_array({2, 8}, 34));
        return dot(layer_norm(xs[0], xs[1], xs[2]), w);
      },
      {x, gain, offset});
  CHECK(err <= 1e-5);
}

TEST_CASE("softmax of equal logits is uniform") {
  Tensor y = softmax(Tensor(DenseArray::vec({0, 0, 0})), 0);
  for (int i = 0; i < 3; ++i) CHECK(y(i) == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("softmax shift invariance and normalization") {
  RngStream rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    DenseArray x = random_array({3, 5}, 1000 + trial, 4.0);
    DenseArray shifted = x;
    const double c = rng.normal() * 10.0;
    for (double& v : shifted.data) v += c;
    Tensor a = softmax(Tensor(x), 1);
    Tensor b = softmax(Tensor(shifted), 1);
    for (int i = 0; i < 3; ++i) {
      double rowsum = 0.0;
      for (int j = 0; j < 5; ++j) {
        CHECK(std::abs(a(i, j) - b(i, j)) <= 1e-12);
        rowsum += a(i, j);
      }
      CHECK(std::abs(rowsum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax axis out of range") {
  CHECK_THROWS_AS(softmax(Tensor(DenseArray::vec({1, 2})), 1), std::invalid_argument);
}

TEST_CASE("softplus closed form and positivity") {
  Tensor y = softplus(Tensor(DenseArray::vec({0.0, -40.0, 40.0})));
  CHECK(y(0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(y(1) > 0.0);
  CHECK(y(2) == doctest::Approx(40.0));
}

TEST_CASE("grad_check on analytic cases") {
  // f = sum of squares, gradient 2x.
  double err = grad_check(
      [](Tape&, const Tensor& x) { return dot(x, x); },
      DenseArray::vec({1.0, 2.0}));
  CHECK(err <= 1e-7);

  // Constant function: gradient exactly zero.
  Tape tape;
  Tensor x = tape.leaf(DenseArray::vec({1.0, 2.0, 3.0}));
  Tensor loss = sum(mul(x, Tensor(DenseArray::zeros({3}))));
  tape.backward(loss);
  DenseArray g = tape.grad(x);
  for (double v : g.data) CHECK(v == 0.0);
}

TEST_CASE("leaves off the loss path keep exactly-zero gradients") {
  Tape tape;
  Tensor used = tape.leaf(DenseArray::vec({2.0, 3.0}));
  Tensor unused = tape.leaf(DenseArray::vec({5.0}));
  Tensor loss = sum(used);
  tape.backward(loss);
  CHECK(tape.grad(unused).at(0) == 0.0);
  CHECK_FALSE(tape.has_grad(unused));
  CHECK(tape.grad(used).at(0) == 1.0);
}

TEST_CASE("every primitive passes finite-difference checks on random inputs") {
  // 50 random inputs spread across the registered primitives.
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint64_t key = 9000 + 17 * trial;
    const auto weighted = [key](const Tensor& t) {
      DenseArray w = random_array(t.shape(), key + 3);
      for (double& v : w.data) v = 0.5 + std::abs(v);
      return dot(t, Tensor(w));
    };
    double err = 0.0;
    switch (trial % 10) {
      case 0:
        err = grad_check_multi(
            [&](Tape&, const std::vector<Tensor>& xs) {
              return weighted(matmul(xs[0], xs[1]));
            },
            {random_array({3, 4}, key), random_array({4, 2}, key + 1)});
        break;
      case 1:
        err = grad_check_multi(
            [&](Tape&, const std::vector<Tensor>& xs) {
              return weighted(mul(add(xs[0], xs[1]), sub(xs[0], xs[1])));
            },
            {random_array({2, 5}, key), random_array({2, 5}, key + 1)});
        break;
      case 2:
        err = grad_check_multi(
            [&](Tape&, const std::vector<Tensor>& xs) {
              return weighted(add_row(xs[0], xs[1]));
            },
            {random_array({3, 4}, key), random_array({4}, key + 1)});
        break;
      case 3:
        err = grad_check(
            [&](Tape&, const Tensor& x) { return weighted(softmax(x, 1)); },
            random_array({2, 6}, key, 2.0));
        break;
      case 4:
        err = grad_check(
            [&](Tape&, const Tensor& x) { return weighted(gelu(x)); },
            random_array({7}, key));
        break;
      case 5:
        err = grad_check(
            [&](Tape&, const Tensor& x) { return weighted(softplus(x)); },
            random_array({7}, key, 2.0));
        break;
      case 6:
        err = grad_check(
            [&](Tape&, const Tensor& x) {
              return weighted(concat({slice(x, 1, 0, 2), slice(x, 1, 1, 3)}, 1));
            },
            random_array({2, 4}, key));
        break;
      case 7:
        err = grad_check(
            [&](Tape&, const Tensor& x) {
              return weighted(gather_rows(x, {0, 2, 2, 1}));
            },
            random_array({3, 3}, key));
        break;
      case 8: {
        DenseArray pos = random_array({6}, key);
        for (double& v : pos.data) v = 0.2 + std::abs(v);
        err = grad_check(
            [&](Tape&, const Tensor& x) {
              return add(sum(log(x)), weighted(sqrt(x)));
            },
            pos);
        break;
      }
      case 9:
        err = grad_check(
            [&](Tape&, const Tensor& x) {
              return weighted(transpose(exp(scale(x, 0.4))));
            },
            random_array({3, 2}, key));
        break;
    }
    CHECK(err <= 1e-5);
    ++checked;
  }
  CHECK(checked == 50);
}

TEST_CASE("stack_rows and reshape round trip") {
  Tensor a(DenseArray::vec({1, 2, 3}));
  Tensor b(DenseArray::vec({4, 5, 6}));
  Tensor m = stack_rows({a, b});
  CHECK(m.shape() == std::vector<int>{2, 3});
  CHECK(m(1, 2) == 6.0);
  Tensor back = reshape(m, {6});
  CHECK(back(5) == 6.0);
}
