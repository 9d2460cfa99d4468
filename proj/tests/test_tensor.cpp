#include <cmath>
#include <random>

#include "doctest.h"
#include "hmnet/tensor.hpp"

using namespace hmnet;

namespace {

Tensor random_matrix(Index r, Index c, std::mt19937_64& rng, bool grad = true) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor::Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return Tensor({r, c}, std::move(m), grad);
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul examples") {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor b({2, 1}, {5, 6});
  const Tensor a({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(eye, b).value() == b.value());
  const Tensor ab = matmul(a, b);
  CHECK(ab.shape() == Shape{2, 1});
  CHECK(ab(0, 0) == 17.0);
  CHECK(ab(1, 0) == 39.0);
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeMismatch);
}

TEST_CASE("shape invariants") {
  const Tensor t({2, 3, 4}, 1.5);
  CHECK(t.numel() == 24);
  CHECK(t.rows() == 6);
  CHECK(t.cols() == 4);
  CHECK(Tensor::scalar(2.0).numel() == 1);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeMismatch);
}

TEST_CASE("softmax examples") {
  const Tensor u({4}, {1, 1, 1, 1});
  const Tensor s = softmax(u);
  for (Index i = 0; i < 4; ++i) CHECK(s.flat(i) == doctest::Approx(0.25).epsilon(1e-15));

  const Tensor x({2}, {0.0, std::log(2.0)});
  const Tensor p = softmax(x);
  CHECK(p.flat(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(p.flat(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

  Mask all(1, 2);
  all << true, true;
  CHECK_THROWS_AS(softmax(Tensor({2}, {1, 2}), -1, all), AllMasked);
}

TEST_CASE("masked softmax gives exact zeros") {
  const Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Mask m(2, 3);
  m << false, true, false, true, true, false;
  const Tensor p = softmax(x, -1, m);
  CHECK(p(0, 1) == 0.0);
  CHECK(p(1, 0) == 0.0);
  CHECK(p(1, 1) == 0.0);
  CHECK(p(1, 2) == 1.0);
  CHECK(p(0, 0) + p(0, 2) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("softmax sums to one and is shift invariant") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_matrix(3, 7, rng, false);
    const Tensor p = softmax(x);
    const Tensor shifted = softmax(add(x, Tensor({3, 7}, 12.5)));
    for (Index r = 0; r < 3; ++r) {
      CHECK(std::abs(p.value().row(r).sum() - 1.0) < 1e-9);
      for (Index c = 0; c < 7; ++c) CHECK(std::abs(p(r, c) - shifted(r, c)) < 1e-9);
    }
  }
}

TEST_CASE("softmax along a leading axis") {
  const Tensor x({2, 2}, {0.0, 1.0, std::log(3.0), 1.0});
  const Tensor p = softmax(x, 0);
  CHECK(p(0, 0) == doctest::Approx(0.25));
  CHECK(p(1, 0) == doctest::Approx(0.75));
  CHECK(p(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("layer_norm examples") {
  const Tensor gain({2}, 1.0);
  const Tensor bias({2}, 0.0);
  const Tensor c = layer_norm(Tensor({3}, {2, 2, 2}), Tensor({3}, 1.0), Tensor({3}, 0.0));
  for (Index i = 0; i < 3; ++i) CHECK(c.flat(i) == 0.0);

  const double eps = 1e-5;
  const Tensor y = layer_norm(Tensor({2}, {1, -1}), gain, bias, eps);
  CHECK(y.flat(0) == doctest::Approx(1.0 / std::sqrt(1.0 + eps)).epsilon(1e-14));
  CHECK(y.flat(1) == doctest::Approx(-1.0 / std::sqrt(1.0 + eps)).epsilon(1e-14));

  CHECK_THROWS_AS(layer_norm(Tensor({2, 3}), gain, bias), ShapeMismatch);
}

TEST_CASE("layer_norm standardizes rows") {
  std::mt19937_64 rng(5);
  const Tensor x = scale(random_matrix(6, 16, rng, false), 4.0);
  const Tensor y = layer_norm(x, Tensor({16}, 1.0), Tensor({16}, 0.0));
  for (Index r = 0; r < 6; ++r) {
    const double mu = y.value().row(r).mean();
    const double var = (y.value().row(r).array() - mu).square().mean();
    CHECK(std::abs(mu) < 1e-7);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::scalar(3.0, true);
  backward(mul(x, x));
  CHECK(x.grad()(0, 0) == 6.0);

  std::mt19937_64 rng(1);
  Tensor v = random_matrix(1, 5, rng);
  backward(sum(softmax(v)));
  CHECK(v.grad().cwiseAbs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(backward(Tensor({2}, 1.0, true)), NotScalar);
}

TEST_CASE("two-class cross entropy agrees with central differences") {
  Tensor logits({3, 2}, {0.3, -1.2, 2.0, 0.5, -0.7, 0.1}, true);
  const std::vector<Index> targets{0, 1, 1};
  auto f = [&](const Tensor& z) { return cross_entropy(z, targets); };
  CHECK(grad_check(f, logits, 1e-5) < 1e-6);
}

TEST_CASE("cross entropy value") {
  const Tensor logits({1, 2}, {0.0, 0.0});
  const std::vector<Index> t{1};
  CHECK(cross_entropy(logits, t).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("backward twice doubles leaf gradients") {
  std::mt19937_64 rng(2);
  Tensor a = random_matrix(3, 4, rng);
  Tensor b = random_matrix(4, 2, rng);
  const Tensor loss = sum(mul(matmul(a, b), matmul(a, b)));
  backward(loss);
  const Tensor::Matrix once = a.grad();
  backward(loss);
  CHECK(a.grad() == once * 2.0);
  a.zero_grad();
  CHECK_FALSE(a.has_grad());
}

TEST_CASE("grad_check examples") {
  Tensor x = Tensor::scalar(3.0, true);
  CHECK(grad_check([](const Tensor& t) { return mul(t, t); }, x, 1e-5) < 1e-8);

  Tensor z = Tensor::scalar(0.0, true);
  double err = 0.0;
  CHECK_NOTHROW(err = grad_check([](const Tensor& t) { return abs(t); }, z, 1e-5));
  CHECK(err > 0.5);
}

TEST_CASE("layer_norm matmul softmax cross entropy chain") {
  std::mt19937_64 rng(4);
  Tensor x = random_matrix(4, 8, rng);
  const Tensor w = random_matrix(8, 3, rng, false);
  Tensor gain({8}, 1.0, true);
  Tensor bias({8}, 0.0, true);
  const std::vector<Index> t{0, 2, 1, 2};
  auto f = [&](const Tensor&) { return cross_entropy(matmul(layer_norm(x, gain, bias), w), t); };
  CHECK(grad_check(f, x, 1e-5) < 1e-4);
  CHECK(grad_check(f, gain, 1e-5) < 1e-4);
  CHECK(grad_check(f, bias, 1e-5) < 1e-4);
}

TEST_CASE("structural ops route gradients") {
  std::mt19937_64 rng(6);
  Tensor a = random_matrix(3, 4, rng);
  Tensor b = random_matrix(3, 2, rng);
  Tensor table = random_matrix(5, 4, rng);
  const std::vector<Index> ids{4, 0, 4, 2};
  CHECK(grad_check([&](const Tensor&) { return sum(mul(concat_cols(std::vector<Tensor>{a, b}),
                                                       concat_cols(std::vector<Tensor>{a, b}))); },
                   a, 1e-5) < 1e-7);
  CHECK(grad_check([&](const Tensor&) { return sum(mul(slice_cols(a, 1, 2), slice_cols(a, 1, 2))); }, a,
                   1e-5) < 1e-7);
  CHECK(grad_check([&](const Tensor&) { return sum(mul(gather_rows(table, ids), gather_rows(table, ids))); },
                   table, 1e-5) < 1e-7);
  CHECK(grad_check([&](const Tensor&) { return sum(matmul(transpose(a), a)); }, a, 1e-5) < 1e-7);
  CHECK(grad_check([&](const Tensor&) {
          return sum(mul(concat_rows(std::vector<Tensor>{a, slice_rows(a, 0, 1)}),
                         concat_rows(std::vector<Tensor>{a, slice_rows(a, 0, 1)})));
        }, a, 1e-5) < 1e-7);
  CHECK(grad_check([&](const Tensor&) { return sum(mul(b, b)); }, b, 1e-5) < 1e-7);
}

TEST_CASE("gather_rows scatter-adds repeated ids") {
  Tensor table({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  const std::vector<Index> ids{2, 2, 0};
  const Tensor g = gather_rows(table, ids);
  CHECK(g(0, 0) == 5.0);
  backward(sum(g));
  CHECK(table.grad()(2, 0) == 2.0);
  CHECK(table.grad()(0, 1) == 1.0);
  CHECK(table.grad()(1, 0) == 0.0);
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(9);
  const Tensor x({100, 10}, 1.0);
  const Tensor eval = dropout(x, 0.5, rng, false);
  CHECK(eval.value() == x.value());
  const Tensor y = dropout(x, 0.5, rng, true);
  Index zeros = 0;
  for (Index i = 0; i < y.numel(); ++i) {
    CHECK((y.flat(i) == 0.0 || y.flat(i) == 2.0));
    zeros += y.flat(i) == 0.0;
  }
  CHECK(zeros > 400);
  CHECK(zeros < 600);
}

TEST_CASE("no-grad guard records nothing") {
  Tensor a({2, 2}, 1.0, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(matmul(a, a).requires_grad());
  }
  CHECK(matmul(a, a).requires_grad());
}

}  // TEST_SUITE
