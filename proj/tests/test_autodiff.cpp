#include <cmath>
#include <numbers>

#include "doctest.h"
#include "vigicaps/autodiff.hpp"
#include "vigicaps/rng.hpp"

using namespace vigicaps;
using namespace vigicaps::ad;

namespace {

Tensor random_tensor(Tensor::Shape shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
  Tensor t(std::move(shape));
  rng.fill_uniform(t.mutable_data(), lo, hi);
  return t;
}

// Keeps leaky_relu inputs away from the kink so finite differences are valid.
Tensor random_tensor_off_kink(Tensor::Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  auto d = t.mutable_data();
  for (auto& v : d) {
    v = rng.uniform(0.05, 1.5);
    if (rng.uniform() < 0.5) v = -v;
  }
  return t;
}

constexpr double kGradTol = 1e-6;
constexpr double kStep = 1e-5;

}  // namespace

TEST_CASE("analytic values of the activation primitives") {
  Tape t;
  Var x = t.input(Tensor({3}, {0.0, -2.0, 2.0}));
  CHECK(sigmoid(x).value()[0] == doctest::Approx(0.5));
  CHECK(tanh(x).value()[0] == doctest::Approx(0.0));
  CHECK(leaky_relu(x, 0.3).value()[1] == doctest::Approx(-0.6));
  CHECK(leaky_relu(x, 0.3).value()[2] == doctest::Approx(2.0));

  Var z = t.input(Tensor({10}));
  Var sm = softmax(z, 0);
  for (std::int64_t i = 0; i < 10; ++i) CHECK(sm.value()[i] == doctest::Approx(0.1));
}

TEST_CASE("softmax rows are positive and sum to one") {
  Rng rng(7);
  Tape t;
  Var x = t.input(random_tensor({4, 6, 5}, rng, -8.0, 8.0));
  Var y = softmax(x, 1);
  auto d = y.value().data();
  for (std::int64_t outer = 0; outer < 4; ++outer)
    for (std::int64_t inner = 0; inner < 5; ++inner) {
      double s = 0.0;
      for (std::int64_t k = 0; k < 6; ++k) {
        double v = d[(outer * 6 + k) * 5 + inner];
        CHECK(v > 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("squash forward values") {
  Tape t;
  SUBCASE("unit vector halves") {
    Var s = t.input(Tensor({4}, {1.0, 0.0, 0.0, 0.0}));
    Var v = squash(s);
    CHECK(v.value()[0] == 0.5);  // exact, n2 == 1.0
    CHECK(v.value()[1] == 0.0);
  }
  SUBCASE("zero maps to zero") {
    Var s = t.input(Tensor({3}));
    Var v = squash(s);
    for (std::int64_t i = 0; i < 3; ++i) CHECK(v.value()[i] == 0.0);
  }
  SUBCASE("norm three gives nine tenths") {
    Var s = t.input(Tensor({2}, {3.0, 0.0}));
    Var v = squash(s);
    CHECK(l2_norm(v).value().scalar_value() == doctest::Approx(0.9).epsilon(1e-12));
  }
  SUBCASE("norm strictly below one and monotone in the input norm") {
    Rng rng(3);
    double prev = -1.0;
    for (int i = 1; i <= 40; ++i) {
      double n = 0.25 * i;
      Var s = t.input(Tensor({3}, {n, 0.0, 0.0}));
      double vn = l2_norm(squash(s)).value().scalar_value();
      CHECK(vn < 1.0);
      CHECK(vn > prev);
      prev = vn;
    }
  }
}

TEST_CASE("sum/mean/scalar plumbing and the double-backward guard") {
  Tape t;
  Var x = t.input(Tensor({2}, {3.0, -1.0}), true);
  Var loss = sum(mul(x, x));
  CHECK(loss.value().scalar_value() == doctest::Approx(10.0));
  t.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(-2.0));
  CHECK_THROWS_AS(t.backward(loss), DoubleBackward);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape t;
  Var x = t.input(Tensor({3}), true);
  CHECK_THROWS_AS(t.backward(x), NonScalarOutput);
}

TEST_CASE("grad_check rejects non-scalar functions") {
  Rng rng(5);
  Tensor x = random_tensor({3}, rng);
  CHECK_THROWS_AS(grad_check([](Tape&, const Var& v) { return v; }, x, kStep), NonScalarOutput);
}

TEST_CASE("grad_check on f(x) = sum(x^2)") {
  Tensor x({2}, {3.0, -1.0});
  double err = grad_check([](Tape&, const Var& v) { return sum(mul(v, v)); }, x, kStep);
  CHECK(err < 1e-8);
}

TEST_CASE("gradient check: every primitive") {
  Rng rng(42);

  SUBCASE("matmul") {
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5, 3}, rng);
    double err = grad_check(
        [&](Tape& t, const Var& v) { return sum(mul(matmul(v, t.input(b)), matmul(v, t.input(b)))); }, a,
        kStep);
    CHECK(err < kGradTol);
    err = grad_check([&](Tape& t, const Var& v) { return mean(matmul(t.input(a), v)); }, b, kStep);
    CHECK(err < kGradTol);
  }

  SUBCASE("add / sub / mul with broadcasting") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor suffix = random_tensor({4}, rng);
    Tensor scalar = random_tensor({1}, rng);
    for (auto* other : {&suffix, &scalar}) {
      double err = grad_check(
          [&](Tape& t, const Var& v) { return sum(mul(add(v, t.input(*other)), sub(v, t.input(*other)))); },
          a, kStep);
      CHECK(err < kGradTol);
      err = grad_check([&](Tape& t, const Var& v) { return sum(mul(add(t.input(a), v), add(t.input(a), v))); },
                       *other, kStep);
      CHECK(err < kGradTol);
    }
    double err = grad_check([&](Tape& t, const Var& v) { return sum(mul(v, t.input(a))); }, a, kStep);
    CHECK(err < kGradTol);
  }

  SUBCASE("concat / reshape / slice / transpose") {
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({2, 2, 4}, rng);
    double err = grad_check(
        [&](Tape& t, const Var& v) {
          std::vector<Var> parts{v, t.input(b)};
          Var c = concat(parts, 1);
          Var r = reshape(c, {2, 20});
          Var s = slice(r, 1, 3, 17);
          Var p = transpose(s, {1, 0});
          return sum(mul(p, p));
        },
        a, kStep);
    CHECK(err < kGradTol);
  }

  SUBCASE("conv2d") {
    Tensor x = random_tensor({2, 3, 5, 5}, rng);
    Tensor k = random_tensor({4, 3, 3, 3}, rng);
    Tensor bias = random_tensor({4}, rng);
    double err = grad_check(
        [&](Tape& t, const Var& v) {
          Var y = conv2d(v, t.input(k), t.input(bias), 1);
          return sum(mul(y, y));
        },
        x, kStep);
    CHECK(err < kGradTol);
    err = grad_check(
        [&](Tape& t, const Var& v) {
          Var y = conv2d(t.input(x), v, t.input(bias), 1);
          return sum(mul(y, y));
        },
        k, kStep);
    CHECK(err < kGradTol);
    err = grad_check(
        [&](Tape& t, const Var& v) { return mean(conv2d(t.input(x), t.input(k), v, 2)); }, bias, kStep);
    CHECK(err < kGradTol);
  }

  SUBCASE("sigmoid / tanh / leaky_relu") {
    Tensor x = random_tensor_off_kink({3, 4}, rng);
    for (auto fn : {+[](const Var& v) { return sigmoid(v); }, +[](const Var& v) { return tanh(v); },
                    +[](const Var& v) { return leaky_relu(v, 0.3); }}) {
      double err =
          grad_check([&](Tape&, const Var& v) { return sum(mul(fn(v), fn(v))); }, x, kStep);
      CHECK(err < kGradTol);
    }
  }

  SUBCASE("softmax") {
    Tensor x = random_tensor({2, 5, 3}, rng);
    Tensor w = random_tensor({2, 5, 3}, rng);
    double err = grad_check(
        [&](Tape& t, const Var& v) { return sum(mul(softmax(v, 1), t.input(w))); }, x, kStep);
    CHECK(err < kGradTol);
  }

  SUBCASE("sum_axis / mean / l2_norm") {
    Tensor x = random_tensor({3, 4}, rng, 0.2, 1.5);
    double err = grad_check([&](Tape&, const Var& v) { return sum(mul(sum_axis(v, 0), sum_axis(v, 0))); },
                            x, kStep);
    CHECK(err < kGradTol);
    err = grad_check([&](Tape&, const Var& v) { return mean(mul(v, v)); }, x, kStep);
    CHECK(err < kGradTol);
    err = grad_check([&](Tape&, const Var& v) { return sum(l2_norm(v)); }, x, kStep);
    CHECK(err < kGradTol);
  }

  SUBCASE("squash") {
    Tensor x = random_tensor({5, 3}, rng, 0.2, 2.0);
    Tensor w = random_tensor({5, 3}, rng);
    double err =
        grad_check([&](Tape& t, const Var& v) { return sum(mul(squash(v), t.input(w))); }, x, kStep);
    CHECK(err < kGradTol);
  }

  SUBCASE("batchnorm train and eval") {
    Tensor x = random_tensor({6, 4}, rng);
    Tensor gamma = random_tensor({4}, rng, 0.5, 1.5);
    Tensor beta = random_tensor({4}, rng);
    Tensor w = random_tensor({6, 4}, rng);
    double err = grad_check(
        [&](Tape& t, const Var& v) {
          return sum(mul(batchnorm(v, t.input(gamma), t.input(beta), nullptr, true), t.input(w)));
        },
        x, kStep);
    CHECK(err < kGradTol);
    err = grad_check(
        [&](Tape& t, const Var& v) {
          return sum(mul(batchnorm(t.input(x), v, t.input(beta), nullptr, true), t.input(w)));
        },
        gamma, kStep);
    CHECK(err < kGradTol);

    BatchNormStats stats{Tensor({4}, {0.1, -0.2, 0.3, 0.0}), Tensor({4}, {1.1, 0.9, 1.4, 0.7})};
    err = grad_check(
        [&](Tape& t, const Var& v) {
          return sum(mul(batchnorm(v, t.input(gamma), t.input(beta), &stats, false), t.input(w)));
        },
        x, kStep);
    CHECK(err < kGradTol);
  }

  SUBCASE("capsule kernels") {
    Tensor u = random_tensor({2, 4, 3}, rng);
    Tensor w = random_tensor({4, 2, 3, 5}, rng);
    Tensor c = random_tensor({2, 4, 2}, rng, 0.1, 0.9);
    double err = grad_check(
        [&](Tape& t, const Var& v) {
          Var uhat = capsule_predict(v, t.input(w));
          return sum(mul(uhat, uhat));
        },
        u, kStep);
    CHECK(err < kGradTol);
    err = grad_check(
        [&](Tape& t, const Var& v) {
          Var uhat = capsule_predict(t.input(u), v);
          Var s = route_weighted_sum(t.input(c), uhat);
          return sum(mul(s, s));
        },
        w, kStep);
    CHECK(err < kGradTol);
    err = grad_check(
        [&](Tape& t, const Var& v) {
          Var uhat = capsule_predict(t.input(u), t.input(w));
          Var s = route_weighted_sum(v, uhat);
          Var vj = squash(s);
          Var agree = route_agreement(uhat, vj);
          return sum(mul(agree, agree));
        },
        c, kStep);
    CHECK(err < kGradTol);
  }
}

TEST_CASE("batchnorm running statistics and eval determinism") {
  Rng rng(11);
  Tensor gamma = Tensor::full({3}, 1.0);
  Tensor beta = Tensor::zeros({3});
  BatchNormStats stats{Tensor::zeros({3}), Tensor::full({3}, 1.0), 0.99};

  Tensor x = random_tensor({8, 3}, rng);
  {
    Tape t;
    batchnorm(t.input(x), t.input(gamma), t.input(beta), &stats, true);
  }
  // momentum 0.99 pulls the running mean 1% toward the batch mean
  double batch_mean0 = 0.0;
  for (std::int64_t r = 0; r < 8; ++r) batch_mean0 += x.data()[r * 3] / 8.0;
  CHECK(stats.mean[0] == doctest::Approx(0.01 * batch_mean0).epsilon(1e-9));

  // eval mode: affine map, bit-identical across calls, no stat mutation
  Tensor before_mean = stats.mean;
  Tape t1, t2;
  Var y1 = batchnorm(t1.input(x), t1.input(gamma), t1.input(beta), &stats, false);
  Var y2 = batchnorm(t2.input(x), t2.input(gamma), t2.input(beta), &stats, false);
  for (std::int64_t i = 0; i < y1.value().numel(); ++i) CHECK(y1.value()[i] == y2.value()[i]);
  CHECK(stats.mean[0] == before_mean[0]);
}

TEST_CASE("shape errors") {
  Tape t;
  Var a = t.input(Tensor({2, 3}));
  Var b = t.input(Tensor({2, 3}));
  CHECK_THROWS_AS(matmul(a, b), ShapeMismatch);
  Var c = t.input(Tensor({4}));
  CHECK_THROWS_AS(add(a, c), ShapeMismatch);
  CHECK_THROWS_AS(slice(a, 0, 1, 5), ShapeMismatch);
  CHECK_THROWS_AS(transpose(a, {0, 0}), ShapeMismatch);
}

TEST_CASE("gradients accumulate across reuse of the same var") {
  Tape t;
  Var x = t.input(Tensor({2}, {1.0, 2.0}), true);
  Var y = add(mul(x, x), scale(x, 3.0));  // x^2 + 3x -> d/dx = 2x + 3
  t.backward(sum(y));
  CHECK(x.grad()[0] == doctest::Approx(5.0));
  CHECK(x.grad()[1] == doctest::Approx(7.0));
}
