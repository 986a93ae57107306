#include <doctest.h>

#include <cmath>
#include <vector>

#include "ctrack/rng.hpp"
#include "ctrack/tensor.hpp"

using namespace ctrack;

namespace {

Tensor random_tensor(Rng& rng, Shape s, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(size_t(shape_numel(s)));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(s), std::move(v));
}

}  // namespace

TEST_CASE("matmul identity and hand product") {
  Tensor I = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(I, a);
  for (int i = 0; i < 4; ++i) CHECK(r[i] == a[i]);

  Tensor v = Tensor::from({2, 1}, {1, 1});
  Tensor p = matmul(a, v);
  CHECK(p[0] == 3.0);
  CHECK(p[1] == 7.0);

  Tensor b = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_WITH_AS(matmul(b, b), doctest::Contains("[2,3]"), std::invalid_argument);
}

TEST_CASE("matmul associativity on random conforming triples") {
  Rng rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor a = random_tensor(rng, {4, 3});
    Tensor b = random_tensor(rng, {3, 5});
    Tensor c = random_tensor(rng, {5, 2});
    Tensor lhs = matmul(matmul(a, b), c);
    Tensor rhs = matmul(a, matmul(b, c));
    for (int64_t i = 0; i < lhs.numel(); ++i)
      CHECK(std::fabs(lhs[i] - rhs[i]) <= 1e-9 * std::fmax(1.0, std::fabs(lhs[i])));
  }
}

TEST_CASE("elementwise fixed points") {
  Tensor z = Tensor::scalar(0.0);
  CHECK(softplus(z).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(exp(z).item() == 1.0);
  CHECK(silu(z).item() == 0.0);
  CHECK(sigmoid(z).item() == 0.5);

  Tensor t = Tensor::from({3}, {1.0, -2.0, 0.5});
  CHECK_THROWS_WITH_AS(reciprocal(Tensor::from({2}, {1.0, 0.0})), doctest::Contains("index 1"),
                       std::invalid_argument);
  Tensor r = reciprocal(t);
  CHECK(r[1] == doctest::Approx(-0.5));
}

TEST_CASE("softmax rows: symmetry, shift invariance, closed form") {
  Tensor eq = Tensor::from({1, 4}, {0.7, 0.7, 0.7, 0.7});
  Tensor p = softmax_rows(eq);
  for (int j = 0; j < 4; ++j) CHECK(p[j] == doctest::Approx(0.25).epsilon(1e-14));

  Rng rng(2);
  Tensor x = random_tensor(rng, {3, 5});
  Tensor shifted = Tensor::zeros({3, 5});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) shifted.raw()[size_t(i) * 5 + j] = x.at(i, j) + 13.25;
  Tensor p1 = softmax_rows(x);
  Tensor p2 = softmax_rows(shifted);
  for (int64_t i = 0; i < p1.numel(); ++i) CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-12));

  Tensor two = softmax_rows(Tensor::from({1, 2}, {0.0, std::log(3.0)}));
  CHECK(two[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(0.75).epsilon(1e-12));

  // rows sum to one for arbitrary finite input
  Tensor wild = random_tensor(rng, {8, 17}, -300.0, 300.0);
  Tensor pw = softmax_rows(wild);
  for (int i = 0; i < 8; ++i) {
    double s = 0.0;
    for (int j = 0; j < 17; ++j) s += pw.at(i, j);
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("layer_norm conventions") {
  Tensor gain = Tensor::ones({4});
  Tensor bias = Tensor::zeros({4});
  Tensor constant = Tensor::full({1, 4}, 3.7);
  Tensor out = layer_norm(constant, gain, bias);
  for (int j = 0; j < 4; ++j) CHECK(out[j] == 0.0);

  Tensor pm = layer_norm(Tensor::from({1, 2}, {1.0, -1.0}), Tensor::ones({2}), Tensor::zeros({2}));
  CHECK(pm[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(pm[1] == doctest::Approx(-1.0).epsilon(1e-4));

  Tensor b2 = Tensor::from({4}, {1, 2, 3, 4});
  Tensor out2 = layer_norm(Tensor::from({1, 4}, {0.3, -2.0, 5.0, 1.1}), Tensor::zeros({4}), b2);
  for (int j = 0; j < 4; ++j) CHECK(out2[j] == doctest::Approx(b2[j]).epsilon(1e-14));
}

TEST_CASE("backward basics") {
  Tensor a = Tensor::from({3}, {1.0, 2.0, 3.0});
  Tensor b = Tensor::from({3}, {4.0, 5.0, 6.0});
  a.set_requires_grad(true);

  {
    GradTape tape;
    Tensor loss = sum(mul(a, b));
    tape.backward(loss);
    Tensor ga = tape.grad(a);
    for (int i = 0; i < 3; ++i) CHECK(ga[i] == b[i]);
  }

  {
    Tensor x = Tensor::from({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    GradTape tape;
    Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    Tensor gx = tape.grad(x);
    CHECK(gx[0] == doctest::Approx(2.0));
    CHECK(gx[1] == doctest::Approx(4.0));
  }

  // disconnected tensor -> zero gradient
  {
    Tensor x = Tensor::from({2}, {1.0, 2.0});
    Tensor other = Tensor::from({2}, {5.0, 5.0});
    x.set_requires_grad(true);
    other.set_requires_grad(true);
    GradTape tape;
    Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    Tensor go = tape.grad(other);
    CHECK(go[0] == 0.0);
    CHECK(go[1] == 0.0);
  }

  // non-scalar loss rejected
  {
    Tensor x = Tensor::from({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    GradTape tape;
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  }
}

TEST_CASE("grad_check is exact on quadratics and rejects bad use") {
  auto f = [](const Tensor& x) { return sum(mul(x, x)); };
  Rng rng(5);
  Tensor x = random_tensor(rng, {6});
  CHECK(grad_check(f, x, 1e-5) < 1e-8);

  auto bad = [](const Tensor& x) { return mul(x, x); };
  CHECK_THROWS_AS(grad_check(bad, x, 1e-5), std::invalid_argument);
  CHECK_THROWS_AS(grad_check(f, x, 1e-1), std::invalid_argument);
}

TEST_CASE("grad_check every registered op at random points") {
  Rng rng(77);
  struct Case {
    const char* name;
    std::function<Tensor(const Tensor&)> f;
    double lo, hi;
  };
  Tensor w = random_tensor(rng, {4, 3});
  Tensor vrow = random_tensor(rng, {4});
  Tensor gain = random_tensor(rng, {4}, 0.5, 1.5);
  Tensor bias = random_tensor(rng, {4});
  Tensor other = random_tensor(rng, {3, 4});

  std::vector<Case> cases = {
      {"matmul", [&](const Tensor& x) { return sum(matmul(x, w)); }, -2, 2},
      {"transpose", [&](const Tensor& x) { return sum(mul(transpose(x), w)); }, -2, 2},
      {"add", [&](const Tensor& x) { return sum(add(x, x)); }, -2, 2},
      {"sub", [&](const Tensor& x) { return sum(sub(scale(x, 2.0), x)); }, -2, 2},
      {"mul", [&](const Tensor& x) { return sum(mul(x, x)); }, -2, 2},
      {"scale", [&](const Tensor& x) { return sum(scale(x, -1.3)); }, -2, 2},
      {"add_rowvec", [&](const Tensor& x) { return sum(add_rowvec(x, vrow)); }, -2, 2},
      {"exp", [&](const Tensor& x) { return sum(exp(x)); }, -2, 2},
      {"log", [&](const Tensor& x) { return sum(log(x)); }, 0.2, 3},
      {"softplus", [&](const Tensor& x) { return sum(softplus(x)); }, -3, 3},
      {"sigmoid", [&](const Tensor& x) { return sum(sigmoid(x)); }, -3, 3},
      {"silu", [&](const Tensor& x) { return sum(silu(x)); }, -3, 3},
      {"reciprocal", [&](const Tensor& x) { return sum(reciprocal(x)); }, 0.3, 2},
      {"pow_const", [&](const Tensor& x) { return sum(pow_const(x, 2.5)); }, 0.2, 2},
      {"abs", [&](const Tensor& x) { return sum(abs(x)); }, 0.3, 2},
      {"relu", [&](const Tensor& x) { return sum(mul(relu(x), x)); }, 0.2, 2},
      {"maximum", [&](const Tensor& x) { return sum(maximum(x, other)); }, 2.5, 4},
      {"minimum", [&](const Tensor& x) { return sum(minimum(x, other)); }, -4, -2.5},
      {"mean", [&](const Tensor& x) { return mean(mul(x, x)); }, -2, 2},
      {"softmax", [&](const Tensor& x) { return sum(mul(softmax_rows(x), other)); }, -2, 2},
      {"layer_norm",
       [&](const Tensor& x) { return sum(mul(layer_norm(x, gain, bias), other)); }, -2, 2},
      {"concat_slice",
       [&](const Tensor& x) {
         Tensor c = concat_rows({x, x});
         return sum(mul(slice_rows(c, 1, 4), Tensor::ones({3, 4})));
       },
       -2, 2},
      {"cols",
       [&](const Tensor& x) {
         Tensor c = concat_cols({slice_cols(x, 1, 3), slice_cols(x, 0, 2)});
         return sum(mul(c, c));
       },
       -2, 2},
      {"gather",
       [&](const Tensor& x) { return sum(mul(gather_rows(x, {2, 0, 2}), Tensor::ones({3, 4}))); },
       -2, 2},
      {"reshape", [&](const Tensor& x) { return sum(mul(reshape(x, {4, 3}), w)); }, -2, 2},
  };

  for (auto& c : cases) {
    double worst = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
      Tensor x = random_tensor(rng, {3, 4}, c.lo, c.hi);
      worst = std::fmax(worst, grad_check(c.f, x, 1e-5));
    }
    INFO("op: " << c.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor::from({2, 0}, {}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::from({3}, {1.0}), std::invalid_argument);

  Rng rng(9);
  Tensor x = random_tensor(rng, {4, 4});
  CHECK(x.all_finite());
  Tensor y = exp(scale(x, 2.0));
  CHECK(y.all_finite());
}
