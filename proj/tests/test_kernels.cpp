#include <doctest.h>

#include <array>
#include <string>
#include <cmath>
#include <vector>

#include "ctrack/kernels.hpp"
#include "ctrack/rng.hpp"

using namespace ctrack;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double scale = std::fmax(1.0, std::fmax(std::fabs(a[i]), std::fabs(b[i])));
    worst = std::fmax(worst, std::fabs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("scalar exp/softplus/silu fixed points") {
  const auto& o = kern::scalar();
  double in[3] = {0.0, 1.0, -1.0};
  double out[3];
  o.vexp(in, out, 3);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
  CHECK(kern::softplus_scalar(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  o.vsilu(in, out, 3);
  CHECK(out[0] == 0.0);
}

TEST_CASE("zoh phi series joins the closed form smoothly") {
  // Either side of the cutoff the two formulas agree to high accuracy.
  for (double z : {-2e-6, -9.9e-7, 1e-7, -1e-9}) {
    const double exact = std::expm1(z) / z;
    CHECK(kern::zoh_phi(z) == doctest::Approx(exact).epsilon(1e-12));
  }
  for (double z : {-0.5, -1e-3, -3.0}) {
    const double numeric = (kern::zoh_phi(z + 1e-7) - kern::zoh_phi(z - 1e-7)) / 2e-7;
    CHECK(kern::zoh_phi_deriv(z) == doctest::Approx(numeric).epsilon(1e-5));
  }
}

TEST_CASE("avx2 lane matches scalar lane") {
  const kern::Ops* av = kern::avx2();
  if (!av) {
    MESSAGE("AVX2 unavailable on this host; lane equivalence skipped");
    return;
  }
  const auto& sc = kern::scalar();
  Rng rng(20240811);

  for (size_t n : {1ul, 3ul, 4ul, 7ul, 16ul, 33ul, 257ul}) {
    auto a = random_vec(rng, n, -3.0, 3.0);
    auto b = random_vec(rng, n, -3.0, 3.0);
    std::vector<double> r1(n), r2(n);

    sc.add(a.data(), b.data(), r1.data(), n);
    av->add(a.data(), b.data(), r2.data(), n);
    CHECK(r1 == r2);  // pure lane-parallel ops are bit-identical

    sc.mul(a.data(), b.data(), r1.data(), n);
    av->mul(a.data(), b.data(), r2.data(), n);
    CHECK(r1 == r2);

    sc.scale(a.data(), 1.7, r1.data(), n);
    av->scale(a.data(), 1.7, r2.data(), n);
    CHECK(r1 == r2);

    // reductions reorder; transcendentals use a different polynomial
    CHECK(std::fabs(sc.dot(a.data(), b.data(), n) - av->dot(a.data(), b.data(), n)) <=
          1e-13 * double(n));
    CHECK(sc.max(a.data(), n) == av->max(a.data(), n));

    sc.vexp(a.data(), r1.data(), n);
    av->vexp(a.data(), r2.data(), n);
    CHECK(max_rel_err(r1, r2) < 1e-14);

    sc.vsigmoid(a.data(), r1.data(), n);
    av->vsigmoid(a.data(), r2.data(), n);
    CHECK(max_rel_err(r1, r2) < 1e-14);

    sc.vsilu(a.data(), r1.data(), n);
    av->vsilu(a.data(), r2.data(), n);
    CHECK(max_rel_err(r1, r2) < 1e-14);
  }
}

TEST_CASE("avx2 exp over a wide range and saturation edges") {
  const kern::Ops* av = kern::avx2();
  if (!av) return;
  Rng rng(7);
  std::vector<double> xs = random_vec(rng, 4096, -700.0, 700.0);
  xs.push_back(0.0);
  xs.push_back(709.0);    // above the lane's saturation point
  xs.push_back(-745.0);   // deep underflow
  std::vector<double> r(xs.size());
  av->vexp(xs.data(), r.data(), xs.size());
  for (size_t i = 0; i + 3 < xs.size(); ++i) {
    const double ref = std::exp(xs[i]);
    CHECK(std::fabs(r[i] - ref) <= 1e-14 * std::fmax(ref, 1e-300));
  }
  CHECK(r[xs.size() - 3] == 1.0);
  CHECK(std::isinf(r[xs.size() - 2]));
  CHECK(r[xs.size() - 1] == 0.0);
}

TEST_CASE("avx2 matmul matches scalar within fma reassociation") {
  const kern::Ops* av = kern::avx2();
  if (!av) return;
  Rng rng(99);
  const std::vector<std::array<int, 3>> cases = {{1, 1, 1}, {3, 5, 7}, {21, 64, 64}, {16, 33, 9}};
  for (auto [m, k, n] : cases) {
    auto a = random_vec(rng, size_t(m * k), -1.0, 1.0);
    auto b = random_vec(rng, size_t(k * n), -1.0, 1.0);
    std::vector<double> c1(size_t(m * n)), c2(size_t(m * n));
    kern::scalar().matmul(a.data(), b.data(), c1.data(), m, k, n);
    av->matmul(a.data(), b.data(), c2.data(), m, k, n);
    CHECK(max_rel_err(c1, c2) < 1e-13 * k);
  }
}

TEST_CASE("avx2 scan_step and zoh_step match scalar") {
  const kern::Ops* av = kern::avx2();
  if (!av) return;
  Rng rng(5);
  const std::vector<std::array<int, 2>> dims = {{1, 1}, {2, 3}, {4, 16}, {5, 7}};
  for (auto [D, N] : dims) {
    const size_t dn = size_t(D) * N;
    auto A = random_vec(rng, dn, -4.0, -1e-8);
    auto delta = random_vec(rng, size_t(D), 1e-7, 2.0);
    auto b = random_vec(rng, size_t(N), -2.0, 2.0);
    std::vector<double> ab1(dn), bb1(dn), ab2(dn), bb2(dn);
    kern::scalar().zoh_step(A.data(), delta.data(), b.data(), ab1.data(), bb1.data(), D, N);
    av->zoh_step(A.data(), delta.data(), b.data(), ab2.data(), bb2.data(), D, N);
    CHECK(max_rel_err(ab1, ab2) < 1e-14);
    CHECK(max_rel_err(bb1, bb2) < 1e-13);

    auto x = random_vec(rng, size_t(D), -2.0, 2.0);
    auto c = random_vec(rng, size_t(N), -2.0, 2.0);
    auto h1 = random_vec(rng, dn, -1.0, 1.0);
    auto h2 = h1;
    std::vector<double> y1(size_t(D), 0.0), y2(size_t(D), 0.0);
    kern::scalar().scan_step(ab1.data(), bb1.data(), x.data(), c.data(), h1.data(), y1.data(), D, N);
    av->scan_step(ab1.data(), bb1.data(), x.data(), c.data(), h2.data(), y2.data(), D, N);
    CHECK(max_rel_err(h1, h2) < 1e-14);
    CHECK(max_rel_err(y1, y2) < 1e-13);
  }
}

TEST_CASE("matmul_nt / matmul_tn agree with explicit transposition") {
  Rng rng(3);
  const int m = 6, k = 5, n = 4;
  auto a = random_vec(rng, size_t(m * k), -1.0, 1.0);
  auto bt = random_vec(rng, size_t(n * k), -1.0, 1.0);  // B^T stored [n,k]
  std::vector<double> c(size_t(m * n)), cref(size_t(m * n), 0.0);
  kern::matmul_nt(kern::scalar(), a.data(), bt.data(), c.data(), m, k, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < k; ++l) cref[size_t(i) * n + j] += a[size_t(i) * k + l] * bt[size_t(j) * k + l];
  CHECK(max_rel_err(c, cref) < 1e-13);

  auto at = random_vec(rng, size_t(k * m), -1.0, 1.0);  // A stored [k,m]
  auto b = random_vec(rng, size_t(k * n), -1.0, 1.0);
  std::fill(cref.begin(), cref.end(), 0.0);
  kern::matmul_tn(kern::scalar(), at.data(), b.data(), c.data(), m, k, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < k; ++l) cref[size_t(i) * n + j] += at[size_t(l) * m + i] * b[size_t(l) * n + j];
  CHECK(max_rel_err(c, cref) < 1e-13);
}

TEST_CASE("active lane reports a valid name") {
  std::string name = kern::active_name();
  CHECK((name == "scalar" || name == "avx2"));
}
