#include <cmath>
#include <random>

#include "doctest.h"
#include "numkit.hpp"

using namespace fkb;
using namespace fkb::numkit;

namespace {

ParamVector vec(std::vector<double> v) {
  return flatten({Tensor{"v", {v.size()}, std::move(v)}});
}

}  // namespace

TEST_CASE("flatten concatenates tensors row-major in order") {
  const std::vector<Tensor> tensors = {{"W", {2, 2}, {1, 2, 3, 4}}, {"b", {2}, {5, 6}}};
  const auto p = flatten(tensors);
  REQUIRE(p.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(p[i] == static_cast<double>(i + 1));
  CHECK(p.layout().size() == 2);
  CHECK(p.offset(1) == 4);
  CHECK(p.segment(1)[0] == 5.0);
}

TEST_CASE("unflatten inverts flatten bit-for-bit") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1e3);
  std::vector<Tensor> tensors = {{"a", {3, 4}, {}}, {"b", {4}, {}}, {"c", {1, 2, 3}, {}}};
  for (auto& t : tensors) {
    std::size_t sz = 1;
    for (auto d : t.shape) sz *= d;
    for (std::size_t i = 0; i < sz; ++i) t.values.push_back(n(rng));
  }
  const auto back = unflatten(flatten(tensors));
  REQUIRE(back.size() == tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    CHECK(back[i].name == tensors[i].name);
    CHECK(back[i].shape == tensors[i].shape);
    CHECK(back[i].values == tensors[i].values);
  }
}

TEST_CASE("flatten rejects empty lists and shape mismatches") {
  CHECK_THROWS_AS(flatten({}), Error);
  try {
    flatten({});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Layout);
  }
  CHECK_THROWS_AS(flatten({Tensor{"W", {2, 2}, {1, 2, 3}}}), Error);
  auto layout = std::make_shared<const Layout>(Layout{{"W", {2}}});
  CHECK_THROWS_AS(flatten({Tensor{"W", {3}, {1, 2, 3}}}, layout), Error);
}

TEST_CASE("axpy examples") {
  const auto x = vec({1, 2});
  const auto y = vec({3, 4});
  const auto r = axpy(1.0, x, y);
  CHECK(r[0] == 4.0);
  CHECK(r[1] == 6.0);
  const auto z = axpy(0.0, x, y);
  CHECK(z[0] == 3.0);
  CHECK(z[1] == 4.0);
  const auto c = axpy(-1.0, y, y);
  CHECK(c[0] == 0.0);
  CHECK(c[1] == 0.0);
  // operands untouched
  CHECK(x[0] == 1.0);
  CHECK(y[1] == 4.0);
}

TEST_CASE("axpy rejects mismatched layouts") {
  CHECK_THROWS_AS(axpy(1.0, vec({1, 2}), vec({1, 2, 3})), Error);
  const auto a = flatten({Tensor{"p", {2}, {1, 2}}});
  const auto b = flatten({Tensor{"q", {2}, {1, 2}}});
  CHECK_THROWS_AS(axpy(1.0, a, b), Error);
}

TEST_CASE("axpy round trip stays within one rounding step") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10, 10);
  std::vector<double> xv(64), yv(64);
  for (auto& v : xv) v = u(rng);
  for (auto& v : yv) v = u(rng);
  const auto x = vec(xv), y = vec(yv);
  const double a = 0.37;
  const auto back = axpy(a, x, axpy(-a, x, y));
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(std::abs(back[i] - y[i]) <= 4 * std::numeric_limits<double>::epsilon() * (std::abs(y[i]) + std::abs(a * x[i])));
  }
}

TEST_CASE("softmax cross-entropy on constant logits is ln C") {
  Matrix logits(3, 8, 0.0);
  const std::vector<int> labels = {0, 3, 7};
  const auto lg = softmax_cross_entropy(logits, labels);
  CHECK(lg.loss == doctest::Approx(std::log(8.0)).epsilon(1e-14));
  CHECK(lg.loss == doctest::Approx(2.0794).epsilon(1e-4));
  Matrix shifted(1, 4, 123.0);
  CHECK(softmax_cross_entropy(shifted, std::vector<int>{2}).loss == doctest::Approx(std::log(4.0)));
}

TEST_CASE("softmax cross-entropy saturates without overflow") {
  Matrix logits(1, 5, 0.0);
  logits(0, 2) = 50.0;
  CHECK(softmax_cross_entropy(logits, std::vector<int>{2}).loss < 1e-9);
  Matrix huge(1, 3, 0.0);
  huge(0, 0) = 1e4;
  const auto lg = softmax_cross_entropy(huge, std::vector<int>{1});
  CHECK(std::isfinite(lg.loss));
  CHECK(lg.loss == doctest::Approx(1e4));
}

TEST_CASE("dlogits rows sum to zero and match finite differences") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 2.0);
  const std::size_t rows = 4, cls = 3;
  const std::vector<int> labels = {0, 2, 1, 2};
  std::vector<double> v(rows * cls);
  for (auto& x : v) x = n(rng);
  const auto theta = vec(v);
  auto as_matrix = [&](const ParamVector& p) {
    Matrix m(rows, cls);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = p[i];
    return m;
  };
  const auto lg = softmax_cross_entropy(as_matrix(theta), labels);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cls; ++c) s += lg.dlogits(r, c);
    CHECK(std::abs(s) < 1e-12);
  }
  const auto fd = finite_difference_gradient(
      [&](const ParamVector& p) { return softmax_cross_entropy(as_matrix(p), labels).loss; }, theta);
  CHECK(relative_error(lg.dlogits.data, fd.values()) < 1e-5);
}

TEST_CASE("finite differences of simple functions") {
  const auto sq = [](const ParamVector& p) {
    double s = 0.0;
    for (double v : p.values()) s += v * v;
    return s;
  };
  const auto g = finite_difference_gradient(sq, vec({3.0}));
  CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-6));
  const auto zero = finite_difference_gradient([](const ParamVector&) { return 4.2; }, vec({1, 2, 3}));
  for (double v : zero.values()) CHECK(v == 0.0);
  const std::vector<std::size_t> coords = {1};
  const auto sub = finite_difference_gradient(sq, vec({1, -2, 3}), coords);
  REQUIRE(sub.size() == 1);
  CHECK(sub[0] == doctest::Approx(-4.0));
  const auto rich = extrapolated_difference_gradient(
      [](const ParamVector& p) { return std::exp(3.0 * p[0]); }, vec({0.5}), std::vector<std::size_t>{0});
  CHECK(std::abs(rich[0] - 3.0 * std::exp(1.5)) < 1e-8);
}

TEST_CASE("finite differences reject non-finite evaluations and bad steps") {
  const auto bad = [](const ParamVector& p) { return p[0] > 0.5 ? std::nan("") : 0.0; };
  CHECK_THROWS_AS(finite_difference_gradient(bad, vec({0.5})), Error);
  CHECK_THROWS_AS(finite_difference_gradient([](const ParamVector&) { return 0.0; }, vec({1}), 0.0), Error);
}

TEST_CASE("batch validation") {
  Batch b{Matrix(2, 3), {0, 1}};
  CHECK_NOTHROW(b.validate(2));
  CHECK_THROWS_AS(b.validate(1), Error);
  Batch bad{Matrix(2, 3), {0}};
  CHECK_THROWS_AS(bad.validate(4), Error);
}

TEST_CASE("relative error") {
  const std::vector<double> a = {1, 0}, b = {1, 0}, c = {0, 1}, z = {0, 0};
  CHECK(relative_error(a, b) == 0.0);
  CHECK(relative_error(z, z) == 0.0);
  CHECK(relative_error(a, c) == doctest::Approx(std::sqrt(2.0)));
}
