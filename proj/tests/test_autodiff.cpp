#include <doctest.h>

#include <cmath>

#include "l2f/autodiff.hpp"
#include "l2f/rng.hpp"

using namespace l2f;

namespace {

Value leaf(double v) { return Value::param(Tensor::scalar(v)); }

double d1(const Value& out, const Value& x) { return grad(out, {x}, false)[0].item(); }

Tensor rand_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("primitive values") {
  CHECK(sigmoid(leaf(0.0)).item() == doctest::Approx(0.5));
  CHECK(relu(leaf(-2.0)).item() == 0.0);
  CHECK(mean(Value::constant(Tensor::from_vector({1, 2, 3, 6}))).item() == doctest::Approx(3.0));
  CHECK(sin(leaf(0.0)).item() == 0.0);
  CHECK(abs(leaf(-3.5)).item() == 3.5);
  CHECK(acos(leaf(1.0)).item() == doctest::Approx(0.0));
}

TEST_CASE("first and second derivatives of x^2") {
  Value x = leaf(3.0);
  Value y = mul(x, x);
  Value g = grad(y, {x}, true)[0];
  CHECK(g.item() == doctest::Approx(6.0));
  CHECK(d1(g, x) == doctest::Approx(2.0));
}

TEST_CASE("sigmoid derivative at zero") {
  Value x = leaf(0.0);
  CHECK(d1(sigmoid(x), x) == doctest::Approx(0.25));
}

TEST_CASE("second derivative of sigmoid matches closed form") {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const double x0 = rng.uniform(-3.0, 3.0);
    Value x = leaf(x0);
    Value g = grad(sigmoid(x), {x}, true)[0];
    const double g2 = d1(g, x);
    const double s = 1.0 / (1.0 + std::exp(-x0));
    const double expected = s * (1.0 - s) * (1.0 - 2.0 * s);
    CHECK(g2 == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("grad(grad(x^3)) equals 6x") {
  Rng rng(7);
  for (int i = 0; i < 25; ++i) {
    const double x0 = rng.uniform(-4.0, 4.0);
    Value x = leaf(x0);
    Value y = mul(mul(x, x), x);
    Value g = grad(y, {x}, true)[0];
    Value h = grad(g, {x}, false)[0];
    const double rel = std::fabs(h.item() - 6.0 * x0) / std::max(std::fabs(6.0 * x0), 1e-8);
    CHECK(rel < 1e-8);
  }
}

TEST_CASE("matmul gradient against a hand-worked case") {
  // f = sum(A * B), dA = ones * B^T, dB = A^T * ones
  Value a = Value::param(Tensor::from_rows({{1, 2}, {3, 4}}));
  Value b = Value::param(Tensor::from_rows({{5, 6}, {7, 8}}));
  auto gs = grad(sum(matmul(a, b)), {a, b}, false);
  CHECK(gs[0].tensor().at(0, 0) == doctest::Approx(11));  // 5+6
  CHECK(gs[0].tensor().at(0, 1) == doctest::Approx(15));  // 7+8
  CHECK(gs[1].tensor().at(0, 0) == doctest::Approx(4));   // 1+3
  CHECK(gs[1].tensor().at(1, 1) == doctest::Approx(6));   // 2+4
}

TEST_CASE("finite difference oracle on simple functions") {
  auto square_fn = [](const std::vector<Value>& v) { return mul(v[0], v[0]); };
  CHECK(finite_difference_check(square_fn, {Tensor::scalar(3.0)}, 1e-5) < 1e-6);

  auto sin_fn = [](const std::vector<Value>& v) { return sin(v[0]); };
  CHECK(finite_difference_check(sin_fn, {Tensor::scalar(1.0)}, 1e-5) < 1e-6);
}

TEST_CASE("finite difference across composite ops") {
  Rng rng(23);
  auto f = [](const std::vector<Value>& v) {
    Value h = add_bias(matmul(v[0], transpose(v[1])), v[2]);
    return add(squared_error(relu(h), v[3]), norm(slice(reshape(v[1], {6}), 1, 4)));
  };
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<Tensor> point = {
        rand_tensor(rng, {4, 2}, -2, 2), rand_tensor(rng, {3, 2}, -2, 2),
        rand_tensor(rng, {3}, -1, 1), rand_tensor(rng, {4, 3}, -2, 2)};
    CHECK(finite_difference_check(f, point, 1e-5) < 1e-5);
  }
}

TEST_CASE("softmax cross entropy value matches a straight-line computation") {
  Rng rng(31);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor logits = rand_tensor(rng, {4, 3}, -3, 3);
    std::vector<int> labels = {2, 0, 1, 1};
    const double got = softmax_cross_entropy(Value::constant(logits), labels).item();
    double expected = 0.0;
    for (Index i = 0; i < 4; ++i) {
      double denom = 0.0;
      for (Index c = 0; c < 3; ++c) denom += std::exp(logits.at(i, c));
      expected += std::log(denom) - logits.at(i, labels[static_cast<size_t>(i)]);
    }
    expected /= 4.0;
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("softmax cross entropy gradient is softmax minus one-hot") {
  Tensor logits = Tensor::from_rows({{2.0, -1.0, 0.5}});
  Value lv = Value::param(logits);
  Value loss = softmax_cross_entropy(lv, {1});
  Tensor g = grad(loss, {lv}, false)[0].tensor();
  double denom = std::exp(2.0) + std::exp(-1.0) + std::exp(0.5);
  CHECK(g.at(0, 0) == doctest::Approx(std::exp(2.0) / denom));
  CHECK(g.at(0, 1) == doctest::Approx(std::exp(-1.0) / denom - 1.0));
  CHECK(g.at(0, 2) == doctest::Approx(std::exp(0.5) / denom));
}

TEST_CASE("gradient of a batch sum equals the sum of per-example gradients") {
  Rng rng(5);
  Value w = Value::param(rand_tensor(rng, {1, 3}, -1, 1));
  Tensor xs = rand_tensor(rng, {8, 3}, -2, 2);

  Value batch_loss = sum(square(matmul(Value::constant(xs), transpose(w))));
  Tensor batch_grad = grad(batch_loss, {w}, false)[0].tensor();

  Tensor acc = Tensor::zeros({1, 3});
  for (Index e = 0; e < 8; ++e) {
    Tensor xe = Tensor::zeros({1, 3});
    for (Index c = 0; c < 3; ++c) xe.at(0, c) = xs.at(e, c);
    Value le = sum(square(matmul(Value::constant(xe), transpose(w))));
    acc.array() += grad(le, {w}, false)[0].tensor().array();
  }
  for (Index i = 0; i < 3; ++i) CHECK(batch_grad[i] == doctest::Approx(acc[i]).epsilon(1e-12));
}

TEST_CASE("create_graph true and false agree on first-order values") {
  Rng rng(13);
  Value a = Value::param(rand_tensor(rng, {3, 3}, -2, 2));
  Value b = Value::param(rand_tensor(rng, {3, 3}, -2, 2));
  auto make_loss = [&] { return sum(mul(sigmoid(matmul(a, b)), a)); };
  auto g1 = grad(make_loss(), {a, b}, true);
  auto g2 = grad(make_loss(), {a, b}, false);
  for (size_t i = 0; i < 2; ++i) {
    for (Index j = 0; j < 9; ++j) CHECK(g1[i].tensor()[j] == g2[i].tensor()[j]);
  }
}

TEST_CASE("unreachable wrt gets a zero gradient") {
  Value x = leaf(2.0);
  Value y = leaf(5.0);
  auto gs = grad(mul(x, x), {x, y}, false);
  CHECK(gs[0].item() == doctest::Approx(4.0));
  CHECK(gs[1].item() == 0.0);
  CHECK(gs[1].shape() == y.shape());
}

TEST_CASE("grad rejects non-scalar outputs") {
  Value v = Value::param(Tensor::zeros({3}));
  CHECK_THROWS_WITH_AS(static_cast<void>(grad(v, {v}, false)),
                       doctest::Contains("scalar"), std::invalid_argument);
}

TEST_CASE("shape errors name the op and both shapes") {
  Value a = Value::constant(Tensor::zeros({2, 3}));
  Value b = Value::constant(Tensor::zeros({3, 3}));
  CHECK_THROWS_WITH_AS(static_cast<void>(add(a, b)), doctest::Contains("add"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(static_cast<void>(add(a, b)), doctest::Contains("[2x3]"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(static_cast<void>(matmul(a, a)), doctest::Contains("matmul"),
                       std::invalid_argument);
}

TEST_CASE("domain violations raise errors rather than propagating non-finites") {
  CHECK_THROWS_AS(static_cast<void>(div(leaf(1.0), leaf(0.0))), std::domain_error);
  CHECK_THROWS_AS(static_cast<void>(log(leaf(-1.0))), std::domain_error);
  CHECK_THROWS_AS(static_cast<void>(acos(leaf(1.5))), std::domain_error);
  CHECK_THROWS_AS(static_cast<void>(sqrt(leaf(-2.0))), std::domain_error);
}

TEST_CASE("softmax cross entropy validates labels and shapes") {
  Value logits = Value::constant(Tensor::zeros({2, 3}));
  CHECK_THROWS_AS(static_cast<void>(softmax_cross_entropy(logits, {0})), std::invalid_argument);
  CHECK_THROWS_AS(static_cast<void>(softmax_cross_entropy(logits, {0, 3})), std::invalid_argument);
}

TEST_CASE("slice and embed are mutually adjoint") {
  Value v = Value::param(Tensor::from_vector({1, 2, 3, 4, 5}));
  Value s = slice(v, 1, 3);
  CHECK(s.tensor()[0] == 2);
  Tensor g = grad(sum(mul(s, s)), {v}, false)[0].tensor();
  CHECK(g[0] == 0.0);
  CHECK(g[1] == doctest::Approx(4.0));
  CHECK(g[4] == 0.0);

  Value e = embed(s, 2, 6);
  CHECK(e.tensor()[2] == 2);
  CHECK(e.tensor()[0] == 0);
}

TEST_CASE("stack_scalars builds a differentiable vector") {
  Value a = leaf(2.0);
  Value b = leaf(-1.0);
  Value v = stack_scalars({a, b});
  CHECK(v.tensor()[0] == 2.0);
  CHECK(v.tensor()[1] == -1.0);
  auto gs = grad(dot(v, Value::constant(Tensor::from_vector({3.0, 5.0}))), {a, b}, false);
  CHECK(gs[0].item() == doctest::Approx(3.0));
  CHECK(gs[1].item() == doctest::Approx(5.0));
}

TEST_CASE("element extracts with the right adjoint") {
  Value v = Value::param(Tensor::from_vector({4, 7, 9}));
  Value e = element(v, 1);
  CHECK(e.item() == 7.0);
  Tensor g = grad(mul(e, e), {v}, false)[0].tensor();
  CHECK(g[1] == doctest::Approx(14.0));
  CHECK(g[0] == 0.0);
}
