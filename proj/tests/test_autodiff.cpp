#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "edgereg/errors.hpp"
#include "edgereg/rng.hpp"
#include "edgereg/tape.hpp"

using namespace edgereg;

namespace {

Tensor random_tensor(Rng &rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto &x : t.data) x = rng.uniform(lo, hi);
  t.requires_grad = true;
  return t;
}

}  // namespace

TEST_CASE("sigmoid at zero") {
  Tape t;
  Var x = t.leaf(Tensor::scalar(0.0));
  Var y = t.sigmoid(x);
  CHECK(t.value(y).data[0] == doctest::Approx(0.5).epsilon(1e-15));

  Tensor p = Tensor::scalar(0.0);
  p.requires_grad = true;
  double err = check_gradients(
      [&](Tape &tp) { return tp.sum(tp.sigmoid(tp.param(&p))); }, {&p}, 1e-5);
  CHECK(err < 1e-8);
  CHECK(p.grad[0] == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("softmax of a constant vector is uniform and sums to one") {
  Tape t;
  Var x = t.leaf(Tensor({4}, {3.7, 3.7, 3.7, 3.7}));
  Var y = t.softmax(x);
  for (double v : t.value(y).data) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tp;
    Tensor m = random_tensor(rng, {6, 9}, -30.0, 30.0);
    Var s = tp.softmax(tp.leaf(m));
    const Tensor &sv = tp.value(s);
    for (int r = 0; r < 6; ++r) {
      double sum = 0.0;
      for (int c = 0; c < 9; ++c) sum += sv.at(r, c);
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("matmul of ones and its gradient") {
  Tensor a = Tensor::full({2, 3}, 1.0);
  a.requires_grad = true;
  Tensor b = Tensor::full({3, 2}, 1.0);

  Tape t;
  Var c = t.matmul(t.param(&a), t.leaf(b));
  for (double v : t.value(c).data) CHECK(v == doctest::Approx(3.0));
  t.backpropagate(t.sum(c));
  for (double g : a.grad) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("mean log-softmax matches central differences") {
  Rng rng(7);
  Tensor x = random_tensor(rng, {8}, -2.0, 2.0);
  double err = check_gradients(
      [&](Tape &t) { return t.mean(t.log_softmax(t.param(&x))); }, {&x}, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("linear + sigmoid + cross entropy end to end") {
  Rng rng(21);
  Tensor w = random_tensor(rng, {5, 3});
  Tensor b = random_tensor(rng, {3});
  Tensor x = random_tensor(rng, {4, 5});
  x.requires_grad = false;
  Tensor target = Tensor::zeros({4, 3});
  for (auto &v : target.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;

  auto build = [&](Tape &t) {
    Var logits = t.add(t.matmul(t.leaf(x), t.param(&w)), t.param(&b));
    Var p = t.clamp(t.sigmoid(logits), 1e-7, 1.0 - 1e-7);
    Var pos = t.mul(t.leaf(target), t.log(p));
    Var neg = t.mul(t.leaf([&] {
                      Tensor one_minus_t = target;
                      for (auto &v : one_minus_t.data) v = 1.0 - v;
                      return one_minus_t;
                    }()),
                    t.log(t.one_minus(p)));
    return t.affine(t.mean(t.add(pos, neg)), -1.0, 0.0);
  };
  double err = check_gradients(build, {&w, &b}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("graph with no parameters reports zero error") {
  auto build = [](Tape &t) { return t.sum(t.leaf(Tensor({3}, {1.0, 2.0, 3.0}))); };
  CHECK(check_gradients(build, {}, 1e-5) == 0.0);
}

TEST_CASE("per-primitive gradient checks over random instances") {
  Rng rng(1234);
  int trials = 0;
  for (int i = 0; i < 100; ++i) {
    const int kind = static_cast<int>(rng.uniform_int(14));
    const std::int64_t r = 1 + static_cast<std::int64_t>(rng.uniform_int(4));
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.uniform_int(4));
    Tensor a = random_tensor(rng, {r, c});
    Tensor b = random_tensor(rng, {r, c});
    double err = 0.0;
    switch (kind) {
      case 0:
        err = check_gradients([&](Tape &t) { return t.sum(t.add(t.param(&a), t.param(&b))); },
                              {&a, &b}, 1e-5);
        break;
      case 1:
        err = check_gradients([&](Tape &t) { return t.sum(t.mul(t.param(&a), t.param(&b))); },
                              {&a, &b}, 1e-5);
        break;
      case 2: {
        Tensor bb = random_tensor(rng, {c, r});
        err = check_gradients(
            [&](Tape &t) { return t.sum(t.matmul(t.param(&a), t.param(&bb))); }, {&a, &bb}, 1e-5);
        break;
      }
      case 3:
        err = check_gradients([&](Tape &t) { return t.sum(t.transpose(t.param(&a))); }, {&a}, 1e-5);
        break;
      case 4: {
        // Keep inputs away from the relu kink where central differences break.
        for (auto &x : a.data) if (std::abs(x) < 0.05) x += 0.1;
        err = check_gradients([&](Tape &t) { return t.sum(t.relu(t.param(&a))); }, {&a}, 1e-5);
        break;
      }
      case 5:
        err = check_gradients([&](Tape &t) { return t.sum(t.sigmoid(t.param(&a))); }, {&a}, 1e-5);
        break;
      case 6: {
        Tensor pos = random_tensor(rng, {r, c}, 0.2, 3.0);
        err = check_gradients([&](Tape &t) { return t.sum(t.log(t.param(&pos))); }, {&pos}, 1e-5);
        break;
      }
      case 7:
        err = check_gradients([&](Tape &t) { return t.sum(t.exp(t.param(&a))); }, {&a}, 1e-5);
        break;
      case 8: {
        // Stay strictly inside the clamp band so the derivative is smooth.
        Tensor in = random_tensor(rng, {r, c}, -0.4, 0.4);
        err = check_gradients(
            [&](Tape &t) { return t.sum(t.clamp(t.param(&in), -0.5, 0.5)); }, {&in}, 1e-5);
        break;
      }
      case 9:
        err = check_gradients(
            [&](Tape &t) { return t.sum(t.affine(t.param(&a), 2.5, -0.75)); }, {&a}, 1e-5);
        break;
      case 10:
        err = check_gradients([&](Tape &t) { return t.sum(t.softmax(t.param(&a))); }, {&a}, 1e-5);
        err = std::max(err, check_gradients(
                                [&](Tape &t) { return t.mean(t.log_softmax(t.param(&a))); },
                                {&a}, 1e-5));
        break;
      case 11: {
        std::vector<std::int64_t> idx;
        for (int k = 0; k < 5; ++k) idx.push_back(static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(r))));
        err = check_gradients(
            [&](Tape &t) { return t.sum(t.gather_rows(t.param(&a), idx)); }, {&a}, 1e-5);
        break;
      }
      case 12: {
        Tensor b0 = random_tensor(rng, {r, c});
        err = check_gradients(
            [&](Tape &t) { return t.sum(t.concat(t.param(&a), t.param(&b0), 0)); }, {&a, &b0}, 1e-5);
        err = std::max(err, check_gradients(
                                [&](Tape &t) { return t.sum(t.concat(t.param(&a), t.param(&b0), 1)); },
                                {&a, &b0}, 1e-5));
        break;
      }
      case 13: {
        err = check_gradients(
            [&](Tape &t) { return t.mean(t.reshape(t.param(&a), {c, r})); }, {&a}, 1e-5);
        break;
      }
      default: break;
    }
    CHECK(err < 1e-6);
    ++trials;
  }
  CHECK(trials == 100);
}

TEST_CASE("segment max forward and gradient routing") {
  Tensor a({5, 2}, {1.0, 9.0,
                    4.0, 2.0,
                    4.0, 7.0,
                    0.0, 0.0,
                    3.0, 5.0});
  a.requires_grad = true;

  Tape t;
  Var y = t.segment_max(t.param(&a), {0, 3, 5});
  const Tensor &v = t.value(y);
  CHECK(v.shape == Shape{2, 2});
  CHECK(v.at(0, 0) == 4.0);
  CHECK(v.at(0, 1) == 9.0);
  CHECK(v.at(1, 0) == 3.0);
  CHECK(v.at(1, 1) == 5.0);

  t.backpropagate(t.sum(y));
  // Ties route to the first maximal row: rows 1 and 2 tie at 4.0 in column 0.
  std::vector<double> expect = {0, 1, 1, 0, 0, 0, 0, 0, 1, 1};
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(a.grad[i] == expect[i]);
}

TEST_CASE("broadcast add and mul against row and column vectors") {
  Rng rng(5150);
  Tensor m = random_tensor(rng, {4, 3});
  Tensor row = random_tensor(rng, {1, 3});
  Tensor col = random_tensor(rng, {4, 1});
  double err = check_gradients(
      [&](Tape &t) {
        Var s = t.add(t.param(&m), t.param(&row));
        return t.sum(t.mul(s, t.param(&col)));
      },
      {&m, &row, &col}, 1e-5);
  CHECK(err < 1e-6);

  Tape t;
  Var y = t.add(t.leaf(m), t.leaf(row));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(t.value(y).at(i, j) == doctest::Approx(m.at(i, j) + row.at(0, j)));
}

TEST_CASE("repeated runs are bit-identical") {
  auto run = [] {
    Rng rng(42);
    Tensor w = random_tensor(rng, {6, 4});
    Tensor x = random_tensor(rng, {3, 6});
    Tape t;
    Var out = t.mean(t.softmax(t.matmul(t.leaf(x), t.param(&w))));
    t.backpropagate(out);
    std::vector<double> record = t.value(out).data;
    record.insert(record.end(), w.grad.begin(), w.grad.end());
    return record;
  };
  auto first = run();
  auto second = run();
  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("errors: shape mismatch, non-scalar backprop, non-finite values") {
  Tape t;
  Var a = t.leaf(Tensor::full({2, 3}, 1.0));
  Var b = t.leaf(Tensor::full({4, 5}, 1.0));
  CHECK_THROWS_AS(t.matmul(a, b), ValidationError);
  CHECK_THROWS_AS(t.add(a, b), ValidationError);
  CHECK_THROWS_AS(t.backpropagate(a), ContractError);
  CHECK_THROWS_AS(t.log(t.leaf(Tensor::scalar(-1.0))), NumericError);
  CHECK_THROWS_AS(t.value(Var{}), ValidationError);
  CHECK_THROWS_AS(t.gather_rows(a, {5}), ValidationError);
  CHECK_THROWS_AS(t.segment_max(a, {0, 1, 1, 2}), ValidationError);

  Tensor p = Tensor::scalar(1.0);
  p.requires_grad = true;
  CHECK_THROWS_AS(check_gradients([&](Tape &tp) { return tp.sum(tp.param(&p)); }, {&p}, 0.5),
                  ContractError);
}

TEST_CASE("gradient accumulates across multiple uses of one parameter") {
  Tensor p = Tensor::scalar(3.0);
  p.requires_grad = true;
  Tape t;
  Var v = t.param(&p);
  Var y = t.mul(v, v);  // y = p^2, dy/dp = 2p = 6
  t.backpropagate(t.sum(y));
  CHECK(p.grad[0] == doctest::Approx(6.0).epsilon(1e-12));
}
