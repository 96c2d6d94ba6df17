#include <doctest.h>

#include <random>

#include "pipealloc/regression_tree.hpp"

using namespace pipealloc;
using F = RegressionTree::Features;

TEST_CASE("a constant target gives a single leaf") {
  std::vector<F> x;
  std::vector<double> y;
  for (int i = 0; i < 50; ++i) {
    x.push_back({double(i % 7), double(i)});
    y.push_back(3.5);
  }
  const auto t = RegressionTree::fit(x, y, {});
  CHECK(t.leaf_count() == 1);
  CHECK(t.predict({100, -3}) == 3.5);
}

TEST_CASE("a step function is split at the midpoint") {
  std::vector<F> x;
  std::vector<double> y;
  for (int i = 0; i < 20; ++i) {
    x.push_back({0, double(i)});
    y.push_back(i < 10 ? 1.0 : 5.0);
  }
  const auto t = RegressionTree::fit(x, y, {4, 1});
  CHECK(t.nodes().front().feature == 1);
  CHECK(t.nodes().front().threshold == doctest::Approx(9.5));
  CHECK(t.predict({0, 9.4}) == 1.0);
  CHECK(t.predict({0, 9.6}) == 5.0);
}

TEST_CASE("depth and leaf size limits hold") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<F> x;
  std::vector<double> y;
  for (int i = 0; i < 400; ++i) {
    x.push_back({u(rng), u(rng)});
    y.push_back(u(rng));
  }
  const auto t = RegressionTree::fit(x, y, {5, 7});
  CHECK(t.depth() <= 5);
  for (const auto& n : t.nodes()) {
    if (n.is_leaf()) CHECK(n.count >= 7);
  }
}

TEST_CASE("json round trip preserves predictions") {
  std::vector<F> x;
  std::vector<double> y;
  for (int b = 1; b <= 8; ++b) {
    for (int s = 10; s <= 100; s += 10) {
      x.push_back({double(b), double(s)});
      y.push_back(b * 100.0 / s);
    }
  }
  const auto t = RegressionTree::fit(x, y, {});
  const auto back = RegressionTree::from_json(t.to_json());
  for (const auto& f : x) CHECK(back.predict(f) == t.predict(f));
  CHECK(back.to_json() == t.to_json());
}

TEST_CASE("fit rejects mismatched inputs") {
  std::vector<F> x{{1, 1}, {2, 2}};
  std::vector<double> y{1};
  CHECK_THROWS(RegressionTree::fit(x, y, {}));
  CHECK_THROWS(RegressionTree::fit({}, {}, {}));
}
