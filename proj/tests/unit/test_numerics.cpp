#include <cmath>
#include <random>

#include "catch_amalgamated.hpp"
#include "sslalm/errors.hpp"
#include "sslalm/grad_check.hpp"
#include "sslalm/ops.hpp"
#include "support.hpp"

using namespace sslalm;
using Catch::Approx;
using sslalm::testing::random_tensor;

TEST_CASE("matmul by identity returns the input") {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor y = ops::matmul(a, eye);
  CHECK(y.shape() == Shape{2, 2});
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("softmax of equal logits is uniform") {
  const Tensor y = ops::softmax(Tensor::from({2}, {0, 0}), 0);
  CHECK(y[0] == 0.5);
  CHECK(y[1] == 0.5);
}

TEST_CASE("silu is zero at zero and saturates to identity") {
  const Tensor y = ops::silu(Tensor::from({2}, {0.0, 20.0}));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == Approx(20.0).epsilon(1e-8));
}

TEST_CASE("softmax rows sum to one for arbitrary finite input") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({4, 7}, rng, -300.0, 300.0);
    for (std::size_t axis : {0u, 1u}) {
      const Tensor y = ops::softmax(x, axis);
      const Tensor s = ops::mean(y, axis);
      const double n = static_cast<double>(x.dim(axis));
      for (double v : s.data()) CHECK(std::abs(v * n - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("exp and log stay finite at extreme inputs") {
  const Tensor e = ops::exp(Tensor::from({2}, {1e4, -1e4}));
  const Tensor l = ops::log(Tensor::from({2}, {0.0, -5.0}));
  for (double v : e.data()) CHECK(std::isfinite(v));
  for (double v : l.data()) CHECK(std::isfinite(v));
}

TEST_CASE("backward of sum(w*x) gives the other factor") {
  Graph g;
  Graph::Scope scope(g);
  const Tensor w = Tensor::from({2}, {2, 3}, true);
  const Tensor x = Tensor::from({2}, {1, 1}, true);
  backward(g, ops::sum_all(ops::mul(w, x)));
  CHECK(w.grad_view()[0] == 1.0);
  CHECK(w.grad_view()[1] == 1.0);
  CHECK(x.grad_view()[0] == 2.0);
  CHECK(x.grad_view()[1] == 3.0);
}

TEST_CASE("backward of sum(w^2) is 2w") {
  Graph g;
  Graph::Scope scope(g);
  const Tensor w = Tensor::from({2}, {1, 2}, true);
  backward(g, ops::sum_all(ops::mul(w, w)));
  CHECK(w.grad_view()[0] == 2.0);
  CHECK(w.grad_view()[1] == 4.0);
}

TEST_CASE("cross entropy gradient at uniform logits is softmax minus one-hot") {
  Graph g;
  Graph::Scope scope(g);
  const Tensor z = Tensor::from({1, 4}, {0.3, 0.3, 0.3, 0.3}, true);
  const int target[] = {0};
  const Tensor loss = ops::cross_entropy(z, target);
  CHECK(loss.item() == Approx(std::log(4.0)).epsilon(1e-14));
  backward(g, loss);
  const double expected[] = {-0.75, 0.25, 0.25, 0.25};
  for (int i = 0; i < 4; ++i) CHECK(z.grad_view()[i] == Approx(expected[i]).margin(1e-15));
}

TEST_CASE("a tensor feeding two consumers receives the sum of both branch gradients") {
  std::mt19937_64 rng(11);
  const Tensor x0 = random_tensor({3, 4}, rng);
  auto grad_of = [&](int branches) {
    Tensor x = x0.clone();
    x.set_requires_grad(true);
    Graph g;
    Graph::Scope scope(g);
    Tensor loss;
    if (branches & 1) loss = ops::sum_all(ops::silu(x));
    if (branches & 2) {
      const Tensor b = ops::sum_all(ops::mul(x, x));
      loss = loss.defined() ? ops::add(loss, b) : b;
    }
    backward(g, loss);
    return std::vector<double>(x.grad_view().begin(), x.grad_view().end());
  };
  const auto both = grad_of(3), first = grad_of(1), second = grad_of(2);
  for (std::size_t i = 0; i < both.size(); ++i) {
    CHECK(both[i] == Approx(first[i] + second[i]).epsilon(1e-14));
  }
}

TEST_CASE("every requires_grad leaf holds a grad after backward") {
  Graph g;
  Graph::Scope scope(g);
  const Tensor used = Tensor::from({2}, {1, 2}, true);
  const Tensor unused = Tensor::from({2}, {3, 4}, true);
  backward(g, ops::sum_all(used));
  REQUIRE(unused.has_grad());
  CHECK(unused.grad_view()[0] == 0.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Graph g;
  Graph::Scope scope(g);
  const Tensor w = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(g, ops::silu(w)), ContractError);
}

TEST_CASE("ops outside an active graph record nothing") {
  Graph g;
  const Tensor w = Tensor::from({2}, {1, 2}, true);
  const Tensor y = ops::silu(w);
  CHECK(g.size() == 0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("grad_check reference cases") {
  SECTION("sum of squares") {
    const double err = grad_check(
        [](const Tensor& x) { return ops::sum_all(ops::mul(x, x)); }, Tensor::from({3}, {1, 2, 3}));
    CHECK(err < 1e-6);
  }
  SECTION("sum of silu") {
    const double err = grad_check([](const Tensor& x) { return ops::sum_all(ops::silu(x)); },
                                  Tensor::from({3}, {-1, 0, 1}));
    CHECK(err < 1e-5);
  }
  SECTION("constant function") {
    const double err =
        grad_check([](const Tensor&) { return Tensor::scalar(4.0); }, Tensor::from({2}, {1, 2}));
    CHECK(err == 0.0);
  }
  SECTION("non-scalar output is rejected") {
    CHECK_THROWS_AS(grad_check([](const Tensor& x) { return ops::silu(x); },
                               Tensor::from({2}, {1, 2})),
                    ContractError);
  }
}

TEST_CASE("every differentiable op passes finite differences on 10 random draws") {
  for (const auto& c : sslalm::testing::grad_cases()) {
    std::mt19937_64 rng(std::hash<std::string>{}(c.name));
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) worst = std::max(worst, c.run(rng));
    INFO(c.name << " max relative error " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("shape mismatches raise dimension errors naming the op") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    ops::matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(ops::add(a, Tensor::zeros({4})), DimensionError);
  CHECK_THROWS_AS(ops::concat(std::vector<Tensor>{a, Tensor::zeros({2, 2})}, 0), DimensionError);
}

TEST_CASE("forward_suite dispatches by name and rejects unknown ops") {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor inputs[] = {a, eye};
  const Tensor y = ops::forward_suite("matmul", inputs, {});
  CHECK(y.at(1, 0) == 3.0);
  ops::OpAttrs attrs;
  attrs.axis = 1;
  const Tensor s = ops::forward_suite("softmax", std::span(inputs, 1), attrs);
  CHECK(s.at(0, 0) + s.at(0, 1) == Approx(1.0));
  CHECK_THROWS_AS(ops::forward_suite("fft", inputs, {}), UnsupportedOpError);
}

TEST_CASE("conv2d matches a direct loop") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({5, 4, 2}, rng);
  const Tensor w = random_tensor({3, 3, 3, 2}, rng);
  const Tensor b = random_tensor({3}, rng);
  const Tensor y = ops::conv2d(x, w, b, 2, 1);
  REQUIRE(y.shape() == Shape{3, 2, 3});
  for (std::size_t oh = 0; oh < 3; ++oh) {
    for (std::size_t ow = 0; ow < 2; ++ow) {
      for (std::size_t co = 0; co < 3; ++co) {
        double acc = b[co];
        for (std::size_t kh = 0; kh < 3; ++kh) {
          for (std::size_t kw = 0; kw < 3; ++kw) {
            const long ih = static_cast<long>(oh * 2 + kh) - 1, iw = static_cast<long>(ow * 2 + kw) - 1;
            if (ih < 0 || iw < 0 || ih >= 5 || iw >= 4) continue;
            for (std::size_t ci = 0; ci < 2; ++ci) {
              acc += x[(static_cast<std::size_t>(ih) * 4 + static_cast<std::size_t>(iw)) * 2 + ci] *
                     w[((co * 3 + kh) * 3 + kw) * 2 + ci];
            }
          }
        }
        CHECK(y[(oh * 2 + ow) * 3 + co] == Approx(acc).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("causal depthwise conv only looks back") {
  const Tensor x = Tensor::from({4, 1}, {1, 0, 0, 0});
  const Tensor w = Tensor::from({1, 3}, {0.25, 0.5, 1.0});
  const Tensor y = ops::depthwise_conv1d(x, w, {}, 2);
  // Newest tap is last: impulse response reads the kernel backwards.
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 0.5);
  CHECK(y[2] == 0.25);
  CHECK(y[3] == 0.0);
}
