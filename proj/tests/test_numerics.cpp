#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "pyra/ops.hpp"
#include "pyra/rng.hpp"
#include "pyra/tensor.hpp"
#include "support/gradcheck.hpp"

using pyra::Rng;
using pyra::Shape;
using pyra::Tensor;

namespace {

Tensor random_param(Rng& rng, const Shape& shape, double std_dev = 1.0) {
  Tensor t = pyra::gaussian(rng, shape, std_dev);
  t.set_requires_grad(true);
  return t;
}

// Dense scalar readout so every output coordinate influences the loss.
Tensor weighted_readout(const Tensor& out, const Tensor& weights) {
  return pyra::sum(pyra::hadamard(out, weights));
}

double sample_mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_var(const std::vector<double>& v) {
  double m = sample_mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("tensor construction and accessors") {
  Tensor t = Tensor::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 6.0);
  CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1, 2, 3}), pyra::dimension_error);
  CHECK_THROWS_AS(t.at(2, 0), pyra::index_error);
  CHECK_THROWS_AS(t.item(), pyra::contract_error);
  CHECK(Tensor::scalar(7.0).item() == 7.0);
  Tensor z = Tensor::zeros({4});
  CHECK(z.data() == std::vector<double>(4, 0.0));
}

TEST_CASE("bitwise equality distinguishes signed zero") {
  Tensor a = Tensor::from_vector({2}, {0.0, 1.0});
  Tensor b = Tensor::from_vector({2}, {-0.0, 1.0});
  CHECK(pyra::allclose(a, b));
  CHECK_FALSE(pyra::bitwise_equal(a, b));
  CHECK(pyra::bitwise_equal(a, a.detach()));
}

TEST_CASE("matmul matches hand values") {
  Tensor a = Tensor::from_vector({1, 2}, {1, 2});
  Tensor b = Tensor::from_vector({2, 1}, {3, 4});
  Tensor c = pyra::matmul(a, b);
  REQUIRE(c.shape() == Shape{1, 1});
  CHECK(c.item() == 11.0);

  Tensor eye = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_vector({2, 2}, {5, 6, 7, 8});
  CHECK(pyra::bitwise_equal(pyra::matmul(eye, m), m));

  CHECK_THROWS_AS(pyra::matmul(a, a), pyra::dimension_error);
  CHECK_THROWS_AS(pyra::matmul(a, Tensor::from_vector({3}, {1, 2, 3})), pyra::dimension_error);
}

TEST_CASE("linear equals explicit matmul with transpose") {
  Rng rng(11);
  Tensor x = pyra::gaussian(rng, {5, 3}, 1.0);
  Tensor w = pyra::gaussian(rng, {4, 3}, 1.0);
  Tensor b = pyra::gaussian(rng, {4}, 1.0);
  Tensor via_linear = pyra::linear(x, w, b);
  Tensor bt = pyra::broadcast_rows(pyra::reshape(b, {1, 4}), 5);
  Tensor via_matmul = pyra::add(pyra::matmul(x, pyra::transpose(w)), bt);
  CHECK(pyra::allclose(via_linear, via_matmul, 1e-12, 1e-12));
  CHECK_THROWS_AS(pyra::linear(x, Tensor::from_vector({4, 2}, {1, 2, 3, 4, 5, 6, 7, 8})),
                  pyra::dimension_error);
}

TEST_CASE("layernorm hand values") {
  SECTION("constant vector maps to zeros") {
    Tensor x = Tensor::from_vector({1, 4}, {5, 5, 5, 5});
    Tensor y = pyra::layernorm(x, 1e-6);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SECTION("two-point vector") {
    Tensor x = Tensor::from_vector({1, 2}, {1, -1});
    Tensor y = pyra::layernorm(x, 1e-6);
    CHECK(std::abs(y.at(0, 0) - 1.0) < 1e-6);
    CHECK(std::abs(y.at(0, 1) + 1.0) < 1e-6);
  }
  SECTION("random vector is standardized") {
    Rng rng(3);
    Tensor x = pyra::gaussian(rng, {1, 8}, 2.0);
    Tensor y = pyra::layernorm(x, 1e-6);
    CHECK(std::abs(sample_mean(y.data())) < 1e-12);
    CHECK(std::abs(sample_var(y.data()) - 1.0) < 1e-6);
  }
  SECTION("affine with unit gain and zero shift equals plain") {
    Rng rng(4);
    Tensor x = pyra::gaussian(rng, {3, 6}, 1.5);
    Tensor g = Tensor::full({6}, 1.0);
    Tensor b = Tensor::zeros({6});
    CHECK(pyra::allclose(pyra::layernorm_affine(x, g, b, 1e-6), pyra::layernorm(x, 1e-6), 1e-15, 1e-15));
    CHECK_THROWS_AS(pyra::layernorm_affine(x, Tensor::zeros({5}), b, 1e-6), pyra::dimension_error);
  }
}

TEST_CASE("softmax hand values and stability") {
  SECTION("uniform logits") {
    Tensor x = Tensor::zeros({1, 4});
    Tensor y = pyra::softmax(x, 1);
    for (double v : y.data()) CHECK(v == 0.25);
  }
  SECTION("huge logit gap is stable") {
    Tensor x = Tensor::from_vector({1, 2}, {1000.0, 0.0});
    Tensor y = pyra::softmax(x, 1);
    CHECK(std::abs(y.at(0, 0) - 1.0) < 1e-12);
    CHECK(std::abs(y.at(0, 1)) < 1e-12);
  }
  SECTION("rows sum to one") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
      Tensor x = pyra::gaussian(rng, {3, 5}, 10.0);
      Tensor y = pyra::softmax(x, 1);
      for (int64_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < 5; ++c) s += y.at(r, c);
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
    }
  }
  SECTION("axis 0 equals transposed axis 1") {
    Rng rng(18);
    Tensor x = pyra::gaussian(rng, {4, 3}, 2.0);
    Tensor a = pyra::softmax(x, 0);
    Tensor b = pyra::transpose(pyra::softmax(pyra::transpose(x), 1));
    CHECK(pyra::allclose(a, b, 1e-15, 1e-15));
  }
  CHECK_THROWS_AS(pyra::softmax(Tensor::zeros({2, 2}), 2), pyra::dimension_error);
}

TEST_CASE("sigmoid and gelu point values") {
  Tensor x = Tensor::from_vector({5}, {0.0, 40.0, -40.0, 1.0, -1.0});
  Tensor s = pyra::sigmoid(x);
  CHECK(s.data()[0] == 0.5);  // exact in IEEE arithmetic
  CHECK(s.data()[1] > 1.0 - 1e-12);
  CHECK(s.data()[2] < 1e-12);

  Tensor g = pyra::gelu(x);
  CHECK(g.data()[0] == 0.0);
  CHECK(std::abs(g.data()[1] - 40.0) < 1e-12);
  CHECK(std::abs(g.data()[2]) < 1e-12);
  CHECK(std::abs(g.data()[3] - 0.8413447460685429) < 1e-12);  // Phi(1)
}

TEST_CASE("gather, scatter, concat, slice, broadcast") {
  Tensor x = Tensor::from_vector({3, 2}, {1, 2, 3, 4, 5, 6});

  SECTION("gather_rows") {
    Tensor g = pyra::gather_rows(x, {2, 0, 2});
    CHECK(g.data() == std::vector<double>{5, 6, 1, 2, 5, 6});
    CHECK_THROWS_AS(pyra::gather_rows(x, {3}), pyra::index_error);
  }
  SECTION("scatter_mean_rows permutation case") {
    Tensor out = pyra::scatter_mean_rows(x, {2, 0, 1}, {1, 1, 1}, 3);
    CHECK(out.data() == std::vector<double>{3, 4, 5, 6, 1, 2});
  }
  SECTION("scatter_mean_rows pools rows") {
    Tensor v = Tensor::from_vector({2, 2}, {2, 0, 4, 0});
    Tensor out = pyra::scatter_mean_rows(v, {0, 0}, {1, 1}, 1);
    CHECK(out.data() == std::vector<double>{3, 0});
  }
  SECTION("scatter_mean_rows weighted pooling") {
    Tensor v = Tensor::from_vector({2, 1}, {0.0, 2.0});
    Tensor out = pyra::scatter_mean_rows(v, {0, 0}, {3, 1}, 1);
    CHECK(out.item() == 0.5);  // (3*0 + 1*2) / 4
  }
  SECTION("scatter_mean_rows errors") {
    CHECK_THROWS_AS(pyra::scatter_mean_rows(x, {0, 1}, {1, 1, 1}, 2), pyra::dimension_error);
    CHECK_THROWS_AS(pyra::scatter_mean_rows(x, {0, 0, 0}, {1, 1, 1}, 2), pyra::contract_error);
    CHECK_THROWS_AS(pyra::scatter_mean_rows(x, {0, 1, 2}, {1, 0, 1}, 3), pyra::contract_error);
    CHECK_THROWS_AS(pyra::scatter_mean_rows(x, {0, 1, 3}, {1, 1, 1}, 3), pyra::index_error);
  }
  SECTION("concat and slice round-trip") {
    Tensor y = Tensor::from_vector({3, 1}, {9, 8, 7});
    Tensor cc = pyra::concat_cols(std::vector<Tensor>{x, y});
    REQUIRE(cc.shape() == Shape{3, 3});
    CHECK(pyra::bitwise_equal(pyra::slice_cols(cc, 0, 2), x));
    CHECK(pyra::bitwise_equal(pyra::slice_cols(cc, 2, 1), y));
    Tensor cr = pyra::concat_rows(x, x);
    CHECK(cr.shape() == Shape{6, 2});
    CHECK_THROWS_AS(pyra::concat_rows(x, y), pyra::dimension_error);
    CHECK_THROWS_AS(pyra::slice_cols(x, 1, 3), pyra::index_error);
  }
  SECTION("broadcasts") {
    Tensor col = Tensor::from_vector({2, 1}, {1, 2});
    Tensor bc = pyra::broadcast_cols(col, 3);
    CHECK(bc.data() == std::vector<double>{1, 1, 1, 2, 2, 2});
    Tensor row = Tensor::from_vector({1, 3}, {1, 2, 3});
    Tensor br = pyra::broadcast_rows(row, 2);
    CHECK(br.data() == std::vector<double>{1, 2, 3, 1, 2, 3});
    CHECK_THROWS_AS(pyra::broadcast_cols(x, 3), pyra::dimension_error);
  }
}

TEST_CASE("cross entropy values and stability") {
  Tensor logits = Tensor::zeros({4});
  Tensor loss = pyra::cross_entropy_logits(logits, 2);
  CHECK(std::abs(loss.item() - std::log(4.0)) < 1e-12);

  Tensor big = Tensor::from_vector({3}, {1000.0, 0.0, -1000.0});
  CHECK(std::abs(pyra::cross_entropy_logits(big, 0).item()) < 1e-12);
  CHECK(std::abs(pyra::cross_entropy_logits(big, 1).item() - 1000.0) < 1e-9);
  CHECK_THROWS_AS(pyra::cross_entropy_logits(logits, 4), pyra::index_error);
  CHECK_THROWS_AS(pyra::cross_entropy_logits(Tensor::zeros({2, 3}), 0), pyra::dimension_error);
}

TEST_CASE("rng determinism and moments") {
  SECTION("same seed, same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  }
  SECTION("gaussian stream reproducibility") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_gaussian() == b.next_gaussian());
  }
  SECTION("distinct streams differ") {
    Rng a(42, 0), b(42, 1);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += (a.next_u64() == b.next_u64());
    CHECK(same == 0);
  }
  SECTION("zero stddev is exactly constant and consumes no draws") {
    Rng rng(7);
    Tensor t = pyra::gaussian(rng, {3, 3}, 0.0);
    CHECK(rng.counter() == 0);
    for (double v : t.data()) CHECK(v == 0.0);
  }
  SECTION("empirical moments at stddev 0.02") {
    Rng rng(42);
    Tensor t = pyra::gaussian(rng, {100000}, 0.02);
    double mean = sample_mean(t.data());
    double sd = std::sqrt(sample_var(t.data()));
    CHECK(std::abs(mean) < 2e-4);
    CHECK(sd >= 0.0198);
    CHECK(sd <= 0.0202);
  }
  SECTION("uniforms live in [0,1)") {
    Rng rng(5);
    for (int i = 0; i < 10000; ++i) {
      double u = rng.next_uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
    }
  }
  SECTION("shuffle is a deterministic permutation") {
    std::vector<int> v1{0, 1, 2, 3, 4, 5, 6, 7}, v2 = v1, sorted = v1;
    Rng a(9), b(9);
    a.shuffle(v1.begin(), v1.end());
    b.shuffle(v2.begin(), v2.end());
    CHECK(v1 == v2);
    std::sort(v2.begin(), v2.end());
    CHECK(v2 == sorted);
  }
}

TEST_CASE("backward basics") {
  SECTION("gradient of sum is ones") {
    Tensor x = Tensor::from_vector({2, 2}, {1, 2, 3, 4}).set_requires_grad(true);
    pyra::backward(pyra::sum(x));
    CHECK(x.grad() == std::vector<double>(4, 1.0));
  }
  SECTION("gradient of half squared norm is x") {
    Tensor x = Tensor::from_vector({3}, {1.5, -2.0, 0.25}).set_requires_grad(true);
    pyra::backward(pyra::scale(pyra::sum(pyra::hadamard(x, x)), 0.5));
    CHECK(x.grad() == x.data());
  }
  SECTION("grads accumulate until cleared") {
    Tensor x = Tensor::from_vector({2}, {1, 1}).set_requires_grad(true);
    pyra::backward(pyra::sum(x));
    pyra::backward(pyra::sum(x));
    CHECK(x.grad() == std::vector<double>{2, 2});
    x.zero_grad();
    CHECK(x.grad().empty());
  }
  SECTION("non-scalar loss rejected") {
    Tensor x = Tensor::zeros({2}).set_requires_grad(true);
    CHECK_THROWS_AS(pyra::backward(pyra::scale(x, 2.0)), pyra::contract_error);
  }
  SECTION("frozen leaves receive no gradient buffer") {
    Tensor x = Tensor::from_vector({2}, {1, 2});  // requires_grad = false
    Tensor y = Tensor::from_vector({2}, {3, 4}).set_requires_grad(true);
    pyra::backward(pyra::sum(pyra::hadamard(x, y)));
    CHECK(x.grad().empty());
    CHECK(y.grad() == std::vector<double>{1, 2});
  }
  SECTION("no-grad mode records nothing") {
    Tensor x = Tensor::from_vector({2}, {1, 2}).set_requires_grad(true);
    pyra::NoGradGuard ng;
    Tensor y = pyra::sum(x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node().parents.empty());
  }
  SECTION("backward is bitwise reproducible") {
    Rng rng(23);
    Tensor x = random_param(rng, {4, 4});
    std::vector<double> first;
    for (int run = 0; run < 2; ++run) {
      x.zero_grad();
      Tensor y = pyra::layernorm(pyra::matmul(x, pyra::transpose(x)), 1e-6);
      pyra::backward(pyra::sum(pyra::gelu(y)));
      if (run == 0)
        first = x.grad();
      else
        CHECK(first == x.grad());
    }
  }
}

TEST_CASE("finite differences validate every differentiable op") {
  const double kTol = 1e-4;
  Rng seeds(1234);
  auto run = [&](const char* label, const std::function<double(Rng&)>& one_trial) {
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      Rng rng(seeds.next_u64());
      worst = std::max(worst, one_trial(rng));
    }
    INFO(label);
    CHECK(worst < kTol);
  };

  run("add/sub/scale/add_scalar", [](Rng& rng) {
    Tensor a = random_param(rng, {3, 4});
    Tensor b = random_param(rng, {3, 4});
    Tensor w = pyra::gaussian(rng, {3, 4}, 1.0);
    auto loss = [&] {
      Tensor y = pyra::add_scalar(pyra::scale(pyra::sub(pyra::add(a, b), pyra::scale(b, 0.5)), 1.7), -0.3);
      return weighted_readout(y, w);
    };
    return testsupport::check_gradients({a, b}, loss).max_rel_err;
  });

  run("hadamard", [](Rng& rng) {
    Tensor a = random_param(rng, {4, 3});
    Tensor b = random_param(rng, {4, 3});
    Tensor w = pyra::gaussian(rng, {4, 3}, 1.0);
    auto loss = [&] { return weighted_readout(pyra::hadamard(a, b), w); };
    return testsupport::check_gradients({a, b}, loss).max_rel_err;
  });

  run("matmul", [](Rng& rng) {
    Tensor a = random_param(rng, {3, 5});
    Tensor b = random_param(rng, {5, 2});
    Tensor w = pyra::gaussian(rng, {3, 2}, 1.0);
    auto loss = [&] { return weighted_readout(pyra::matmul(a, b), w); };
    return testsupport::check_gradients({a, b}, loss).max_rel_err;
  });

  run("linear", [](Rng& rng) {
    Tensor x = random_param(rng, {4, 3});
    Tensor wgt = random_param(rng, {5, 3});
    Tensor bias = random_param(rng, {5});
    Tensor w = pyra::gaussian(rng, {4, 5}, 1.0);
    auto loss = [&] { return weighted_readout(pyra::linear(x, wgt, bias), w); };
    return testsupport::check_gradients({x, wgt, bias}, loss).max_rel_err;
  });

  run("transpose+reshape", [](Rng& rng) {
    Tensor x = random_param(rng, {3, 4});
    Tensor w = pyra::gaussian(rng, {2, 6}, 1.0);
    auto loss = [&] { return weighted_readout(pyra::reshape(pyra::transpose(x), {2, 6}), w); };
    return testsupport::check_gradients({x}, loss).max_rel_err;
  });

  run("sigmoid", [](Rng& rng) {
    Tensor x = random_param(rng, {3, 3}, 2.0);
    Tensor w = pyra::gaussian(rng, {3, 3}, 1.0);
    auto loss = [&] { return weighted_readout(pyra::sigmoid(x), w); };
    return testsupport::check_gradients({x}, loss).max_rel_err;
  });

  run("gelu", [](Rng& rng) {
    Tensor x = random_param(rng, {3, 3}, 2.0);
    Tensor w = pyra::gaussian(rng, {3, 3}, 1.0);
    auto loss = [&] { return weighted_readout(pyra::gelu(x), w); };
    return testsupport::check_gradients({x}, loss).max_rel_err;
  });

  run("softmax", [](Rng& rng) {
    Tensor x = random_param(rng, {4, 5}, 2.0);
    Tensor w = pyra::gaussian(rng, {4, 5}, 1.0);
    auto loss = [&] { return weighted_readout(pyra::softmax(x, 1), w); };
    return testsupport::check_gradients({x}, loss).max_rel_err;
  });

  run("layernorm", [](Rng& rng) {
    Tensor x = random_param(rng, {3, 6}, 2.0);
    Tensor w = pyra::gaussian(rng, {3, 6}, 1.0);
    auto loss = [&] { return weighted_readout(pyra::layernorm(x, 1e-6), w); };
    return testsupport::check_gradients({x}, loss).max_rel_err;
  });

  run("layernorm_affine", [](Rng& rng) {
    Tensor x = random_param(rng, {3, 6}, 2.0);
    Tensor g = random_param(rng, {6});
    Tensor b = random_param(rng, {6});
    Tensor w = pyra::gaussian(rng, {3, 6}, 1.0);
    auto loss = [&] { return weighted_readout(pyra::layernorm_affine(x, g, b, 1e-6), w); };
    return testsupport::check_gradients({x, g, b}, loss).max_rel_err;
  });

  run("gather_rows (with duplicates)", [](Rng& rng) {
    Tensor x = random_param(rng, {4, 3});
    Tensor w = pyra::gaussian(rng, {3, 3}, 1.0);
    auto loss = [&] { return weighted_readout(pyra::gather_rows(x, {1, 3, 1}), w); };
    return testsupport::check_gradients({x}, loss).max_rel_err;
  });

  run("scatter_mean_rows", [](Rng& rng) {
    Tensor x = random_param(rng, {5, 3});
    Tensor w = pyra::gaussian(rng, {3, 3}, 1.0);
    std::vector<int64_t> targets{0, 1, 0, 2, 1};
    std::vector<double> weights{1, 2, 3, 1, 2};
    auto loss = [&] { return weighted_readout(pyra::scatter_mean_rows(x, targets, weights, 3), w); };
    return testsupport::check_gradients({x}, loss).max_rel_err;
  });

  run("concat/slice/broadcast", [](Rng& rng) {
    Tensor a = random_param(rng, {3, 2});
    Tensor b = random_param(rng, {3, 1});
    Tensor c = random_param(rng, {1, 3});
    Tensor w = pyra::gaussian(rng, {6, 3}, 1.0);
    auto loss = [&] {
      Tensor top = pyra::concat_cols(std::vector<Tensor>{a, b});
      Tensor bottom = pyra::broadcast_rows(c, 3);
      Tensor both = pyra::concat_rows(top, bottom);
      Tensor all = pyra::concat_cols(
          std::vector<Tensor>{pyra::slice_cols(both, 0, 2), pyra::broadcast_cols(pyra::slice_cols(both, 2, 1), 1)});
      return weighted_readout(all, w);
    };
    return testsupport::check_gradients({a, b, c}, loss).max_rel_err;
  });

  run("cross_entropy_logits", [](Rng& rng) {
    Tensor x = random_param(rng, {5}, 3.0);
    auto loss = [&] { return pyra::cross_entropy_logits(x, 2); };
    return testsupport::check_gradients({x}, loss).max_rel_err;
  });

  run("composite expression", [](Rng& rng) {
    Tensor x = random_param(rng, {4, 4});
    Tensor y = random_param(rng, {4, 4});
    auto loss = [&] {
      Tensor h = pyra::gelu(pyra::matmul(pyra::layernorm(x, 1e-6), y));
      Tensor s = pyra::softmax(h, 1);
      return pyra::sum(pyra::hadamard(s, pyra::sigmoid(x)));
    };
    return testsupport::check_gradients({x, y}, loss).max_rel_err;
  });
}
