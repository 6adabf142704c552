#include "doctest.h"
#include "fd_oracle.hpp"

#include "nvec/nn.hpp"

#include <cmath>

using namespace nvec;
using namespace nvec::nn;

namespace {

// Straightforward re-computation with explicit loops.
std::vector<double> naive_forward(const Mlp &mlp, std::vector<double> x) {
  for (const auto &l : mlp.layers) {
    std::vector<double> y(l.out_dim());
    for (size_t r = 0; r < l.out_dim(); ++r) {
      double acc = l.bias[static_cast<Eigen::Index>(r)];
      for (size_t c = 0; c < l.in_dim(); ++c)
        acc += l.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * x[c];
      y[r] = l.activation == Activation::Tanh ? std::tanh(acc) : acc;
    }
    x = std::move(y);
  }
  return x;
}

Vector random_vec(size_t n, Rng &rng) {
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v[i] = rng.uniform(-1, 1);
  return v;
}

} // namespace

TEST_CASE("zero-weight net outputs zero") {
  Rng rng(1);
  Mlp mlp = Mlp::create({5, 4, 3}, Activation::Tanh, Activation::Identity, rng, Init::Zero,
                        Init::Zero);
  Vector y = forward(mlp, random_vec(5, rng));
  CHECK(y.isZero(0.0));
}

TEST_CASE("identity layer passes input through") {
  Rng rng(2);
  Mlp mlp = Mlp::create({4, 4}, Activation::Tanh, Activation::Identity, rng);
  mlp.layers[0].weight.setIdentity();
  mlp.layers[0].bias.setZero();
  Vector x = random_vec(4, rng);
  CHECK((forward(mlp, x) - x).norm() == 0.0);
}

TEST_CASE("forward matches naive loops") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    Mlp mlp = Mlp::create({7, 6, 5, 3}, Activation::Tanh, Activation::Identity, rng);
    Vector x = random_vec(7, rng);
    Vector y = forward(mlp, x);
    auto ref = naive_forward(mlp, std::vector<double>(x.data(), x.data() + x.size()));
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(y[static_cast<Eigen::Index>(i)] - ref[i]) <= 1e-12);
  }
}

TEST_CASE("forward rejects wrong input dimension") {
  Rng rng(4);
  Mlp mlp = Mlp::create({3, 2}, Activation::Tanh, Activation::Identity, rng);
  CHECK_THROWS_AS(forward(mlp, Vector::Zero(4)), Error);
  try {
    forward(mlp, Vector::Zero(4));
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::DimMismatch);
  }
}

TEST_CASE("backward with zero upstream gives zero gradients") {
  Rng rng(5);
  Mlp mlp = Mlp::create({4, 3, 2}, Activation::Tanh, Activation::Identity, rng);
  MlpCache cache;
  forward(mlp, random_vec(4, rng), &cache);
  MlpGrads g = MlpGrads::zeros_like(mlp);
  Vector dx = backward(mlp, cache, Vector::Zero(2), g);
  CHECK(dx.isZero(0.0));
  for (size_t i = 0; i < g.weight.size(); ++i) {
    CHECK(g.weight[i].isZero(0.0));
    CHECK(g.bias[i].isZero(0.0));
  }
}

TEST_CASE("single linear layer backward") {
  Rng rng(6);
  Mlp mlp = Mlp::create({4, 3}, Activation::Tanh, Activation::Identity, rng);
  Vector x = random_vec(4, rng);
  MlpCache cache;
  forward(mlp, x, &cache);
  for (int j = 0; j < 3; ++j) {
    MlpGrads g = MlpGrads::zeros_like(mlp);
    Vector e = Vector::Zero(3);
    e[j] = 1.0;
    Vector dx = backward(mlp, cache, e, g);
    CHECK((g.weight[0].row(j).transpose() - x).norm() == 0.0);
    CHECK((dx - mlp.layers[0].weight.row(j).transpose()).norm() == 0.0);
  }
}

TEST_CASE("backward agrees with central finite differences") {
  Rng rng(7);
  double worst = 0.0;
  int probes = 0;
  for (int rep = 0; rep < 25; ++rep) {
    Mlp mlp = Mlp::create({6, 5, 4, 3}, Activation::Tanh, Activation::Identity, rng);
    Vector x = random_vec(6, rng);
    Vector up = random_vec(3, rng);
    MlpCache cache;
    forward(mlp, x, &cache);
    MlpGrads g = MlpGrads::zeros_like(mlp);
    Vector dx = backward(mlp, cache, up, g);
    auto loss = [&] { return up.dot(forward(mlp, x)); };
    for (int p = 0; p < 4; ++p) {
      size_t layer = rng.below(mlp.layers.size());
      auto &W = mlp.layers[layer].weight;
      Eigen::Index idx = static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(W.size())));
      double num = fd::central(W.data() + idx, loss);
      worst = std::max(worst, fd::rel_err(g.weight[layer].data()[idx], num));
      auto &b = mlp.layers[layer].bias;
      Eigen::Index bi = static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(b.size())));
      num = fd::central(b.data() + bi, loss);
      worst = std::max(worst, fd::rel_err(g.bias[layer][bi], num));
      Eigen::Index xi = static_cast<Eigen::Index>(rng.below(6));
      num = fd::central(x.data() + xi, loss);
      worst = std::max(worst, fd::rel_err(dx[xi], num));
      probes += 3;
    }
  }
  CHECK(probes >= 100);
  CHECK(worst < 1e-4);
}

TEST_CASE("adam: zero gradient leaves parameters, advances t") {
  std::vector<double> p = {1.0, -2.0, 3.0};
  std::vector<double> g = {0.0, 0.0, 0.0};
  AdamState st;
  std::vector<ParamSlot> slots = {{p, g, 1, nullptr}};
  adam_step(slots, st);
  CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
  CHECK(st.t == 1);
}

TEST_CASE("adam: first step moves by about lr") {
  // m = 0.1, v = 0.001; bias-corrected mhat = vhat = 1 -> step = lr / (1 + eps).
  std::vector<double> p = {0.0};
  std::vector<double> g = {1.0};
  AdamState st;
  st.config.lr = 0.1;
  std::vector<ParamSlot> slots = {{p, g, 1, nullptr}};
  adam_step(slots, st);
  CHECK(p[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam is deterministic") {
  auto run = [] {
    std::vector<double> p = {0.5, -0.25};
    std::vector<double> g = {0.3, -0.7};
    AdamState st;
    st.config.lr = 0.01;
    std::vector<ParamSlot> slots = {{p, g, 1, nullptr}};
    for (int i = 0; i < 10; ++i)
      adam_step(slots, st);
    return std::make_pair(p, st.m[0]);
  };
  CHECK(run() == run());
}

TEST_CASE("adam: sparse rows only touch listed rows") {
  std::vector<double> p = {1, 1, 2, 2, 3, 3};
  std::vector<double> g = {1, 1, 1, 1, 1, 1};
  std::vector<size_t> rows = {1};
  AdamState st;
  std::vector<ParamSlot> slots = {{p, g, 2, &rows}};
  adam_step(slots, st);
  CHECK(p[0] == 1.0);
  CHECK(p[2] < 2.0);
  CHECK(p[4] == 3.0);
}

TEST_CASE("adam rejects mismatched shapes") {
  std::vector<double> p = {1, 2};
  std::vector<double> g = {1};
  AdamState st;
  std::vector<ParamSlot> slots = {{p, g, 1, nullptr}};
  CHECK_THROWS_AS(adam_step(slots, st), Error);
}

TEST_CASE("softmax") {
  Vector u = Vector::Constant(5, 0.7);
  Vector p = softmax(u);
  for (Eigen::Index i = 0; i < 5; ++i)
    CHECK(p[i] == doctest::Approx(0.2).epsilon(1e-15));

  Vector l(2);
  l << 0.0, std::log(3.0);
  Vector q = softmax(l);
  CHECK(std::abs(q[0] - 0.25) < 1e-12);
  CHECK(std::abs(q[1] - 0.75) < 1e-12);

  Rng rng(9);
  Vector r = random_vec(20, rng) * 30.0;
  Vector a = softmax(r), b = softmax((r.array() + 100.0).matrix());
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(a.sum() - 1.0) < 1e-12);
  CHECK((a.array() > 0).all());

  Vector big(3);
  big << 1000.0, 999.0, -1000.0;
  CHECK(softmax(big).allFinite());
}

TEST_CASE("mlp json round-trip is bit exact") {
  Rng rng(10);
  Mlp mlp = Mlp::create({5, 4, 3}, Activation::Tanh, Activation::Identity, rng);
  Mlp back = mlp_from_json(nlohmann::json::parse(to_json(mlp).dump()));
  for (size_t i = 0; i < mlp.layers.size(); ++i) {
    CHECK(mlp.layers[i].weight == back.layers[i].weight);
    CHECK(mlp.layers[i].bias == back.layers[i].bias);
    CHECK(mlp.layers[i].activation == back.layers[i].activation);
  }
  CHECK_THROWS_AS(mlp_from_json(nlohmann::json::object()), Error);
}
