#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mrtts/nn.hpp"
#include "test_util.hpp"

using namespace mrtts;
using namespace mrtts::ad;
using namespace mrtts::nn;
using mrtts::testutil::max_grad_rel_error;
using mrtts::testutil::random_matrix;

TEST_CASE("conv2d + channel norm + gru gradients agree with finite differences") {
  std::mt19937_64 rng(3);
  ParamStore store;
  Conv2d conv(store, "conv", 2, 3, 3, 3, 2, 2, 1, 1, rng);
  ChannelNorm norm(store, "norm", 3);
  GRUCell gru(store, "gru", 6, 4, rng);

  Matrix input = random_matrix(rng, 2, 5 * 4);  // C=2, H=5, W=4
  Matrix w_out = random_matrix(rng, 1, 4);

  auto build = [&]() {
    Var x = constant(input);
    auto geom = conv.geometry(5, 4);
    Var y = conv.forward(x, 5, 4);
    y = norm.forward(y, /*training=*/false);  // eval stats keep the function pure
    y = relu_(y);
    Var seq = seq_from_chw(y, 3, geom.out_h(), geom.out_w());
    Var h = gru.initial_state();
    for (Eigen::Index t = 0; t < seq->value.rows(); ++t) h = gru.step(slice_rows(seq, t, 1), h);
    return sum_all(mul(h, constant(w_out)));
  };

  backward(build());
  for (const auto& [name, p] : store.params()) {
    CAPTURE(name);
    CHECK(max_grad_rel_error(p, [&]() { return build()->scalar(); }) < 2e-5);
  }
}

TEST_CASE("channel norm: training stats differ from eval stats and stay finite") {
  std::mt19937_64 rng(5);
  ParamStore store;
  ChannelNorm norm(store, "n", 2);
  Matrix x = random_matrix(rng, 2, 6, 2.0);

  Var train_out = norm.forward(constant(x), true);
  // training mode normalizes with the sample's own stats
  for (Eigen::Index c = 0; c < 2; ++c) {
    CHECK(std::abs(train_out->value.row(c).mean()) < 1e-9);
  }
  Var eval_out = norm.forward(constant(x), false);
  CHECK(eval_out->value.allFinite());
  // the running buffers moved toward the observed stats
  CHECK((*norm.running_mean)(0, 0) != 0.0);
}

TEST_CASE("adam drives a quadratic toward its minimum and zeroes grads") {
  ParamStore store;
  Var w = store.add("w", Matrix::Constant(1, 1, 5.0));
  Adam adam(0.1);
  for (int i = 0; i < 200; ++i) {
    Var loss = mul(w, w);
    backward(sum_all(loss));
    adam.step(store);
  }
  CHECK(std::abs(w->value(0, 0)) < 0.1);
  CHECK(w->grad.size() == 0);
}

TEST_CASE("gradient clipping bounds the applied update") {
  ParamStore store;
  Var w = store.add("w", Matrix::Constant(1, 1, 0.0));
  Adam adam(1.0, 0.9, 0.999, 1e-8, /*clip_norm=*/1e-3);
  Var loss = mul_scalar(w, 1e6);
  backward(sum_all(loss));
  adam.step(store);
  // clipped gradient norm 1e-3, first-step Adam update is lr * sign-ish
  CHECK(std::abs(w->value(0, 0)) <= 1.0 + 1e-9);
}

TEST_CASE("MLP zero-initialized output layer starts at exactly zero") {
  std::mt19937_64 rng(9);
  ParamStore store;
  MLP mlp(store, "m", 4, {8, 8}, 1, MLP::Activation::Elu, rng, /*zero_init_output=*/true);
  Var out = mlp.forward(constant(random_matrix(rng, 5, 4)));
  CHECK(out->value.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("MLP detach_params blocks parameter gradients but not input gradients") {
  std::mt19937_64 rng(10);
  ParamStore store;
  MLP mlp(store, "m", 3, {6}, 1, MLP::Activation::Tanh, rng);
  Var x = param(random_matrix(rng, 2, 3));
  backward(sum_all(mlp.forward(x, /*detach_params=*/true)));
  CHECK(x->grad.size() != 0);
  for (const auto& [name, p] : store.params()) {
    CAPTURE(name);
    CHECK(p->grad.size() == 0);
  }
}

TEST_CASE("param store copy_values_from replicates values and buffers") {
  std::mt19937_64 rng(12);
  ParamStore a, b;
  Linear la(a, "l", 3, 2, rng), lb(b, "l", 3, 2, rng);
  ChannelNorm na(a, "n", 2), nb(b, "n", 2);
  (*na.running_mean)(0, 0) = 42.0;
  b.copy_values_from(a);
  CHECK(lb.weight->value == la.weight->value);
  CHECK((*nb.running_mean)(0, 0) == 42.0);
}
