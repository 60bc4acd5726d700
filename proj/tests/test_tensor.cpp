#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mrtts/tensor.hpp"
#include "test_util.hpp"

using namespace mrtts;
using namespace mrtts::ad;
using mrtts::testutil::max_grad_rel_error;
using mrtts::testutil::random_matrix;

namespace {

// builds loss = sum(weights .* f(inputs...)) so every output entry gets a
// distinct gradient signal
double weighted_sum_value(const Var& out, const Matrix& w) {
  return out->value.cwiseProduct(w).sum();
}

Var weighted_sum(const Var& out, const Matrix& w) { return sum_all(mul(out, constant(w))); }

}  // namespace

TEST_CASE("elementwise and broadcast op gradients match finite differences") {
  std::mt19937_64 rng(42);
  auto a_val = random_matrix(rng, 3, 4);
  auto b_val = random_matrix(rng, 3, 4);
  auto col_val = random_matrix(rng, 3, 1);
  auto row_val = random_matrix(rng, 1, 4);
  Matrix w3x4 = random_matrix(rng, 3, 4);
  Matrix w3x1 = random_matrix(rng, 3, 1);
  Matrix w1x4 = random_matrix(rng, 1, 4);
  Matrix w1x1 = Matrix::Ones(1, 1);

  struct Case {
    const char* name;
    std::function<Var(const Var&, const Var&)> build;
    const Matrix* weights;
    bool positive_only = false;
  };
  std::vector<Case> cases = {
      {"add", [](const Var& a, const Var& b) { return add(a, b); }, &w3x4},
      {"sub", [](const Var& a, const Var& b) { return sub(a, b); }, &w3x4},
      {"mul", [](const Var& a, const Var& b) { return mul(a, b); }, &w3x4},
      {"neg", [](const Var& a, const Var&) { return neg(a); }, &w3x4},
      {"tanh", [](const Var& a, const Var&) { return tanh_(a); }, &w3x4},
      {"sigmoid", [](const Var& a, const Var&) { return sigmoid_(a); }, &w3x4},
      {"elu", [](const Var& a, const Var&) { return elu_(a); }, &w3x4},
      {"exp", [](const Var& a, const Var&) { return exp_(a); }, &w3x4},
      {"softplus", [](const Var& a, const Var&) { return softplus_(a); }, &w3x4},
      {"log", [](const Var& a, const Var&) { return log_(a); }, &w3x4, true},
      {"powc", [](const Var& a, const Var&) { return powc(a, -0.5); }, &w3x4, true},
      {"add_scalar", [](const Var& a, const Var&) { return add_scalar(a, 1.7); }, &w3x4},
      {"mul_scalar", [](const Var& a, const Var&) { return mul_scalar(a, -2.3); }, &w3x4},
      {"softmax_rows", [](const Var& a, const Var&) { return softmax_rows(a); }, &w3x4},
      {"row_mean", [](const Var& a, const Var&) { return row_mean(a); }, &w3x1},
      {"col_mean", [](const Var& a, const Var&) { return col_mean(a); }, &w1x4},
      {"sum_all", [](const Var& a, const Var&) { return sum_all(a); }, &w1x1},
      {"mean_all", [](const Var& a, const Var&) { return mean_all(a); }, &w1x1},
      {"logmeanexp", [](const Var& a, const Var&) { return logmeanexp_all(a); }, &w1x1},
      {"transpose",
       [&](const Var& a, const Var&) { return transpose(a); },
       nullptr},  // handled below
  };

  for (const auto& c : cases) {
    CAPTURE(c.name);
    Matrix av = c.positive_only ? Matrix((a_val.array().abs() + 0.5).matrix()) : a_val;
    Var a = param(av);
    Var b = param(b_val);
    Matrix w = c.weights ? *c.weights : Matrix(random_matrix(rng, 4, 3));
    auto build = [&]() { return weighted_sum(c.build(a, b), w); };
    backward(build());
    auto rebuild = [&]() { return build()->scalar(); };
    CHECK(max_grad_rel_error(a, rebuild) < 1e-5);
    a->zero_grad();
    b->zero_grad();
  }
}

TEST_CASE("matmul and shape op gradients match finite differences") {
  std::mt19937_64 rng(7);
  Var a = param(random_matrix(rng, 3, 5));
  Var b = param(random_matrix(rng, 5, 2));
  Matrix w = random_matrix(rng, 3, 2);
  auto build = [&]() { return weighted_sum(matmul(a, b), w); };
  backward(build());
  auto rebuild = [&]() { return build()->scalar(); };
  CHECK(max_grad_rel_error(a, rebuild) < 1e-6);
  CHECK(max_grad_rel_error(b, rebuild) < 1e-6);

  SUBCASE("broadcast family") {
    Var x = param(random_matrix(rng, 4, 3));
    Var r = param(random_matrix(rng, 1, 3));
    Var c = param(random_matrix(rng, 4, 1));
    Matrix wx = random_matrix(rng, 4, 3);
    auto build2 = [&]() {
      Var t = add_row_broadcast(x, r);
      t = add_col_broadcast(t, c);
      t = sub_col_broadcast(t, c);
      t = mul_col_broadcast(t, c);
      return weighted_sum(t, wx);
    };
    backward(build2());
    auto rb = [&]() { return build2()->scalar(); };
    CHECK(max_grad_rel_error(x, rb) < 1e-5);
    CHECK(max_grad_rel_error(r, rb) < 1e-5);
    CHECK(max_grad_rel_error(c, rb) < 1e-5);
  }

  SUBCASE("concat and slice") {
    Var x = param(random_matrix(rng, 2, 3));
    Var y = param(random_matrix(rng, 3, 3));
    Matrix wc = random_matrix(rng, 4, 3);
    auto build3 = [&]() {
      Var cat = concat_rows({x, y});       // 5 x 3
      Var sl = slice_rows(cat, 1, 4);      // rows 1..4
      return weighted_sum(sl, wc);
    };
    backward(build3());
    auto rb = [&]() { return build3()->scalar(); };
    CHECK(max_grad_rel_error(x, rb) < 1e-5);
    CHECK(max_grad_rel_error(y, rb) < 1e-5);
  }

  SUBCASE("gather and tile") {
    Var table = param(random_matrix(rng, 6, 3));
    Var row = param(random_matrix(rng, 1, 4));
    std::vector<int> ids = {2, 2, 5, 0};
    Matrix wg = random_matrix(rng, 4, 3);
    Matrix wt = random_matrix(rng, 3, 4);
    auto build4 = [&]() {
      return add(weighted_sum(gather_rows(table, ids), wg),
                 weighted_sum(tile_rows(row, 3), wt));
    };
    backward(build4());
    auto rb = [&]() { return build4()->scalar(); };
    CHECK(max_grad_rel_error(table, rb) < 1e-5);
    CHECK(max_grad_rel_error(row, rb) < 1e-5);
  }
}

TEST_CASE("im2col and seq_from_chw round gradient checks") {
  std::mt19937_64 rng(11);
  const ConvGeom g{2, 5, 6, 3, 3, 2, 2, 1, 1};
  Var x = param(random_matrix(rng, 2, 30));
  Matrix w = random_matrix(rng, 2 * 9, g.out_h() * g.out_w());
  auto build = [&]() { return weighted_sum(im2col(x, g), w); };
  backward(build());
  CHECK(max_grad_rel_error(x, [&]() { return build()->scalar(); }) < 1e-6);

  Var y = param(random_matrix(rng, 3, 8));  // C=3, H=4, W=2
  Matrix wy = random_matrix(rng, 4, 6);
  auto build2 = [&]() { return weighted_sum(seq_from_chw(y, 3, 4, 2), wy); };
  backward(build2());
  CHECK(max_grad_rel_error(y, [&]() { return build2()->scalar(); }) < 1e-6);
}

TEST_CASE("softmax rows are a simplex and logmeanexp is stable") {
  std::mt19937_64 rng(13);
  Var a = constant(random_matrix(rng, 5, 7, 30.0));  // large logits stress stability
  Var s = softmax_rows(a);
  for (Eigen::Index i = 0; i < 5; ++i) {
    CHECK(s->value.row(i).minCoeff() >= 0.0);
    CHECK(std::abs(s->value.row(i).sum() - 1.0) < 1e-12);
  }

  Matrix big(1, 3);
  big << 1000.0, 1000.0, 1000.0;
  CHECK(logmeanexp_all(constant(big))->scalar() == doctest::Approx(1000.0));
}

TEST_CASE("detach blocks gradient flow") {
  Var a = param(Matrix::Constant(2, 2, 3.0));
  Var blocked = mul(detach(a), a);
  backward(sum_all(blocked));
  // d/da (const * a) = const = 3; a through-detach path contributes nothing
  CHECK(a->grad(0, 0) == doctest::Approx(3.0));

  Var b = param(Matrix::Constant(1, 1, 2.0));
  Var d = detach(b);
  backward(sum_all(mul(d, d)));
  CHECK(b->grad.size() == 0);  // never touched
}

TEST_CASE("gradient accumulates across shared subgraphs") {
  Var a = param(Matrix::Constant(1, 1, 3.0));
  Var sq = mul(a, a);
  backward(sum_all(sq));
  CHECK(a->grad(0, 0) == doctest::Approx(6.0));
}
