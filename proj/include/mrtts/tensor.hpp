#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <vector>

namespace mrtts::ad {

using Matrix = Eigen::MatrixXd;

// Reverse-mode autodiff over dense double matrices. Each operation appends a
// node holding its value, the parent handles and a closure that pushes the
// node's gradient into the parents. backward() walks the graph from a scalar
// root in reverse topological order. Graphs are rebuilt per step; parameter
// leaves persist across graphs and accumulate gradients until zeroed.
class Node {
 public:
  Matrix value;
  Matrix grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  explicit Node(Matrix v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}

  void accumulate(const Matrix& g) {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    grad += g;
  }
  void zero_grad() { grad.resize(0, 0); }
  double scalar() const { return value(0, 0); }
};

using Var = std::shared_ptr<Node>;

Var constant(Matrix v);
Var param(Matrix v);  // trainable leaf
Var detach(const Var& a);

// elementwise / arithmetic
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // hadamard
Var neg(const Var& a);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var powc(const Var& a, double p);  // elementwise power, positive base for fractional p

// activations
Var tanh_(const Var& a);
Var sigmoid_(const Var& a);
Var relu_(const Var& a);
Var elu_(const Var& a);
Var exp_(const Var& a);
Var log_(const Var& a);
Var softplus_(const Var& a);

// linear algebra / shape
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const Var& a, const Var& b);
Var slice_rows(const Var& a, Eigen::Index r0, Eigen::Index n);
Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index n);
Var gather_rows(const Var& table, const std::vector<int>& ids);
Var tile_rows(const Var& row, Eigen::Index n);  // replicate a 1xC row n times

// reductions / broadcasts
Var sum_all(const Var& a);       // 1x1
Var mean_all(const Var& a);      // 1x1
Var row_mean(const Var& a);      // RxC -> Rx1 (mean over columns)
Var col_mean(const Var& a);      // RxC -> 1xC (mean over rows)
Var add_row_broadcast(const Var& a, const Var& r);  // a(RxC) + r(1xC) on every row
Var add_col_broadcast(const Var& a, const Var& c);  // a(RxC) + c(Rx1) on every column
Var sub_col_broadcast(const Var& a, const Var& c);
Var mul_col_broadcast(const Var& a, const Var& c);

// softmax over each row, numerically stable
Var softmax_rows(const Var& a);
// log(mean(exp(x))) over all entries, shift-by-max form
Var logmeanexp_all(const Var& a);

// im2col for 2-d convolution. Input laid out as (C, H*W) with row-major
// spatial flattening; output is (C*KH*KW, OH*OW). Zero padding.
struct ConvGeom {
  Eigen::Index channels, height, width;
  Eigen::Index kh, kw, sh, sw, ph, pw;
  Eigen::Index out_h() const { return (height + 2 * ph - kh) / sh + 1; }
  Eigen::Index out_w() const { return (width + 2 * pw - kw) / sw + 1; }
};
Var im2col(const Var& a, const ConvGeom& g);

// (C, H*W) feature map -> (H, C*W) sequence, one row per spatial row
Var seq_from_chw(const Var& a, Eigen::Index channels, Eigen::Index height, Eigen::Index width);

// Runs reverse-mode accumulation from a 1x1 root.
void backward(const Var& root);

}  // namespace mrtts::ad
