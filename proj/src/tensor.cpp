#include "mrtts/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "mrtts/errors.hpp"

namespace mrtts::ad {

namespace {

Var make_op(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto n = std::make_shared<Node>(std::move(value), rg);
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
    throw ShapeMismatchError(std::string(op) + ": " + std::to_string(a->value.rows()) + "x" +
                             std::to_string(a->value.cols()) + " vs " +
                             std::to_string(b->value.rows()) + "x" +
                             std::to_string(b->value.cols()));
}

}  // namespace

Var constant(Matrix v) { return std::make_shared<Node>(std::move(v), false); }

Var param(Matrix v) { return std::make_shared<Node>(std::move(v), true); }

Var detach(const Var& a) { return constant(a->value); }

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_op(a->value + b->value, {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_op(a->value - b->value, {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(-n.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  return make_op(a->value.cwiseProduct(b->value), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad)
      n.parents[0]->accumulate(n.grad.cwiseProduct(n.parents[1]->value));
    if (n.parents[1]->requires_grad)
      n.parents[1]->accumulate(n.grad.cwiseProduct(n.parents[0]->value));
  });
}

Var neg(const Var& a) {
  return make_op(-a->value, {a}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(-n.grad);
  });
}

Var add_scalar(const Var& a, double c) {
  return make_op(a->value.array() + c, {a}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
  });
}

Var mul_scalar(const Var& a, double c) {
  return make_op(a->value * c, {a}, [c](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad * c);
  });
}

Var powc(const Var& a, double p) {
  return make_op(a->value.array().pow(p).matrix(), {a}, [p](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Matrix d = p * n.parents[0]->value.array().pow(p - 1.0);
    n.parents[0]->accumulate(n.grad.cwiseProduct(d));
  });
}

Var tanh_(const Var& a) {
  Matrix y = a->value.array().tanh();
  return make_op(y, {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Matrix d = 1.0 - n.value.array().square();
    n.parents[0]->accumulate(n.grad.cwiseProduct(d));
  });
}

Var sigmoid_(const Var& a) {
  Matrix y = a->value.unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make_op(y, {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Matrix d = n.value.array() * (1.0 - n.value.array());
    n.parents[0]->accumulate(n.grad.cwiseProduct(d));
  });
}

Var relu_(const Var& a) {
  Matrix y = a->value.cwiseMax(0.0);
  return make_op(y, {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Matrix mask = (n.parents[0]->value.array() > 0.0).cast<double>();
    n.parents[0]->accumulate(n.grad.cwiseProduct(mask));
  });
}

Var elu_(const Var& a) {
  Matrix y = a->value.unaryExpr([](double x) { return x > 0 ? x : std::expm1(x); });
  return make_op(y, {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Matrix d = n.parents[0]->value.unaryExpr([](double x) { return x > 0 ? 1.0 : std::exp(x); });
    n.parents[0]->accumulate(n.grad.cwiseProduct(d));
  });
}

Var exp_(const Var& a) {
  Matrix y = a->value.array().exp();
  return make_op(y, {a}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad.cwiseProduct(n.value));
  });
}

Var log_(const Var& a) {
  Matrix y = a->value.array().log();
  return make_op(y, {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->accumulate(n.grad.cwiseQuotient(n.parents[0]->value));
  });
}

Var softplus_(const Var& a) {
  Matrix y = a->value.unaryExpr(
      [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); });
  return make_op(y, {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Matrix d = n.parents[0]->value.unaryExpr([](double x) {
      if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
      double e = std::exp(x);
      return e / (1.0 + e);
    });
    n.parents[0]->accumulate(n.grad.cwiseProduct(d));
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->value.cols() != b->value.rows())
    throw ShapeMismatchError("matmul: inner dims " + std::to_string(a->value.cols()) + " vs " +
                             std::to_string(b->value.rows()));
  return make_op(a->value * b->value, {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad)
      n.parents[0]->accumulate(n.grad * n.parents[1]->value.transpose());
    if (n.parents[1]->requires_grad)
      n.parents[1]->accumulate(n.parents[0]->value.transpose() * n.grad);
  });
}

Var transpose(const Var& a) {
  return make_op(a->value.transpose(), {a}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad.transpose());
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatchError("concat_rows of nothing");
  Eigen::Index rows = 0, cols = parts[0]->value.cols();
  for (const auto& p : parts) {
    if (p->value.cols() != cols) throw ShapeMismatchError("concat_rows: ragged columns");
    rows += p->value.rows();
  }
  Matrix v(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p->value.rows()) = p->value;
    r += p->value.rows();
  }
  return make_op(std::move(v), parts, [](Node& n) {
    Eigen::Index r = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) p->accumulate(n.grad.middleRows(r, p->value.rows()));
      r += p->value.rows();
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a->value.rows() != b->value.rows()) throw ShapeMismatchError("concat_cols: ragged rows");
  Matrix v(a->value.rows(), a->value.cols() + b->value.cols());
  v.leftCols(a->value.cols()) = a->value;
  v.rightCols(b->value.cols()) = b->value;
  return make_op(std::move(v), {a, b}, [](Node& n) {
    Eigen::Index ca = n.parents[0]->value.cols();
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad.leftCols(ca));
    if (n.parents[1]->requires_grad)
      n.parents[1]->accumulate(n.grad.rightCols(n.parents[1]->value.cols()));
  });
}

Var slice_rows(const Var& a, Eigen::Index r0, Eigen::Index n_rows) {
  if (r0 < 0 || r0 + n_rows > a->value.rows()) throw ShapeMismatchError("slice_rows out of range");
  return make_op(a->value.middleRows(r0, n_rows), {a}, [r0, n_rows](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Matrix g = Matrix::Zero(n.parents[0]->value.rows(), n.parents[0]->value.cols());
    g.middleRows(r0, n_rows) = n.grad;
    n.parents[0]->accumulate(g);
  });
}

Var slice_cols(const Var& a, Eigen::Index c0, Eigen::Index n_cols) {
  if (c0 < 0 || c0 + n_cols > a->value.cols()) throw ShapeMismatchError("slice_cols out of range");
  return make_op(a->value.middleCols(c0, n_cols), {a}, [c0, n_cols](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Matrix g = Matrix::Zero(n.parents[0]->value.rows(), n.parents[0]->value.cols());
    g.middleCols(c0, n_cols) = n.grad;
    n.parents[0]->accumulate(g);
  });
}

Var gather_rows(const Var& table, const std::vector<int>& ids) {
  Matrix v(static_cast<Eigen::Index>(ids.size()), table->value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table->value.rows())
      throw VocabularyError("row id " + std::to_string(ids[i]) + " out of table");
    v.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
  }
  return make_op(std::move(v), {table}, [ids](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Matrix g = Matrix::Zero(n.parents[0]->value.rows(), n.parents[0]->value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i)
      g.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    n.parents[0]->accumulate(g);
  });
}

Var tile_rows(const Var& row, Eigen::Index n_rows) {
  if (row->value.rows() != 1) throw ShapeMismatchError("tile_rows expects a 1xC row");
  Matrix v = row->value.replicate(n_rows, 1);
  return make_op(std::move(v), {row}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad.colwise().sum());
  });
}

Var sum_all(const Var& a) {
  Matrix v(1, 1);
  v(0, 0) = a->value.sum();
  return make_op(std::move(v), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->accumulate(Matrix::Constant(n.parents[0]->value.rows(),
                                              n.parents[0]->value.cols(), n.grad(0, 0)));
  });
}

Var mean_all(const Var& a) {
  double count = static_cast<double>(a->value.size());
  Matrix v(1, 1);
  v(0, 0) = a->value.sum() / count;
  return make_op(std::move(v), {a}, [count](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->accumulate(Matrix::Constant(n.parents[0]->value.rows(),
                                              n.parents[0]->value.cols(),
                                              n.grad(0, 0) / count));
  });
}

Var row_mean(const Var& a) {
  Matrix v = a->value.rowwise().mean();
  double c = static_cast<double>(a->value.cols());
  return make_op(std::move(v), {a}, [c](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->accumulate((n.grad / c).replicate(1, n.parents[0]->value.cols()));
  });
}

Var col_mean(const Var& a) {
  Matrix v = a->value.colwise().mean();
  double r = static_cast<double>(a->value.rows());
  return make_op(std::move(v), {a}, [r](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->accumulate((n.grad / r).replicate(n.parents[0]->value.rows(), 1));
  });
}

Var add_row_broadcast(const Var& a, const Var& r) {
  if (r->value.rows() != 1 || r->value.cols() != a->value.cols())
    throw ShapeMismatchError("add_row_broadcast");
  Matrix v = a->value.rowwise() + r->value.row(0);
  return make_op(std::move(v), {a, r}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad.colwise().sum());
  });
}

Var add_col_broadcast(const Var& a, const Var& c) {
  if (c->value.cols() != 1 || c->value.rows() != a->value.rows())
    throw ShapeMismatchError("add_col_broadcast");
  Matrix v = a->value.colwise() + c->value.col(0);
  return make_op(std::move(v), {a, c}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad.rowwise().sum());
  });
}

Var sub_col_broadcast(const Var& a, const Var& c) {
  if (c->value.cols() != 1 || c->value.rows() != a->value.rows())
    throw ShapeMismatchError("sub_col_broadcast");
  Matrix v = a->value.colwise() - c->value.col(0);
  return make_op(std::move(v), {a, c}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
    if (n.parents[1]->requires_grad) n.parents[1]->accumulate(-n.grad.rowwise().sum());
  });
}

Var mul_col_broadcast(const Var& a, const Var& c) {
  if (c->value.cols() != 1 || c->value.rows() != a->value.rows())
    throw ShapeMismatchError("mul_col_broadcast");
  Matrix v = a->value.array().colwise() * c->value.col(0).array();
  return make_op(std::move(v), {a, c}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      Matrix g = n.grad.array().colwise() * n.parents[1]->value.col(0).array();
      n.parents[0]->accumulate(g);
    }
    if (n.parents[1]->requires_grad) {
      Matrix g = n.grad.cwiseProduct(n.parents[0]->value).rowwise().sum();
      n.parents[1]->accumulate(g);
    }
  });
}

Var softmax_rows(const Var& a) {
  Matrix y(a->value.rows(), a->value.cols());
  for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
    double m = a->value.row(i).maxCoeff();
    Eigen::ArrayXd e = (a->value.row(i).array() - m).exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  return make_op(std::move(y), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Matrix g(n.value.rows(), n.value.cols());
    for (Eigen::Index i = 0; i < n.value.rows(); ++i) {
      double s = n.grad.row(i).dot(n.value.row(i));
      g.row(i) = n.value.row(i).cwiseProduct(n.grad.row(i).array().matrix() -
                                             Eigen::RowVectorXd::Constant(n.value.cols(), s));
    }
    n.parents[0]->accumulate(g);
  });
}

Var logmeanexp_all(const Var& a) {
  double m = a->value.maxCoeff();
  double s = (a->value.array() - m).exp().sum();
  double count = static_cast<double>(a->value.size());
  Matrix v(1, 1);
  v(0, 0) = m + std::log(s / count);
  return make_op(std::move(v), {a}, [m, s](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    // d/dx_i = exp(x_i - m) / sum(exp(x - m)) : softmax over all entries
    Matrix w = ((n.parents[0]->value.array() - m).exp() / s).matrix();
    n.parents[0]->accumulate(w * n.grad(0, 0));
  });
}

Var im2col(const Var& a, const ConvGeom& g) {
  if (a->value.rows() != g.channels || a->value.cols() != g.height * g.width)
    throw ShapeMismatchError("im2col input is not (C, H*W)");
  const Eigen::Index oh = g.out_h(), ow = g.out_w();
  if (oh < 1 || ow < 1) throw ShapeMismatchError("im2col output would be empty");
  Matrix v = Matrix::Zero(g.channels * g.kh * g.kw, oh * ow);
  for (Eigen::Index c = 0; c < g.channels; ++c)
    for (Eigen::Index ki = 0; ki < g.kh; ++ki)
      for (Eigen::Index kj = 0; kj < g.kw; ++kj) {
        const Eigen::Index out_row = (c * g.kh + ki) * g.kw + kj;
        for (Eigen::Index i = 0; i < oh; ++i) {
          const Eigen::Index src_i = i * g.sh - g.ph + ki;
          if (src_i < 0 || src_i >= g.height) continue;
          for (Eigen::Index j = 0; j < ow; ++j) {
            const Eigen::Index src_j = j * g.sw - g.pw + kj;
            if (src_j < 0 || src_j >= g.width) continue;
            v(out_row, i * ow + j) = a->value(c, src_i * g.width + src_j);
          }
        }
      }
  return make_op(std::move(v), {a}, [g](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    const Eigen::Index oh = g.out_h(), ow = g.out_w();
    Matrix grad_in = Matrix::Zero(g.channels, g.height * g.width);
    for (Eigen::Index c = 0; c < g.channels; ++c)
      for (Eigen::Index ki = 0; ki < g.kh; ++ki)
        for (Eigen::Index kj = 0; kj < g.kw; ++kj) {
          const Eigen::Index out_row = (c * g.kh + ki) * g.kw + kj;
          for (Eigen::Index i = 0; i < oh; ++i) {
            const Eigen::Index src_i = i * g.sh - g.ph + ki;
            if (src_i < 0 || src_i >= g.height) continue;
            for (Eigen::Index j = 0; j < ow; ++j) {
              const Eigen::Index src_j = j * g.sw - g.pw + kj;
              if (src_j < 0 || src_j >= g.width) continue;
              grad_in(c, src_i * g.width + src_j) += n.grad(out_row, i * ow + j);
            }
          }
        }
    n.parents[0]->accumulate(grad_in);
  });
}

Var seq_from_chw(const Var& a, Eigen::Index channels, Eigen::Index height, Eigen::Index width) {
  if (a->value.rows() != channels || a->value.cols() != height * width)
    throw ShapeMismatchError("seq_from_chw input is not (C, H*W)");
  Matrix v(height, channels * width);
  for (Eigen::Index h = 0; h < height; ++h)
    for (Eigen::Index c = 0; c < channels; ++c)
      for (Eigen::Index w = 0; w < width; ++w) v(h, c * width + w) = a->value(c, h * width + w);
  return make_op(std::move(v), {a}, [channels, height, width](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Matrix g(channels, height * width);
    for (Eigen::Index h = 0; h < height; ++h)
      for (Eigen::Index c = 0; c < channels; ++c)
        for (Eigen::Index w = 0; w < width; ++w) g(c, h * width + w) = n.grad(h, c * width + w);
    n.parents[0]->accumulate(g);
  });
}

void backward(const Var& root) {
  if (root->value.rows() != 1 || root->value.cols() != 1)
    throw ShapeMismatchError("backward root must be scalar");
  if (!root->requires_grad) return;

  // iterative post-order DFS; topo holds children after all their parents
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  root->accumulate(Matrix::Ones(1, 1));
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.size() != 0) n->backprop(*n);
  }
}

}  // namespace mrtts::ad
