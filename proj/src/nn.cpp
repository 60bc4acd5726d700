#include "mrtts/nn.hpp"

#include <cmath>

#include "mrtts/errors.hpp"

namespace mrtts::nn {

using namespace ad;

Var ParamStore::add(const std::string& name, Matrix init) {
  for (const auto& [n, _] : params_)
    if (n == name) throw ConfigMismatchError("duplicate parameter name: " + name);
  Var p = param(std::move(init));
  params_.emplace_back(name, p);
  return p;
}

Matrix& ParamStore::add_buffer(const std::string& name, Matrix init) {
  buffers_.emplace_back(name, std::move(init));
  return buffers_.back().second;
}

std::vector<std::pair<std::string, Matrix*>> ParamStore::buffers() {
  std::vector<std::pair<std::string, Matrix*>> out;
  out.reserve(buffers_.size());
  for (auto& [n, m] : buffers_) out.emplace_back(n, &m);
  return out;
}

void ParamStore::zero_grads() {
  for (auto& [_, p] : params_) p->zero_grad();
}

std::size_t ParamStore::param_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.params_.size() != params_.size() || other.buffers_.size() != buffers_.size())
    throw ConfigMismatchError("parameter store layouts differ");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].first != other.params_[i].first)
      throw ConfigMismatchError("parameter name mismatch: " + params_[i].first);
    params_[i].second->value = other.params_[i].second->value;
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) buffers_[i].second = other.buffers_[i].second;
}

double uniform_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

Matrix uniform_init(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

Linear::Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
               std::mt19937_64& rng, bool zero_init) {
  double b = uniform_bound(static_cast<std::size_t>(in));
  weight = store.add(name + ".weight",
                     zero_init ? Matrix::Zero(in, out) : uniform_init(rng, in, out, b));
  bias = store.add(name + ".bias", Matrix::Zero(1, out));
}

Var Linear::forward(const Var& x) const { return add_row_broadcast(matmul(x, weight), bias); }

Conv2d::Conv2d(ParamStore& store, const std::string& name, Eigen::Index in_ch_,
               Eigen::Index out_ch_, Eigen::Index kh_, Eigen::Index kw_, Eigen::Index sh_,
               Eigen::Index sw_, Eigen::Index ph_, Eigen::Index pw_, std::mt19937_64& rng)
    : in_ch(in_ch_), out_ch(out_ch_), kh(kh_), kw(kw_), sh(sh_), sw(sw_), ph(ph_), pw(pw_) {
  double b = uniform_bound(static_cast<std::size_t>(in_ch * kh * kw));
  weight = store.add(name + ".weight", uniform_init(rng, out_ch, in_ch * kh * kw, b));
  bias = store.add(name + ".bias", Matrix::Zero(out_ch, 1));
}

ConvGeom Conv2d::geometry(Eigen::Index height, Eigen::Index width) const {
  return ConvGeom{in_ch, height, width, kh, kw, sh, sw, ph, pw};
}

Var Conv2d::forward(const Var& x, Eigen::Index height, Eigen::Index width) const {
  Var cols = im2col(x, geometry(height, width));
  return add_col_broadcast(matmul(weight, cols), bias);
}

ChannelNorm::ChannelNorm(ParamStore& store, const std::string& name, Eigen::Index channels,
                         double momentum_, double eps_)
    : momentum(momentum_), eps(eps_) {
  gamma = store.add(name + ".gamma", Matrix::Ones(channels, 1));
  beta = store.add(name + ".beta", Matrix::Zero(channels, 1));
  running_mean = &store.add_buffer(name + ".running_mean", Matrix::Zero(channels, 1));
  running_var = &store.add_buffer(name + ".running_var", Matrix::Ones(channels, 1));
}

Var ChannelNorm::forward(const Var& x, bool training) {
  Var centered, inv_std;
  if (training) {
    Var mu = row_mean(x);
    centered = sub_col_broadcast(x, mu);
    Var var = row_mean(mul(centered, centered));
    inv_std = powc(add_scalar(var, eps), -0.5);
    *running_mean = momentum * *running_mean + (1.0 - momentum) * mu->value;
    *running_var = momentum * *running_var + (1.0 - momentum) * var->value;
  } else {
    centered = sub_col_broadcast(x, constant(*running_mean));
    Matrix inv = (running_var->array() + eps).pow(-0.5);
    inv_std = constant(inv);
  }
  Var norm = mul_col_broadcast(centered, inv_std);
  return add_col_broadcast(mul_col_broadcast(norm, gamma), beta);
}

GRUCell::GRUCell(ParamStore& store, const std::string& name, Eigen::Index in,
                 Eigen::Index hidden_, std::mt19937_64& rng)
    : hidden(hidden_),
      xz(store, name + ".xz", in, hidden_, rng),
      hz(store, name + ".hz", hidden_, hidden_, rng),
      xr(store, name + ".xr", in, hidden_, rng),
      hr(store, name + ".hr", hidden_, hidden_, rng),
      xn(store, name + ".xn", in, hidden_, rng),
      hn(store, name + ".hn", hidden_, hidden_, rng) {}

Var GRUCell::initial_state() const { return constant(Matrix::Zero(1, hidden)); }

Var GRUCell::step(const Var& x, const Var& h) const {
  Var z = sigmoid_(add(xz.forward(x), hz.forward(h)));
  Var r = sigmoid_(add(xr.forward(x), hr.forward(h)));
  Var n = tanh_(add(xn.forward(x), hn.forward(mul(r, h))));
  Var keep = mul(sub(constant(Matrix::Ones(1, hidden)), z), h);
  return add(keep, mul(z, n));
}

Var gru_sequence(const GRUCell& cell, const Var& seq) {
  Var h = cell.initial_state();
  std::vector<Var> states;
  states.reserve(static_cast<std::size_t>(seq->value.rows()));
  for (Eigen::Index t = 0; t < seq->value.rows(); ++t) {
    h = cell.step(slice_rows(seq, t, 1), h);
    states.push_back(h);
  }
  return concat_rows(states);
}

Var bigru_sequence(const GRUCell& fwd, const GRUCell& bwd, const Var& seq) {
  const Eigen::Index t_len = seq->value.rows();
  std::vector<Var> f(static_cast<std::size_t>(t_len)), b(static_cast<std::size_t>(t_len));
  Var h = fwd.initial_state();
  for (Eigen::Index t = 0; t < t_len; ++t) {
    h = fwd.step(slice_rows(seq, t, 1), h);
    f[static_cast<std::size_t>(t)] = h;
  }
  h = bwd.initial_state();
  for (Eigen::Index t = t_len - 1; t >= 0; --t) {
    h = bwd.step(slice_rows(seq, t, 1), h);
    b[static_cast<std::size_t>(t)] = h;
  }
  std::vector<Var> rows;
  rows.reserve(static_cast<std::size_t>(t_len));
  for (Eigen::Index t = 0; t < t_len; ++t)
    rows.push_back(concat_cols(f[static_cast<std::size_t>(t)], b[static_cast<std::size_t>(t)]));
  return concat_rows(rows);
}

MLP::MLP(ParamStore& store, const std::string& name, Eigen::Index in,
         const std::vector<Eigen::Index>& hidden, Eigen::Index out, Activation act,
         std::mt19937_64& rng, bool zero_init_output)
    : activation(act) {
  Eigen::Index prev = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers.emplace_back(store, name + ".h" + std::to_string(i), prev, hidden[i], rng);
    prev = hidden[i];
  }
  layers.emplace_back(store, name + ".out", prev, out, rng, zero_init_output);
}

Var MLP::forward(const Var& x, bool detach_params) const {
  auto apply = [&](const Linear& l, const Var& v) {
    if (!detach_params) return l.forward(v);
    return add_row_broadcast(matmul(v, detach(l.weight)), detach(l.bias));
  };
  Var h = x;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    h = apply(layers[i], h);
    switch (activation) {
      case Activation::Tanh: h = tanh_(h); break;
      case Activation::Relu: h = relu_(h); break;
      case Activation::Elu: h = elu_(h); break;
    }
  }
  return apply(layers.back(), h);
}

namespace {

double grad_global_norm(const std::vector<ParamStore*>& stores) {
  double sq = 0.0;
  for (ParamStore* store : stores)
    for (const auto& [_, p] : store->params())
      if (p->grad.size() != 0) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

}  // namespace

void Adam::step(ParamStore& store) { step(std::vector<ParamStore*>{&store}); }

void Adam::step(const std::vector<ParamStore*>& stores) {
  std::vector<Var> params;
  for (ParamStore* store : stores)
    for (const auto& [_, p] : store->params()) params.push_back(p);

  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.emplace_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw ConfigMismatchError("optimizer/param store size drift");

  double scale = 1.0;
  if (clip_norm_ > 0.0) {
    double norm = grad_global_norm(stores);
    if (norm > clip_norm_) scale = clip_norm_ / norm;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p->grad.size() == 0) continue;
    Matrix g = p->grad * scale;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    Matrix mhat = m_[i] / bc1;
    Matrix vhat = v_[i] / bc2;
    p->value -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
  }
  for (ParamStore* store : stores) store->zero_grads();
}

void sgd_step(ParamStore& store, double lr, double clip_norm) {
  double scale = 1.0;
  if (clip_norm > 0.0) {
    double norm = grad_global_norm({&store});
    if (norm > clip_norm) scale = clip_norm / norm;
  }
  for (const auto& [_, p] : store.params()) {
    if (p->grad.size() == 0) continue;
    p->value -= lr * scale * p->grad;
  }
  store.zero_grads();
}

}  // namespace mrtts::nn
