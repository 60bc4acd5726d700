#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "mrtts/tensor.hpp"

namespace mrtts::nn {

using ad::ConvGeom;
using ad::Matrix;
using ad::Var;

// Ordered registry of named trainable leaves plus non-trainable buffers
// (normalization running stats). Order is construction order, which makes
// optimizer traversal and checkpoint layout deterministic.
class ParamStore {
 public:
  Var add(const std::string& name, Matrix init);
  Matrix& add_buffer(const std::string& name, Matrix init);

  const std::vector<std::pair<std::string, Var>>& params() const { return params_; }
  std::vector<std::pair<std::string, Matrix*>> buffers();

  void zero_grads();
  std::size_t param_count() const;

  // Copies values (params and buffers) from another store with identical layout.
  void copy_values_from(const ParamStore& other);

 private:
  std::vector<std::pair<std::string, Var>> params_;
  // deque keeps buffer addresses stable while layers hold pointers into it
  std::deque<std::pair<std::string, Matrix>> buffers_;
};

double uniform_bound(std::size_t fan_in);
Matrix uniform_init(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double bound);

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out,
         std::mt19937_64& rng, bool zero_init = false);
  Var forward(const Var& x) const;  // x: RxIn -> RxOut

  Var weight, bias;
};

// 2-d convolution over a (C, H*W) feature map via im2col.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, Eigen::Index in_ch, Eigen::Index out_ch,
         Eigen::Index kh, Eigen::Index kw, Eigen::Index sh, Eigen::Index sw, Eigen::Index ph,
         Eigen::Index pw, std::mt19937_64& rng);
  // Returns (out_ch, OH*OW); callers track spatial dims through geometry().
  Var forward(const Var& x, Eigen::Index height, Eigen::Index width) const;
  ConvGeom geometry(Eigen::Index height, Eigen::Index width) const;

  Var weight, bias;  // weight: (out_ch, in_ch*kh*kw), bias: (out_ch, 1)
  Eigen::Index in_ch = 0, out_ch = 0, kh = 0, kw = 0, sh = 0, sw = 0, ph = 0, pw = 0;
};

// Per-channel normalization over the spatial axis of a (C, S) map. Training
// mode normalizes with the current sample's statistics and updates running
// stats; eval mode applies the stored running stats, so eval encodes are pure
// functions of (input, params).
class ChannelNorm {
 public:
  ChannelNorm() = default;
  ChannelNorm(ParamStore& store, const std::string& name, Eigen::Index channels,
              double momentum = 0.9, double eps = 1e-5);
  Var forward(const Var& x, bool training);

  Var gamma, beta;
  Matrix* running_mean = nullptr;
  Matrix* running_var = nullptr;
  double momentum = 0.9, eps = 1e-5;
};

class GRUCell {
 public:
  GRUCell() = default;
  GRUCell(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index hidden,
          std::mt19937_64& rng);
  Var step(const Var& x, const Var& h) const;  // x: 1xIn, h: 1xH -> 1xH
  Var initial_state() const;

  Eigen::Index hidden = 0;
  Linear xz, hz, xr, hr, xn, hn;
};

// Runs a GRU over the rows of a TxIn matrix; returns all states stacked TxH.
Var gru_sequence(const GRUCell& cell, const Var& seq);
// Forward + backward passes concatenated per step: TxIn -> Tx(2H).
Var bigru_sequence(const GRUCell& fwd, const GRUCell& bwd, const Var& seq);

// Feed-forward stack used for the MI statistics network and small heads.
class MLP {
 public:
  enum class Activation { Tanh, Relu, Elu };

  MLP() = default;
  MLP(ParamStore& store, const std::string& name, Eigen::Index in,
      const std::vector<Eigen::Index>& hidden, Eigen::Index out, Activation act,
      std::mt19937_64& rng, bool zero_init_output = false);
  // When detach_params is set the weights enter the graph as constants, so
  // gradients flow to the input but never to the layer parameters.
  Var forward(const Var& x, bool detach_params = false) const;

  std::vector<Linear> layers;
  Activation activation = Activation::Tanh;
};

class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                double clip_norm = 0.0)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), clip_norm_(clip_norm) {}

  // Applies one update from accumulated gradients, then zeroes them. The
  // norm clip is global across all stores passed together.
  void step(ParamStore& store);
  void step(const std::vector<ParamStore*>& stores);
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_, clip_norm_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

// Plain gradient step (ascent when lr negative is not used; pass the signed
// objective instead). Zeroes gradients afterwards.
void sgd_step(ParamStore& store, double lr, double clip_norm = 0.0);

}  // namespace mrtts::nn
