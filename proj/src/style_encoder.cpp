#include "mrtts/style_encoder.hpp"

#include <cmath>

#include "mrtts/errors.hpp"

namespace mrtts {

using namespace ad;

StyleEncoder::StyleEncoder(const StyleEncoderConfig& cfg) : cfg_(cfg) {
  if (cfg.output_dim % cfg.n_heads != 0)
    throw ConfigMismatchError("style output_dim must divide across heads");
  std::mt19937_64 rng(cfg.seed);

  Eigen::Index in_ch = 1;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const Eigen::Index out_ch = cfg.conv_channels[i];
    convs_.emplace_back(store_, "se.conv" + std::to_string(i), in_ch, out_ch, 3, 3, 2, 2, 1, 1,
                        rng);
    norms_.emplace_back(store_, "se.norm" + std::to_string(i), out_ch);
    in_ch = out_ch;
  }

  // spatial width after the stride-2 stack
  Eigen::Index w = cfg.n_mels;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) w = (w + 2 - 3) / 2 + 1;
  gru_ = nn::GRUCell(store_, "se.gru", in_ch * w, cfg.gru_hidden, rng);

  tokens_ = store_.add("se.tokens", nn::uniform_init(rng, cfg.n_tokens, cfg.token_dim(), 0.5));
  for (int h = 0; h < cfg.n_heads; ++h) {
    head_query_.emplace_back(store_, "se.head" + std::to_string(h) + ".q", cfg.gru_hidden,
                             cfg.token_dim(), rng);
    head_key_.emplace_back(store_, "se.head" + std::to_string(h) + ".k", cfg.token_dim(),
                           cfg.token_dim(), rng);
  }
  out_proj_ = nn::Linear(store_, "se.out", cfg.output_dim, cfg.output_dim, rng);
}

Var StyleEncoder::encode(const Matrix& mel, bool training, StyleAttentionTrace* trace) {
  if (mel.rows() < 1) throw ShapeMismatchError("mel has no frames");
  if (mel.cols() != cfg_.n_mels)
    throw ShapeMismatchError("mel has " + std::to_string(mel.cols()) + " channels, expected " +
                             std::to_string(cfg_.n_mels));
  if (!mel.allFinite()) throw NonFiniteError("style encoder input");

  // (1, T*n_mels) single-channel image, row-major spatial layout
  Eigen::Index height = mel.rows(), width = mel.cols();
  Matrix flat(1, height * width);
  for (Eigen::Index t = 0; t < height; ++t)
    for (Eigen::Index m = 0; m < width; ++m) flat(0, t * width + m) = mel(t, m);
  Var x = constant(flat);

  for (std::size_t i = 0; i < convs_.size(); ++i) {
    auto geom = convs_[i].geometry(height, width);
    x = convs_[i].forward(x, height, width);
    x = norms_[i].forward(x, training);
    x = relu_(x);
    height = geom.out_h();
    width = geom.out_w();
  }
  if (!x->value.allFinite()) throw NonFiniteError("style encoder conv stack");

  Var seq = seq_from_chw(x, convs_.back().out_ch, height, width);
  Var h = gru_.initial_state();
  for (Eigen::Index t = 0; t < seq->value.rows(); ++t) h = gru_.step(slice_rows(seq, t, 1), h);

  // multi-head content attention over the token bank
  Var token_values = tanh_(tokens_);  // n_tokens x token_dim
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.token_dim()));
  std::vector<Var> heads;
  if (trace) trace->head_weights.clear();
  for (int head = 0; head < cfg_.n_heads; ++head) {
    Var q = head_query_[static_cast<std::size_t>(head)].forward(h);             // 1 x token_dim
    Var k = head_key_[static_cast<std::size_t>(head)].forward(token_values);    // n_tokens x d
    Var logits = mul_scalar(matmul(q, transpose(k)), scale);                    // 1 x n_tokens
    Var w = softmax_rows(logits);
    if (trace) trace->head_weights.push_back(w->value);
    heads.push_back(matmul(w, token_values));  // 1 x token_dim
  }
  Var combined = heads[0];
  for (std::size_t i = 1; i < heads.size(); ++i) combined = concat_cols(combined, heads[i]);
  Var out = out_proj_.forward(combined);
  if (!out->value.allFinite()) throw NonFiniteError("style embedding");
  return out;
}

std::vector<Var> StyleEncoder::encode_set(const std::vector<const Matrix*>& mels, bool training) {
  if (mels.empty()) throw PreconditionError("encode_set needs at least one mel");
  std::vector<Var> out;
  out.reserve(mels.size());
  for (const Matrix* m : mels) out.push_back(encode(*m, training));
  return out;
}

FrozenStyleEncoder::FrozenStyleEncoder(const StyleEncoder& source)
    : inner_(std::make_unique<StyleEncoder>(source.config())) {
  inner_->params().copy_values_from(source.params());
}

nn::Matrix FrozenStyleEncoder::encode(const Matrix& mel) const {
  Var e = inner_->encode(mel, /*training=*/false);
  return e->value;
}

}  // namespace mrtts
