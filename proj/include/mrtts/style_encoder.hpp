#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "mrtts/dsp.hpp"
#include "mrtts/nn.hpp"

namespace mrtts {

// Reference encoder + style-token attention. A mel spectrogram is summarized
// by a strided conv stack and a recurrent layer; the final state queries a
// bank of trainable style tokens through multi-head attention, and the
// combined heads are projected to the fixed style width.
struct StyleEncoderConfig {
  int n_mels = 80;
  std::vector<Eigen::Index> conv_channels = {32, 32, 64, 64, 128, 128};
  Eigen::Index gru_hidden = 128;
  Eigen::Index n_tokens = 10;
  int n_heads = 4;
  Eigen::Index output_dim = 256;
  std::uint64_t seed = 7;

  Eigen::Index token_dim() const { return output_dim / n_heads; }
};

struct StyleAttentionTrace {
  std::vector<nn::Matrix> head_weights;  // per head, 1 x n_tokens simplex
};

class StyleEncoder {
 public:
  explicit StyleEncoder(const StyleEncoderConfig& cfg);

  // mel: T x n_mels. Returns the 1 x output_dim style embedding. Training
  // mode updates normalization running stats; eval mode is a pure function
  // of (mel, params).
  nn::Var encode(const Matrix& mel, bool training, StyleAttentionTrace* trace = nullptr);

  std::vector<nn::Var> encode_set(const std::vector<const Matrix*>& mels, bool training);

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const StyleEncoderConfig& config() const { return cfg_; }

 private:
  StyleEncoderConfig cfg_;
  nn::ParamStore store_;
  std::vector<nn::Conv2d> convs_;
  std::vector<nn::ChannelNorm> norms_;
  nn::GRUCell gru_;
  nn::Var tokens_;  // n_tokens x token_dim
  std::vector<nn::Linear> head_query_;
  std::vector<nn::Linear> head_key_;
  nn::Linear out_proj_;
};

// Snapshot of a trained encoder whose outputs are constants with respect to
// its own parameters: encodes in eval mode and detaches the result, and
// exposes no trainable parameter list.
class FrozenStyleEncoder {
 public:
  explicit FrozenStyleEncoder(const StyleEncoder& source);

  // Always eval-mode; output carries no gradient path.
  nn::Matrix encode(const Matrix& mel) const;

  const StyleEncoderConfig& config() const { return inner_->config(); }
  // Test hook: the internal parameter snapshot (read-only usage expected).
  const nn::ParamStore& snapshot() const { return inner_->params(); }

 private:
  std::unique_ptr<StyleEncoder> inner_;
};

}  // namespace mrtts
