#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mrtts/dsp.hpp"
#include "mrtts/nn.hpp"

namespace mrtts {

// Character vocabulary shared with text normalization.
struct CharVocab {
  std::string charset;
  explicit CharVocab(std::string cs);
  int size() const { return static_cast<int>(charset.size()); }
  std::vector<int> encode(const std::string& normalized_text) const;
};

enum class ConditioningMode { None, ConcatBroadcast };

// Desk-scale sequence-to-sequence backbone: character embedding, one conv
// layer plus a bidirectional recurrent layer for the encoder, content-based
// attention and an autoregressive recurrent decoder emitting reduction-factor
// groups of mel frames, plus a stop predictor.
struct AcousticConfig {
  int n_mels = 80;
  Eigen::Index char_embed_dim = 64;
  Eigen::Index encoder_dim = 128;     // bidirectional output width
  Eigen::Index decoder_dim = 256;
  Eigen::Index attention_dim = 128;
  Eigen::Index prev_frame_dim = 64;   // projection of the last emitted frame
  Eigen::Index style_dim = 256;
  int reduction_factor = 2;
  int max_decoder_steps = 200;
  ConditioningMode conditioning = ConditioningMode::ConcatBroadcast;
  std::uint64_t seed = 11;
};

struct SynthesisResult {
  Matrix mel;        // T x n_mels
  Matrix alignment;  // decoder_steps x L, each row a simplex over text positions
  int stop_step = 0;
  bool hit_max_steps = false;
};

struct DecodeLosses {
  nn::Var mel_loss;   // mean squared error over T x n_mels
  nn::Var stop_loss;  // reported separately from the mel reconstruction term
};

class AcousticModel {
 public:
  AcousticModel(const AcousticConfig& cfg, const CharVocab& vocab);

  // L x encoder_dim encoder states for a non-empty id sequence.
  nn::Var encode_text(const std::vector<int>& char_ids, bool training);

  // Broadcast-concat of the style embedding onto every encoder position.
  nn::Var condition(const nn::Var& encoder_outputs, const nn::Var& style) const;

  // Teacher-forced decode against a target mel; returns separate mel and stop
  // losses. `memory` is the (possibly conditioned) encoder output matrix.
  DecodeLosses decode_teacher_forced(const nn::Var& memory, const Matrix& target_mel);

  // Free-running decode; stops on the stop predictor or the step cap.
  SynthesisResult decode_free_running(const nn::Var& memory);

  // Tacotron-free text-to-style prediction head (the text-predicted baseline
  // family): mean-pooled encoder states through a two-layer head.
  nn::Var predict_style_from_text(const nn::Var& encoder_outputs) const;

  nn::ParamStore& params() { return store_; }
  const AcousticConfig& config() const { return cfg_; }
  const CharVocab& vocab() const { return vocab_; }

 private:
  struct StepOutput {
    nn::Var frames;  // r x n_mels
    nn::Var stop_logit;
    nn::Var attention;  // 1 x L
  };
  StepOutput decoder_step(const nn::Var& memory, const nn::Var& memory_proj, nn::Var& state,
                          const nn::Var& prev_frame);

  AcousticConfig cfg_;
  CharVocab vocab_;
  nn::ParamStore store_;

  nn::Var char_table_;
  nn::Conv2d enc_conv_;
  nn::ChannelNorm enc_norm_;
  nn::GRUCell enc_fwd_, enc_bwd_;

  nn::Linear attn_memory_, attn_state_, attn_score_;
  nn::Linear prev_proj_;
  nn::GRUCell dec_cell_;
  nn::Linear frame_out_, stop_out_;
  nn::Linear tpse_hidden_, tpse_out_;
};

}  // namespace mrtts
