#include "mrtts/acoustic.hpp"

#include <cmath>

#include "mrtts/errors.hpp"

namespace mrtts {

using namespace ad;

CharVocab::CharVocab(std::string cs) : charset(std::move(cs)) {
  if (charset.empty()) throw VocabularyError("empty charset");
}

std::vector<int> CharVocab::encode(const std::string& normalized_text) const {
  if (normalized_text.empty()) throw VocabularyError("empty text sequence");
  std::vector<int> ids;
  ids.reserve(normalized_text.size());
  for (char c : normalized_text) {
    auto pos = charset.find(c);
    if (pos == std::string::npos)
      throw VocabularyError(std::string("character '") + c + "' outside charset");
    ids.push_back(static_cast<int>(pos));
  }
  return ids;
}

AcousticModel::AcousticModel(const AcousticConfig& cfg, const CharVocab& vocab)
    : cfg_(cfg), vocab_(vocab) {
  std::mt19937_64 rng(cfg.seed);

  char_table_ = store_.add(
      "ac.char_table", nn::uniform_init(rng, vocab_.size(), cfg.char_embed_dim, 0.5));
  enc_conv_ = nn::Conv2d(store_, "ac.enc_conv", cfg.char_embed_dim, cfg.encoder_dim, 5, 1, 1, 1,
                         2, 0, rng);
  enc_norm_ = nn::ChannelNorm(store_, "ac.enc_norm", cfg.encoder_dim);
  enc_fwd_ = nn::GRUCell(store_, "ac.enc_fwd", cfg.encoder_dim, cfg.encoder_dim / 2, rng);
  enc_bwd_ = nn::GRUCell(store_, "ac.enc_bwd", cfg.encoder_dim, cfg.encoder_dim / 2, rng);

  const Eigen::Index mem_dim =
      cfg.conditioning == ConditioningMode::ConcatBroadcast ? cfg.encoder_dim + cfg.style_dim
                                                            : cfg.encoder_dim;
  attn_memory_ = nn::Linear(store_, "ac.attn_mem", mem_dim, cfg.attention_dim, rng);
  attn_state_ = nn::Linear(store_, "ac.attn_state", cfg.decoder_dim, cfg.attention_dim, rng);
  attn_score_ = nn::Linear(store_, "ac.attn_score", cfg.attention_dim, 1, rng);
  prev_proj_ = nn::Linear(store_, "ac.prev_proj", cfg.n_mels, cfg.prev_frame_dim, rng);
  dec_cell_ = nn::GRUCell(store_, "ac.dec", mem_dim + cfg.prev_frame_dim, cfg.decoder_dim, rng);
  frame_out_ = nn::Linear(store_, "ac.frame_out", cfg.decoder_dim + mem_dim,
                          cfg.n_mels * cfg.reduction_factor, rng);
  stop_out_ = nn::Linear(store_, "ac.stop_out", cfg.decoder_dim + mem_dim, 1, rng);

  tpse_hidden_ = nn::Linear(store_, "ac.tpse_hidden", cfg.encoder_dim, cfg.style_dim, rng);
  tpse_out_ = nn::Linear(store_, "ac.tpse_out", cfg.style_dim, cfg.style_dim, rng);
}

Var AcousticModel::encode_text(const std::vector<int>& char_ids, bool training) {
  if (char_ids.empty()) throw VocabularyError("empty text sequence");
  const auto len = static_cast<Eigen::Index>(char_ids.size());

  Var emb = gather_rows(char_table_, char_ids);  // L x emb
  // conv over the character axis: (emb, L) single-column image
  Var chw = transpose(emb);
  Var conv = enc_conv_.forward(chw, len, 1);
  conv = enc_norm_.forward(conv, training);
  conv = relu_(conv);
  Var seq = seq_from_chw(conv, cfg_.encoder_dim, len, 1);  // back to L x enc_dim... (H=L, W=1)
  return nn::bigru_sequence(enc_fwd_, enc_bwd_, seq);
}

Var AcousticModel::condition(const Var& encoder_outputs, const Var& style) const {
  if (style->value.rows() != 1 || style->value.cols() != cfg_.style_dim)
    throw DimensionMismatchError("style embedding must be 1x" + std::to_string(cfg_.style_dim));
  Var tiled = tile_rows(style, encoder_outputs->value.rows());
  return concat_cols(encoder_outputs, tiled);
}

AcousticModel::StepOutput AcousticModel::decoder_step(const Var& memory, const Var& memory_proj,
                                                      Var& state, const Var& prev_frame) {
  Var state_proj = attn_state_.forward(state);  // 1 x attn_dim
  Var energies = attn_score_.forward(tanh_(add_row_broadcast(memory_proj, state_proj)));  // L x 1
  Var attention = softmax_rows(transpose(energies));  // 1 x L
  Var context = matmul(attention, memory);            // 1 x mem_dim

  Var prev = relu_(prev_proj_.forward(prev_frame));
  Var x = concat_cols(context, prev);
  state = dec_cell_.step(x, state);

  Var hc = concat_cols(state, context);
  Var flat = frame_out_.forward(hc);  // 1 x (n_mels * r)
  std::vector<Var> rows;
  for (int r = 0; r < cfg_.reduction_factor; ++r)
    rows.push_back(slice_cols(flat, static_cast<Eigen::Index>(r) * cfg_.n_mels, cfg_.n_mels));

  StepOutput out;
  out.frames = concat_rows(rows);
  out.stop_logit = stop_out_.forward(hc);
  out.attention = attention;
  return out;
}

DecodeLosses AcousticModel::decode_teacher_forced(const Var& memory, const Matrix& target_mel) {
  if (target_mel.rows() < 1 || target_mel.cols() != cfg_.n_mels)
    throw ShapeMismatchError("teacher-forcing target mel");
  const Eigen::Index t_len = target_mel.rows();
  const int r = cfg_.reduction_factor;
  const Eigen::Index steps = (t_len + r - 1) / r;

  Var memory_proj = attn_memory_.forward(memory);
  Var state = dec_cell_.initial_state();
  std::vector<Var> groups, stop_logits;
  for (Eigen::Index s = 0; s < steps; ++s) {
    Var prev = s == 0 ? constant(Matrix::Zero(1, cfg_.n_mels))
                      : constant(Matrix(target_mel.row(s * r - 1)));
    StepOutput step = decoder_step(memory, memory_proj, state, prev);
    groups.push_back(step.frames);
    stop_logits.push_back(step.stop_logit);
  }
  Var predicted = concat_rows(groups);
  if (predicted->value.rows() > t_len) predicted = slice_rows(predicted, 0, t_len);

  Var diff = sub(predicted, constant(target_mel));
  DecodeLosses losses;
  losses.mel_loss = mean_all(mul(diff, diff));

  // binary cross-entropy on the stop track: 1 only at the final step
  Matrix stop_targets = Matrix::Zero(steps, 1);
  stop_targets(steps - 1, 0) = 1.0;
  Var logits = concat_rows(stop_logits);
  Var bce = sub(softplus_(logits), mul(logits, constant(stop_targets)));
  losses.stop_loss = mean_all(bce);
  return losses;
}

SynthesisResult AcousticModel::decode_free_running(const Var& memory) {
  const int r = cfg_.reduction_factor;
  const Eigen::Index step_cap = (cfg_.max_decoder_steps + r - 1) / r;

  Var memory_proj = attn_memory_.forward(memory);
  Var state = dec_cell_.initial_state();
  Var prev = constant(Matrix::Zero(1, cfg_.n_mels));

  std::vector<Matrix> frames;
  std::vector<Matrix> align_rows;
  bool stopped = false;
  for (Eigen::Index s = 0; s < step_cap && !stopped; ++s) {
    StepOutput step = decoder_step(memory, memory_proj, state, prev);
    frames.push_back(step.frames->value);
    align_rows.push_back(step.attention->value);
    prev = constant(Matrix(step.frames->value.row(step.frames->value.rows() - 1)));
    const double stop_prob = 1.0 / (1.0 + std::exp(-step.stop_logit->scalar()));
    if (stop_prob > 0.5) stopped = true;
  }

  SynthesisResult out;
  Eigen::Index total = static_cast<Eigen::Index>(frames.size()) * r;
  Eigen::Index t_len = std::min<Eigen::Index>(total, cfg_.max_decoder_steps);
  out.mel.resize(t_len, cfg_.n_mels);
  for (Eigen::Index i = 0; i < t_len; ++i) out.mel.row(i) = frames[static_cast<std::size_t>(i / r)].row(i % r);
  out.alignment.resize(static_cast<Eigen::Index>(align_rows.size()), memory->value.rows());
  for (std::size_t i = 0; i < align_rows.size(); ++i)
    out.alignment.row(static_cast<Eigen::Index>(i)) = align_rows[i];
  out.stop_step = static_cast<int>(t_len);
  out.hit_max_steps = !stopped;
  return out;
}

Var AcousticModel::predict_style_from_text(const Var& encoder_outputs) const {
  if (encoder_outputs->value.rows() < 1) throw DimensionMismatchError("empty encoder outputs");
  Var pooled = col_mean(encoder_outputs);
  return tpse_out_.forward(relu_(tpse_hidden_.forward(pooled)));
}

}  // namespace mrtts
