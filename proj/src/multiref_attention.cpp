#include "mrtts/multiref_attention.hpp"

#include <cmath>

#include "mrtts/errors.hpp"

namespace mrtts {

using namespace ad;

MultiRefAttention::MultiRefAttention(const MultiRefAttentionConfig& cfg) : cfg_(cfg) {
  std::mt19937_64 rng(cfg.seed);
  const double bq = nn::uniform_bound(static_cast<std::size_t>(cfg.query_dim));
  query_seed_ = store_.add("mra.query_seed", nn::uniform_init(rng, 1, cfg.query_dim, bq));
  w_q_ = store_.add("mra.w_q", nn::uniform_init(rng, cfg.query_dim, cfg.key_dim, bq));
  const double bk = nn::uniform_bound(static_cast<std::size_t>(cfg.style_dim));
  w_k_ = store_.add("mra.w_k", nn::uniform_init(rng, cfg.style_dim, cfg.key_dim, bk));
  w_v_ = store_.add("mra.w_v", nn::uniform_init(rng, cfg.style_dim, cfg.value_dim, bk));
}

Var MultiRefAttention::aggregate(const Var& stacked_refs, AttentionTrace* trace) const {
  if (stacked_refs->value.rows() < 1) throw DimensionMismatchError("empty reference set");
  if (stacked_refs->value.cols() != cfg_.style_dim)
    throw DimensionMismatchError("reference embeddings are " +
                                 std::to_string(stacked_refs->value.cols()) + "-dim, expected " +
                                 std::to_string(cfg_.style_dim));

  Var q = matmul(query_seed_, w_q_);   // 1 x d_m
  Var k = matmul(stacked_refs, w_k_);  // N x d_m
  Var v = matmul(stacked_refs, w_v_);  // N x d_v
  if (cfg_.pre_score_tanh) {
    q = tanh_(q);
    k = tanh_(k);
    v = tanh_(v);
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.key_dim));
  Var logits = mul_scalar(matmul(q, transpose(k)), scale);  // 1 x N
  if (!logits->value.allFinite()) throw NonFiniteError("attention scores");
  Var weights = softmax_rows(logits);
  Var out = matmul(weights, v);  // 1 x d_v

  if (trace) {
    trace->query = q->value;
    trace->keys = k->value;
    trace->values = v->value;
    trace->weights = weights->value;
  }
  return out;
}

Var aggregate_mean(const Var& stacked_refs) {
  if (stacked_refs->value.rows() < 1) throw DimensionMismatchError("empty reference set");
  return col_mean(stacked_refs);
}

}  // namespace mrtts
