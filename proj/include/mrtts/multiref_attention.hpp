#pragma once

#include <cstdint>
#include <string>

#include "mrtts/nn.hpp"

namespace mrtts {

// Aggregates N per-reference style embeddings into a single style embedding
// with scaled attention against a learned query seed: the query is projected
// from a trainable vector, keys and values from the stacked reference
// embeddings, scores are scaled dot products softmaxed over references.
struct MultiRefAttentionConfig {
  Eigen::Index style_dim = 256;
  Eigen::Index query_dim = 256;  // d_q (query seed width)
  Eigen::Index key_dim = 256;    // d_m (score scale uses sqrt of this)
  Eigen::Index value_dim = 256;  // d_v (= style_dim so E needs no extra map)
  bool pre_score_tanh = false;   // optional shared transform f on Q, K, V
  std::uint64_t seed = 1;
};

struct AttentionTrace {
  nn::Matrix query;    // 1 x d_m
  nn::Matrix keys;     // N x d_m
  nn::Matrix values;   // N x d_v
  nn::Matrix weights;  // 1 x N, simplex
};

class MultiRefAttention {
 public:
  explicit MultiRefAttention(const MultiRefAttentionConfig& cfg);

  // stacked_refs: N x style_dim (graph var). Returns the 1 x value_dim
  // aggregated embedding; fills *trace when non-null.
  nn::Var aggregate(const nn::Var& stacked_refs, AttentionTrace* trace = nullptr) const;

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const MultiRefAttentionConfig& config() const { return cfg_; }

 private:
  MultiRefAttentionConfig cfg_;
  nn::ParamStore store_;
  nn::Var query_seed_;  // 1 x d_q
  nn::Var w_q_;         // d_q x d_m
  nn::Var w_k_;         // style_dim x d_m
  nn::Var w_v_;         // style_dim x d_v
};

// Unweighted mean of the reference embeddings; the combiner used by the
// no-attention system variants.
nn::Var aggregate_mean(const nn::Var& stacked_refs);

}  // namespace mrtts
