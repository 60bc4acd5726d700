#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mrtts/corpus.hpp"
#include "mrtts/embedder.hpp"

namespace mrtts {

using Vector = Eigen::VectorXd;

struct SentenceEmbedding {
  std::string utterance_id;
  Vector vector;
};

struct EmbeddingCache {
  std::string embedder_name;
  int dimension = 0;
  std::map<std::string, Vector> by_id;

  const Vector& at(const std::string& id) const;
};

struct SelectionConfig {
  int n_references = 3;
  bool exclude_target = true;
  // Candidate pool; empty means "every id in the cache".
  std::set<std::string> pool;
};

struct ReferenceSet {
  std::string target_id;
  std::vector<std::pair<std::string, double>> references;  // descending similarity
};

using SelectionIndex = std::map<std::string, ReferenceSet>;

// Sentence embedding = mean over non-sentinel tokens of the second-to-last
// hidden layer.
Vector sentence_embedding(const TokenStates& states, const std::string& text);

// Embeds each (id, text) pair; all vectors share the embedder's dimension.
EmbeddingCache embed_sentences(const std::vector<std::pair<std::string, std::string>>& id_texts,
                               const ContextualSentenceEmbedder& embedder);
EmbeddingCache embed_manifest(const Manifest& manifest,
                              const ContextualSentenceEmbedder& embedder);

double cosine_similarity(const Vector& a, const Vector& b);

// Exact top-N by cosine similarity against the target's cached embedding.
// Ties break by ascending utterance id.
ReferenceSet select_references(const std::string& target_id, const EmbeddingCache& cache,
                               const SelectionConfig& cfg);

// Same search, but for a query vector that has no id in the pool (inference
// text). exclude_ids removes specific utterances from the pool.
ReferenceSet select_references_for_vector(const Vector& query, const EmbeddingCache& cache,
                                          const SelectionConfig& cfg,
                                          const std::set<std::string>& exclude_ids = {});

SelectionIndex build_selection_index(const Manifest& manifest, const EmbeddingCache& cache,
                                     const SelectionConfig& cfg);

// Persistence. Cache: header (embedder, dimension, count) + one id/vector per
// line. Index: target_id|ref1:sim1|...|refN:simN.
void save_embedding_cache(const std::filesystem::path& path, const EmbeddingCache& cache);
EmbeddingCache load_embedding_cache(const std::filesystem::path& path);
void save_selection_index(const std::filesystem::path& path, const SelectionIndex& index);
SelectionIndex load_selection_index(const std::filesystem::path& path);

}  // namespace mrtts
