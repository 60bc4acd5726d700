#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace mrtts {

// Per-token hidden states from a contextual sentence encoder. layers[l] is
// (n_tokens x dim); layer order is bottom-up, so the second-to-last entry is
// the one averaged into the sentence embedding. Sentinel tokens (aggregate
// classification markers) are flagged so they can be excluded.
struct TokenStates {
  std::vector<std::string> tokens;
  std::vector<bool> sentinel;
  std::vector<Eigen::MatrixXd> layers;
};

class ContextualSentenceEmbedder {
 public:
  virtual ~ContextualSentenceEmbedder() = default;
  virtual std::string name() const = 0;
  virtual int dimension() const = 0;
  virtual TokenStates token_hidden_states(const std::string& text) const = 0;
};

// Deterministic test embedder: every token's hidden vector is derived from a
// hash of the token string, so equal words agree across sentences and the
// cosine geometry clusters sentences by shared vocabulary. Emits two layers
// (the last one deliberately transformed) plus a leading sentinel token.
class HashEmbedder : public ContextualSentenceEmbedder {
 public:
  explicit HashEmbedder(int dimension = 48, std::uint64_t seed = 0x5eed);
  std::string name() const override;
  int dimension() const override { return dim_; }
  TokenStates token_hidden_states(const std::string& text) const override;

 private:
  int dim_;
  std::uint64_t seed_;
};

// Loads per-token hidden states exported offline by a real contextual model.
// See docs in the loader for the file layout.
class FileEmbedder : public ContextualSentenceEmbedder {
 public:
  explicit FileEmbedder(const std::filesystem::path& path);
  std::string name() const override { return name_; }
  int dimension() const override { return dim_; }
  TokenStates token_hidden_states(const std::string& text) const override;

 private:
  std::string name_;
  int dim_ = 0;
  int layers_ = 0;
  std::vector<std::pair<std::string, TokenStates>> entries_;
};

// Instantiates an embedder from a cache/provenance name: "toy-hash-v1:<dim>"
// or "file:<path>".
std::unique_ptr<ContextualSentenceEmbedder> make_embedder(const std::string& spec);

}  // namespace mrtts
