#include "mrtts/embedder.hpp"

#include <cmath>
#include <random>

#include "mrtts/errors.hpp"
#include "mrtts/util.hpp"

namespace mrtts {

HashEmbedder::HashEmbedder(int dimension, std::uint64_t seed) : dim_(dimension), seed_(seed) {
  if (dimension < 1) throw PreconditionError("embedder dimension must be >= 1");
}

std::string HashEmbedder::name() const {
  return "toy-hash-v1:" + std::to_string(dim_) + ":" + std::to_string(seed_);
}

TokenStates HashEmbedder::token_hidden_states(const std::string& text) const {
  TokenStates out;
  std::vector<std::string> words = split_words(text);
  out.tokens.push_back("<agg>");
  out.sentinel.push_back(true);
  for (auto& w : words) {
    out.tokens.push_back(w);
    out.sentinel.push_back(false);
  }
  const auto n = static_cast<Eigen::Index>(out.tokens.size());
  Eigen::MatrixXd penultimate(n, dim_), last(n, dim_);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(seed_, out.tokens[static_cast<std::size_t>(i)]));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int d = 0; d < dim_; ++d) {
      double v = gauss(rng);
      penultimate(i, d) = v;
      last(i, d) = std::tanh(v) + 0.25;  // distinct from the averaged layer
    }
  }
  out.layers = {std::move(penultimate), std::move(last)};
  return out;
}

// File layout (text, UTF-8):
//   MRTTS-TOKENS 1
//   name=<embedder name>
//   dimension=<d>
//   layers=<L>            (L >= 2)
//   texts=<n>
// then per text:
//   text=<normalized text>
//   tokens=<k>
// then k token blocks, each:
//   token=<string> sentinel=<0|1>
//   L lines of d whitespace-separated doubles (layer 0 .. L-1)
FileEmbedder::FileEmbedder(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  std::size_t i = 0;
  auto need = [&](const char* what) -> const std::string& {
    if (i >= lines.size())
      throw MalformedRecordError(path.string(), lines.size(), std::string("expected ") + what);
    return lines[i++];
  };
  auto field = [&](const std::string& line, const std::string& key) {
    auto kv = split(line, '=');
    if (kv.size() < 2 || kv[0] != key)
      throw MalformedRecordError(path.string(), i, "expected " + key + "=...");
    std::string rest = line.substr(key.size() + 1);
    return rest;
  };

  if (need("header") != "MRTTS-TOKENS 1")
    throw MalformedRecordError(path.string(), 1, "bad token-states header");
  name_ = field(need("name"), "name");
  dim_ = static_cast<int>(std::stol(field(need("dimension"), "dimension")));
  layers_ = static_cast<int>(std::stol(field(need("layers"), "layers")));
  long texts = std::stol(field(need("texts"), "texts"));
  if (dim_ < 1 || layers_ < 2)
    throw MalformedRecordError(path.string(), 4, "need dimension >= 1 and layers >= 2");

  for (long t = 0; t < texts; ++t) {
    std::string text = field(need("text"), "text");
    long k = std::stol(field(need("tokens"), "tokens"));
    TokenStates ts;
    for (int l = 0; l < layers_; ++l)
      ts.layers.emplace_back(Eigen::MatrixXd::Zero(k, dim_));
    for (long tok = 0; tok < k; ++tok) {
      auto meta = split_words(need("token line"));
      if (meta.size() < 2 || meta[0].rfind("token=", 0) != 0 ||
          meta[1].rfind("sentinel=", 0) != 0)
        throw MalformedRecordError(path.string(), i, "expected token=... sentinel=...");
      ts.tokens.push_back(meta[0].substr(6));
      ts.sentinel.push_back(meta[1].substr(9) == "1");
      for (int l = 0; l < layers_; ++l) {
        auto vals = split_words(need("hidden state row"));
        if (static_cast<int>(vals.size()) != dim_)
          throw MalformedRecordError(path.string(), i, "hidden state row has wrong width");
        for (int d = 0; d < dim_; ++d)
          ts.layers[static_cast<std::size_t>(l)](tok, d) =
              parse_double(vals[static_cast<std::size_t>(d)]);
      }
    }
    entries_.emplace_back(std::move(text), std::move(ts));
  }
}

TokenStates FileEmbedder::token_hidden_states(const std::string& text) const {
  for (const auto& [t, ts] : entries_)
    if (t == text) return ts;
  throw EmbedderFailureError("text not present in exported states: \"" + text + "\"");
}

std::unique_ptr<ContextualSentenceEmbedder> make_embedder(const std::string& spec) {
  if (spec.rfind("toy-hash-v1", 0) == 0) {
    auto parts = split(spec, ':');
    int dim = parts.size() > 1 ? static_cast<int>(std::stol(parts[1])) : 48;
    std::uint64_t seed = parts.size() > 2 ? std::stoull(parts[2]) : 0x5eed;
    return std::make_unique<HashEmbedder>(dim, seed);
  }
  if (spec.rfind("file:", 0) == 0) return std::make_unique<FileEmbedder>(spec.substr(5));
  throw ConfigMismatchError("unknown embedder spec: " + spec);
}

}  // namespace mrtts
