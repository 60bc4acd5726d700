#include "mrtts/semantics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mrtts/errors.hpp"
#include "mrtts/util.hpp"

namespace mrtts {

const Vector& EmbeddingCache::at(const std::string& id) const {
  auto it = by_id.find(id);
  if (it == by_id.end()) throw UnknownIdError(id);
  return it->second;
}

Vector sentence_embedding(const TokenStates& states, const std::string& text) {
  if (states.layers.size() < 2)
    throw EmbedderFailureError("need hidden states for at least two layers (\"" + text + "\")");
  const Eigen::MatrixXd& layer = states.layers[states.layers.size() - 2];
  if (layer.rows() != static_cast<Eigen::Index>(states.tokens.size()))
    throw EmbedderFailureError("token/state count disagrees (\"" + text + "\")");

  Vector sum = Vector::Zero(layer.cols());
  Eigen::Index used = 0;
  for (Eigen::Index i = 0; i < layer.rows(); ++i) {
    if (states.sentinel[static_cast<std::size_t>(i)]) continue;
    sum += layer.row(i).transpose();
    ++used;
  }
  if (used == 0) throw EmptyTextError(text);
  return sum / static_cast<double>(used);
}

EmbeddingCache embed_sentences(const std::vector<std::pair<std::string, std::string>>& id_texts,
                               const ContextualSentenceEmbedder& embedder) {
  EmbeddingCache cache;
  cache.embedder_name = embedder.name();
  cache.dimension = embedder.dimension();
  for (const auto& [id, text] : id_texts) {
    if (trim(text).empty()) throw EmptyTextError(text);
    Vector v = sentence_embedding(embedder.token_hidden_states(text), text);
    if (v.size() != cache.dimension)
      throw EmbedderFailureError("dimension drift for \"" + text + "\"");
    if (!v.allFinite()) throw EmbedderFailureError("non-finite embedding for \"" + text + "\"");
    cache.by_id[id] = std::move(v);
  }
  return cache;
}

EmbeddingCache embed_manifest(const Manifest& manifest,
                              const ContextualSentenceEmbedder& embedder) {
  std::vector<std::pair<std::string, std::string>> id_texts;
  id_texts.reserve(manifest.entries.size());
  for (const auto& u : manifest.entries) id_texts.emplace_back(u.id, u.text);
  return embed_sentences(id_texts, embedder);
}

double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size())
    throw DimensionMismatchError("cosine of " + std::to_string(a.size()) + " vs " +
                                 std::to_string(b.size()));
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ZeroVectorError();
  return a.dot(b) / (na * nb);
}

namespace {

ReferenceSet top_n_by_cosine(const std::string& target_id, const Vector& query,
                             const EmbeddingCache& cache, const SelectionConfig& cfg,
                             const std::set<std::string>& exclude_ids) {
  if (cfg.n_references < 1) throw PreconditionError("n_references must be >= 1");

  std::vector<std::pair<std::string, double>> scored;
  auto consider = [&](const std::string& id, const Vector& v) {
    if (exclude_ids.count(id)) return;
    scored.emplace_back(id, cosine_similarity(query, v));
  };
  if (cfg.pool.empty()) {
    for (const auto& [id, v] : cache.by_id) consider(id, v);
  } else {
    for (const auto& id : cfg.pool) consider(id, cache.at(id));
  }

  if (scored.size() < static_cast<std::size_t>(cfg.n_references))
    throw PoolTooSmallError(scored.size(), static_cast<std::size_t>(cfg.n_references));

  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  scored.resize(static_cast<std::size_t>(cfg.n_references));

  ReferenceSet out;
  out.target_id = target_id;
  out.references = std::move(scored);
  return out;
}

}  // namespace

ReferenceSet select_references(const std::string& target_id, const EmbeddingCache& cache,
                               const SelectionConfig& cfg) {
  const Vector& query = cache.at(target_id);
  if (!cfg.pool.empty()) {
    for (const auto& id : cfg.pool) cache.at(id);  // validate pool ids up front
  }
  std::set<std::string> exclude;
  if (cfg.exclude_target) exclude.insert(target_id);
  return top_n_by_cosine(target_id, query, cache, cfg, exclude);
}

ReferenceSet select_references_for_vector(const Vector& query, const EmbeddingCache& cache,
                                          const SelectionConfig& cfg,
                                          const std::set<std::string>& exclude_ids) {
  return top_n_by_cosine("", query, cache, cfg, exclude_ids);
}

SelectionIndex build_selection_index(const Manifest& manifest, const EmbeddingCache& cache,
                                     const SelectionConfig& cfg) {
  for (const auto& u : manifest.entries) cache.at(u.id);
  SelectionIndex index;
  for (const auto& u : manifest.entries) index[u.id] = select_references(u.id, cache, cfg);
  return index;
}

void save_embedding_cache(const std::filesystem::path& path, const EmbeddingCache& cache) {
  std::ostringstream ss;
  ss << "MRTTS-EMB 1\n";
  ss << "embedder=" << cache.embedder_name << "\n";
  ss << "dimension=" << cache.dimension << "\n";
  ss << "count=" << cache.by_id.size() << "\n";
  for (const auto& [id, v] : cache.by_id) {
    ss << id;
    for (Eigen::Index d = 0; d < v.size(); ++d) ss << ' ' << format_double(v(d));
    ss << '\n';
  }
  write_file(path, ss.str());
}

EmbeddingCache load_embedding_cache(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  if (lines.size() < 4 || lines[0] != "MRTTS-EMB 1")
    throw MalformedRecordError(path.string(), 1, "bad embedding cache header");
  EmbeddingCache cache;
  cache.embedder_name = lines[1].substr(lines[1].find('=') + 1);
  cache.dimension = static_cast<int>(std::stol(lines[2].substr(lines[2].find('=') + 1)));
  std::size_t count = std::stoul(lines[3].substr(lines[3].find('=') + 1));
  for (std::size_t i = 0; i < count; ++i) {
    const auto& line = lines.at(4 + i);
    auto fields = split_words(line);
    if (fields.size() != static_cast<std::size_t>(cache.dimension) + 1)
      throw MalformedRecordError(path.string(), 5 + i, "bad embedding row");
    Vector v(cache.dimension);
    for (int d = 0; d < cache.dimension; ++d)
      v(d) = parse_double(fields[static_cast<std::size_t>(d) + 1]);
    cache.by_id[fields[0]] = std::move(v);
  }
  return cache;
}

void save_selection_index(const std::filesystem::path& path, const SelectionIndex& index) {
  std::ostringstream ss;
  for (const auto& [target, refs] : index) {
    ss << target;
    for (const auto& [id, sim] : refs.references) ss << '|' << id << ':' << format_double(sim);
    ss << '\n';
  }
  write_file(path, ss.str());
}

SelectionIndex load_selection_index(const std::filesystem::path& path) {
  SelectionIndex index;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split(line, '|');
    if (fields.size() < 2) throw MalformedRecordError(path.string(), lineno, "bad index row");
    ReferenceSet rs;
    rs.target_id = fields[0];
    for (std::size_t i = 1; i < fields.size(); ++i) {
      auto colon = fields[i].rfind(':');
      if (colon == std::string::npos)
        throw MalformedRecordError(path.string(), lineno, "bad ref:sim pair");
      rs.references.emplace_back(fields[i].substr(0, colon),
                                 parse_double(fields[i].substr(colon + 1)));
    }
    index[rs.target_id] = std::move(rs);
  }
  if (index.empty()) throw MalformedRecordError(path.string(), 1, "empty selection index");
  return index;
}

}  // namespace mrtts
