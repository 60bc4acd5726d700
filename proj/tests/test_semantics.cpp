#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <sstream>

#include "mrtts/errors.hpp"
#include "mrtts/semantics.hpp"
#include "mrtts/util.hpp"

using namespace mrtts;

namespace {

// Fixed-vector stub so arithmetic examples are verifiable by hand. Layer 1 is
// the averaged one (second to last of two).
class StubEmbedder : public ContextualSentenceEmbedder {
 public:
  StubEmbedder(std::map<std::string, Eigen::MatrixXd> by_text, int dim)
      : by_text_(std::move(by_text)), dim_(dim) {}
  std::string name() const override { return "stub"; }
  int dimension() const override { return dim_; }
  TokenStates token_hidden_states(const std::string& text) const override {
    TokenStates ts;
    auto it = by_text_.find(text);
    if (it == by_text_.end()) throw EmbedderFailureError(text);
    const auto& m = it->second;
    ts.tokens.push_back("<agg>");
    ts.sentinel.push_back(true);
    for (Eigen::Index i = 1; i < m.rows() + 1; ++i) {
      ts.tokens.push_back("t" + std::to_string(i));
      ts.sentinel.push_back(false);
    }
    Eigen::MatrixXd with_sentinel(m.rows() + 1, m.cols());
    with_sentinel.row(0).setConstant(99.0);  // must be excluded
    with_sentinel.bottomRows(m.rows()) = m;
    ts.layers = {with_sentinel, Eigen::MatrixXd::Zero(m.rows() + 1, m.cols())};
    return ts;
  }

 private:
  std::map<std::string, Eigen::MatrixXd> by_text_;
  int dim_;
};

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

EmbeddingCache cache_from(const std::map<std::string, Vector>& vectors) {
  EmbeddingCache c;
  c.embedder_name = "test";
  c.dimension = static_cast<int>(vectors.begin()->second.size());
  c.by_id = vectors;
  return c;
}

}  // namespace

TEST_CASE("sentence embedding averages the second-to-last layer without the sentinel") {
  Eigen::MatrixXd two(2, 2);
  two << 1, 0, 0, 1;
  Eigen::MatrixXd one(1, 2);
  one << 3, -4;
  StubEmbedder emb({{"two tokens", two}, {"single", one}}, 2);

  SUBCASE("two tokens -> arithmetic mean") {
    auto cache = embed_sentences({{"a", "two tokens"}}, emb);
    CHECK(cache.at("a")(0) == doctest::Approx(0.5));
    CHECK(cache.at("a")(1) == doctest::Approx(0.5));
  }
  SUBCASE("one token -> that token's hidden vector") {
    auto cache = embed_sentences({{"b", "single"}}, emb);
    CHECK(cache.at("b")(0) == doctest::Approx(3.0));
    CHECK(cache.at("b")(1) == doctest::Approx(-4.0));
  }
  SUBCASE("sentinel-only sentence -> EmptyText") {
    Eigen::MatrixXd none(0, 2);
    StubEmbedder only_sentinel({{"empty", none}}, 2);
    CHECK_THROWS_AS(embed_sentences({{"c", "empty"}}, only_sentinel), EmptyTextError);
  }
}

TEST_CASE("hash embedder is deterministic and respects the averaging rule") {
  HashEmbedder emb(16);
  auto c1 = embed_sentences({{"x", "the lake rests"}}, emb);
  auto c2 = embed_sentences({{"x", "the lake rests"}}, emb);
  CHECK(c1.at("x") == c2.at("x"));

  // same bag of words -> same mean, regardless of order
  auto c3 = embed_sentences({{"x", "rests the lake"}}, emb);
  CHECK((c1.at("x") - c3.at("x")).norm() < 1e-12);
}

TEST_CASE("cosine similarity handles the documented cases") {
  CHECK(cosine_similarity(vec2(1, 0), vec2(0, 1)) == doctest::Approx(0.0));
  CHECK(cosine_similarity(vec2(1, 2), vec2(2, 4)) == doctest::Approx(1.0));
  CHECK(cosine_similarity(vec2(1, 2), vec2(2, 1)) == doctest::Approx(0.8));
  CHECK_THROWS_AS(cosine_similarity(vec2(0, 0), vec2(1, 1)), ZeroVectorError);
  Vector three(3);
  three << 1, 2, 3;
  CHECK_THROWS_AS(cosine_similarity(vec2(1, 2), three), DimensionMismatchError);

  SUBCASE("scale and negation identities") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 20; ++trial) {
      Vector v(5);
      for (int i = 0; i < 5; ++i) v(i) = g(rng);
      if (v.norm() == 0.0) continue;
      CHECK(cosine_similarity(v, Vector(3.7 * v)) == doctest::Approx(1.0));
      CHECK(cosine_similarity(v, Vector(-v)) == doctest::Approx(-1.0));
    }
  }
}

TEST_CASE("select_references equals the brute-force oracle over random pools") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 120; ++trial) {
    const int pool_size = 5 + static_cast<int>(rng() % 10);
    const int dim = 2 + static_cast<int>(rng() % 4);
    std::map<std::string, Vector> vectors;
    for (int i = 0; i < pool_size; ++i) {
      Vector v(dim);
      do {
        for (int d = 0; d < dim; ++d) v(d) = g(rng);
      } while (v.norm() == 0.0);
      char id[16];
      std::snprintf(id, sizeof(id), "u%03d", i);
      vectors[id] = v;
    }
    EmbeddingCache cache = cache_from(vectors);
    SelectionConfig cfg;
    cfg.n_references = 3;
    cfg.exclude_target = trial % 2 == 0;
    const std::string target = "u000";

    ReferenceSet got = select_references(target, cache, cfg);

    // oracle: score every candidate, sort by (similarity desc, id asc)
    std::vector<std::pair<std::string, double>> scored;
    for (const auto& [id, v] : vectors) {
      if (cfg.exclude_target && id == target) continue;
      scored.emplace_back(id, cosine_similarity(cache.at(target), v));
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    scored.resize(3);

    REQUIRE(got.references.size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(got.references[static_cast<std::size_t>(i)].first ==
            scored[static_cast<std::size_t>(i)].first);
      CHECK(got.references[static_cast<std::size_t>(i)].second ==
            doctest::Approx(scored[static_cast<std::size_t>(i)].second));
    }
    if (cfg.exclude_target)
      for (const auto& [id, _] : got.references) CHECK(id != target);
  }
}

TEST_CASE("selection is invariant to positive scaling of the cache") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  std::map<std::string, Vector> vectors;
  for (int i = 0; i < 8; ++i) {
    Vector v(4);
    for (int d = 0; d < 4; ++d) v(d) = g(rng);
    vectors["u" + std::to_string(i)] = v;
  }
  EmbeddingCache cache = cache_from(vectors);
  EmbeddingCache scaled = cache;
  for (auto& [_, v] : scaled.by_id) v *= 12.5;

  SelectionConfig cfg;
  cfg.n_references = 4;
  for (const auto& [id, _] : vectors) {
    auto a = select_references(id, cache, cfg);
    auto b = select_references(id, scaled, cfg);
    REQUIRE(a.references.size() == b.references.size());
    for (std::size_t i = 0; i < a.references.size(); ++i)
      CHECK(a.references[i].first == b.references[i].first);
  }
}

TEST_CASE("tie-break is ascending utterance id") {
  std::map<std::string, Vector> vectors = {
      {"zz", vec2(1, 0)}, {"aa", vec2(2, 0)}, {"mm", vec2(3, 0)}, {"target", vec2(5, 0)}};
  EmbeddingCache cache = cache_from(vectors);
  SelectionConfig cfg;
  cfg.n_references = 2;
  auto rs = select_references("target", cache, cfg);
  // all three candidates have cosine exactly 1
  CHECK(rs.references[0].first == "aa");
  CHECK(rs.references[1].first == "mm");
}

TEST_CASE("selection error paths") {
  EmbeddingCache cache = cache_from({{"a", vec2(1, 0)}, {"b", vec2(0, 1)}});
  SelectionConfig cfg;
  cfg.n_references = 2;
  CHECK_THROWS_AS(select_references("missing", cache, cfg), UnknownIdError);
  CHECK_THROWS_AS(select_references("a", cache, cfg), PoolTooSmallError);  // exclude leaves 1
  cfg.pool = {"a", "ghost"};
  CHECK_THROWS_AS(select_references("a", cache, cfg), UnknownIdError);
}

TEST_CASE("selection index matches fresh calls and persists exactly") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  Manifest manifest;
  std::map<std::string, Vector> vectors;
  for (int i = 0; i < 10; ++i) {
    Utterance u;
    u.id = "u" + std::to_string(i);
    u.text = "text " + std::to_string(i);
    manifest.entries.push_back(u);
    Vector v(6);
    for (int d = 0; d < 6; ++d) v(d) = g(rng);
    vectors[u.id] = v;
  }
  EmbeddingCache cache = cache_from(vectors);
  SelectionConfig cfg;
  cfg.n_references = 3;
  SelectionIndex index = build_selection_index(manifest, cache, cfg);
  REQUIRE(index.size() == 10);
  for (const auto& u : manifest.entries) {
    auto fresh = select_references(u.id, cache, cfg);
    REQUIRE(index.at(u.id).references.size() == 3);
    for (int i = 0; i < 3; ++i)
      CHECK(index.at(u.id).references[static_cast<std::size_t>(i)].first ==
            fresh.references[static_cast<std::size_t>(i)].first);
  }

  auto dir = std::filesystem::temp_directory_path() / "mrtts_semantics";
  std::filesystem::create_directories(dir);
  save_selection_index(dir / "idx.txt", index);
  SelectionIndex loaded = load_selection_index(dir / "idx.txt");
  REQUIRE(loaded.size() == index.size());
  for (const auto& [id, rs] : index)
    for (std::size_t i = 0; i < rs.references.size(); ++i) {
      CHECK(loaded.at(id).references[i].first == rs.references[i].first);
      CHECK(loaded.at(id).references[i].second == rs.references[i].second);
    }

  save_embedding_cache(dir / "cache.txt", cache);
  EmbeddingCache cache2 = load_embedding_cache(dir / "cache.txt");
  CHECK(cache2.dimension == cache.dimension);
  for (const auto& [id, v] : cache.by_id) CHECK(cache2.at(id) == v);
  std::filesystem::remove_all(dir);
}

TEST_CASE("file embedder round-trips token states") {
  auto dir = std::filesystem::temp_directory_path() / "mrtts_fileemb";
  std::filesystem::create_directories(dir);
  std::ostringstream ss;
  ss << "MRTTS-TOKENS 1\nname=exported-test\ndimension=3\nlayers=2\ntexts=1\n";
  ss << "text=hello world\ntokens=3\n";
  ss << "token=[agg] sentinel=1\n9 9 9\n8 8 8\n";
  ss << "token=hello sentinel=0\n1 0 0\n0 0 0\n";
  ss << "token=world sentinel=0\n0 1 0\n0 0 0\n";
  write_file(dir / "states.txt", ss.str());

  FileEmbedder emb(dir / "states.txt");
  CHECK(emb.dimension() == 3);
  auto cache = embed_sentences({{"u", "hello world"}}, emb);
  CHECK(cache.at("u")(0) == doctest::Approx(0.5));
  CHECK(cache.at("u")(1) == doctest::Approx(0.5));
  CHECK(cache.at("u")(2) == doctest::Approx(0.0));
  CHECK_THROWS_AS(emb.token_hidden_states("unknown text"), EmbedderFailureError);
  std::filesystem::remove_all(dir);
}
