#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mrtts/corpus.hpp"
#include "mrtts/errors.hpp"
#include "mrtts/util.hpp"
#include "mrtts/wav.hpp"

using namespace mrtts;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("mrtts_corpus_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("text normalization: lowercase, charset strip, whitespace collapse") {
  CHECK(normalize_text("Hello,  WORLD!") == "hello, world!");
  CHECK(normalize_text("  tabs\tand\nnewlines  ") == "tabs and newlines");
  CHECK(normalize_text("emdash—stays out") == "emdashstays out");
  CHECK(normalize_text("MiXeD 123 Case?") == "mixed 123 case?");
}

TEST_CASE("manifest loads records in file order and rejects malformed input") {
  auto dir = temp_dir("manifest");
  write_file(dir / "m.txt", "u1|a.wav|First one\nu2||second\nu3|c.wav|THIRD\n");
  Manifest m = load_manifest(dir / "m.txt");
  REQUIRE(m.entries.size() == 3);
  CHECK(m.entries[0].id == "u1");
  CHECK(m.entries[1].id == "u2");
  CHECK(m.entries[2].text == "third");

  SUBCASE("duplicate ids rejected") {
    write_file(dir / "dup.txt", "u1|a.wav|one\nu1|b.wav|two\n");
    CHECK_THROWS_AS(load_manifest(dir / "dup.txt"), DuplicateIdError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_manifest(dir / "absent.txt"), MissingFileError);
  }
  SUBCASE("empty file") {
    write_file(dir / "empty.txt", "");
    CHECK_THROWS_AS(load_manifest(dir / "empty.txt"), MalformedRecordError);
  }
  SUBCASE("wrong field count names the line") {
    write_file(dir / "bad.txt", "u1|a.wav|ok\njust-text\n");
    try {
      load_manifest(dir / "bad.txt");
      FAIL("expected MalformedRecordError");
    } catch (const MalformedRecordError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("manifest round-trips through save/load") {
  auto dir = temp_dir("roundtrip");
  write_file(dir / "m.txt", "a|x.wav|alpha beta\nb|y.wav|gamma\n");
  Manifest m = load_manifest(dir / "m.txt");
  save_manifest(dir / "copy.txt", m);
  Manifest again = load_manifest(dir / "copy.txt");
  REQUIRE(again.entries.size() == m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    CHECK(again.entries[i].id == m.entries[i].id);
    CHECK(again.entries[i].audio_path == m.entries[i].audio_path);
    CHECK(again.entries[i].text == m.entries[i].text);
  }
  fs::remove_all(dir);
}

TEST_CASE("toy corpus is a pure function of (n, seed)") {
  auto dir1 = temp_dir("toy1");
  auto dir2 = temp_dir("toy2");
  generate_toy_corpus(dir1, 12, 7);
  generate_toy_corpus(dir2, 12, 7);
  CHECK(read_file(dir1 / "manifest.txt") == read_file(dir2 / "manifest.txt"));
  for (int i = 0; i < 12; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "wavs/toy_%04d.wav", i);
    CHECK(read_file(dir1 / name) == read_file(dir2 / name));
  }

  SUBCASE("different seed changes the audio") {
    auto dir3 = temp_dir("toy3");
    generate_toy_corpus(dir3, 12, 8);
    CHECK(read_file(dir1 / "wavs/toy_0000.wav") != read_file(dir3 / "wavs/toy_0000.wav"));
    fs::remove_all(dir3);
  }
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("toy corpus rejects n < 2") {
  auto dir = temp_dir("toosmall");
  CHECK_THROWS_AS(generate_toy_corpus(dir, 1, 1), PreconditionError);
  fs::remove_all(dir);
}

TEST_CASE("every toy utterance survives load_manifest + extract_mel") {
  auto dir = temp_dir("toyfull");
  FeatureConfig cfg;
  generate_toy_corpus(dir, 20, 7, cfg);
  Manifest m = load_manifest(dir / "manifest.txt");
  REQUIRE(m.entries.size() == 20);
  extract_corpus_mels(m, dir / "mels", cfg);
  for (const auto& u : m.entries) {
    REQUIRE(u.mel.has_value());
    CHECK(u.mel->n_frames() >= 1);
    CHECK(u.mel->n_mels() == cfg.n_mels);
    CHECK(u.mel->frames.allFinite());
  }

  SUBCASE("cache reload is bit-identical to the extraction") {
    Manifest again = load_manifest(dir / "manifest.txt");
    extract_corpus_mels(again, dir / "mels", cfg);  // second pass hits the cache
    for (std::size_t i = 0; i < m.entries.size(); ++i)
      CHECK(again.entries[i].mel->frames == m.entries[i].mel->frames);
  }
  fs::remove_all(dir);
}
