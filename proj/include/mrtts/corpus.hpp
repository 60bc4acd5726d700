#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mrtts/dsp.hpp"

namespace mrtts {

// Character set accepted after normalization; doubles as the acoustic
// model's vocabulary.
inline const std::string kDefaultCharset = "abcdefghijklmnopqrstuvwxyz0123456789 .,?!'-";

// lowercase, strip characters outside the charset, collapse whitespace
std::string normalize_text(const std::string& text, const std::string& charset = kDefaultCharset);

struct Utterance {
  std::string id;
  std::string text;        // normalized
  std::string audio_path;  // may be empty; resolved relative to the manifest
  std::optional<MelSpectrogram> mel;
};

struct Manifest {
  std::vector<Utterance> entries;
  std::filesystem::path source_path;

  const Utterance* find(const std::string& id) const;
  Utterance* find(const std::string& id);
};

// One record per line: id|audio_path|text. Order preserved; duplicate ids and
// missing fields rejected.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Resolves an utterance's audio path against the manifest location.
std::filesystem::path resolve_audio_path(const Manifest& manifest, const Utterance& utt);

// Synthetic desk-scale corpus: n short utterances over a few style groups
// with harmonic-tone audio. A pure function of (n, seed): re-running with the
// same arguments rewrites byte-identical files. Returns the manifest path.
std::filesystem::path generate_toy_corpus(const std::filesystem::path& out_dir, int n,
                                          std::uint64_t seed,
                                          const FeatureConfig& cfg = FeatureConfig{});

// Extracts and caches mels for every utterance (files under <dir>/mels).
// Loads from cache when present; fills manifest.entries[i].mel.
void extract_corpus_mels(Manifest& manifest, const std::filesystem::path& cache_dir,
                         const FeatureConfig& cfg);

}  // namespace mrtts
