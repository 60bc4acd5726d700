#include "mrtts/corpus.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "mrtts/errors.hpp"
#include "mrtts/util.hpp"
#include "mrtts/wav.hpp"

namespace mrtts {

std::string normalize_text(const std::string& text, const std::string& charset) {
  std::string lowered = lowercase(text);
  std::string kept;
  kept.reserve(lowered.size());
  for (char c : lowered) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    if (charset.find(c) != std::string::npos) kept.push_back(c);
  }
  // collapse whitespace runs and trim
  std::string out;
  bool in_space = true;
  for (char c : kept) {
    if (c == ' ') {
      if (!in_space) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(c);
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

const Utterance* Manifest::find(const std::string& id) const {
  for (const auto& u : entries)
    if (u.id == id) return &u;
  return nullptr;
}

Utterance* Manifest::find(const std::string& id) {
  for (auto& u : entries)
    if (u.id == id) return &u;
  return nullptr;
}

Manifest load_manifest(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  Manifest m;
  m.source_path = path;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  for (const auto& raw : lines) {
    ++lineno;
    if (trim(raw).empty()) continue;
    auto fields = split(raw, '|');
    if (fields.size() != 3)
      throw MalformedRecordError(path.string(), lineno, "expected id|audio_path|text");
    Utterance u;
    u.id = trim(fields[0]);
    u.audio_path = trim(fields[1]);
    u.text = normalize_text(fields[2]);
    if (u.id.empty()) throw MalformedRecordError(path.string(), lineno, "empty id");
    if (u.text.empty()) throw MalformedRecordError(path.string(), lineno, "empty text");
    if (!seen.insert(u.id).second) throw DuplicateIdError(u.id);
    m.entries.push_back(std::move(u));
  }
  if (m.entries.empty())
    throw MalformedRecordError(path.string(), lineno ? lineno : 1, "manifest has no records");
  return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ostringstream ss;
  for (const auto& u : manifest.entries) ss << u.id << '|' << u.audio_path << '|' << u.text << '\n';
  write_file(path, ss.str());
}

std::filesystem::path resolve_audio_path(const Manifest& manifest, const Utterance& utt) {
  std::filesystem::path p(utt.audio_path);
  if (p.is_absolute() || manifest.source_path.empty()) return p;
  return manifest.source_path.parent_path() / p;
}

namespace {

// Four style groups: distinct vocabulary (drives text-similarity selection)
// and distinct pitch/energy contours (gives the style encoder signal).
struct ToyGroup {
  const char* templ;
  double f0;
  double contour;   // semitone drift over the utterance
  double vibrato;   // Hz deviation
  double energy;
};

const ToyGroup kToyGroups[] = {
    {"the quiet lake rests under pale morning light number %s", 110.0, -2.0, 0.0, 0.45},
    {"will the old market open before the rain returns number %s", 150.0, 4.0, 0.0, 0.60},
    {"what a wild bright spark the festival brings tonight number %s", 210.0, 1.0, 6.0, 0.85},
    {"please file the quarterly ledger notes by friday number %s", 130.0, 0.0, 0.0, 0.55},
};

const char* kNumberWords[] = {"zero", "one",  "two", "three", "four",
                              "five", "six",  "seven", "eight", "nine"};

std::string number_words(int v) {
  std::string out;
  std::string digits = std::to_string(v);
  for (char c : digits) {
    if (!out.empty()) out += ' ';
    out += kNumberWords[c - '0'];
  }
  return out;
}

}  // namespace

std::filesystem::path generate_toy_corpus(const std::filesystem::path& out_dir, int n,
                                          std::uint64_t seed, const FeatureConfig& cfg) {
  if (n < 2) throw PreconditionError("toy corpus needs n >= 2");
  std::filesystem::create_directories(out_dir / "wavs");

  constexpr double kTau = 2.0 * std::numbers::pi;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dur_dist(0.30, 0.55);
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);

  Manifest manifest;
  manifest.source_path = out_dir / "manifest.txt";
  for (int i = 0; i < n; ++i) {
    const ToyGroup& g = kToyGroups[i % 4];
    char id[32];
    std::snprintf(id, sizeof(id), "toy_%04d", i);

    char text[256];
    std::snprintf(text, sizeof(text), g.templ, number_words(i).c_str());

    const double dur = dur_dist(rng);
    const double f0 = g.f0 * (1.0 + jitter(rng));
    const std::size_t len = static_cast<std::size_t>(dur * cfg.sample_rate);
    std::vector<double> wav(len);
    double phase = 0.0;
    for (std::size_t s = 0; s < len; ++s) {
      const double u = static_cast<double>(s) / static_cast<double>(len);
      double f = f0 * std::pow(2.0, g.contour * u / 12.0);
      if (g.vibrato > 0.0) f += g.vibrato * std::sin(kTau * 5.5 * u * dur);
      phase += kTau * f / cfg.sample_rate;
      // three decaying harmonics under a raised-cosine envelope
      double x = std::sin(phase) + 0.5 * std::sin(2.0 * phase) + 0.25 * std::sin(3.0 * phase);
      double env = 0.5 - 0.5 * std::cos(kTau * std::min(1.0, u));
      wav[s] = g.energy * env * x / 1.75;
    }
    std::string wav_rel = std::string("wavs/") + id + ".wav";
    write_wav(out_dir / wav_rel, wav, cfg.sample_rate);

    Utterance u;
    u.id = id;
    u.audio_path = wav_rel;
    u.text = normalize_text(text);
    manifest.entries.push_back(std::move(u));
  }
  save_manifest(manifest.source_path, manifest);
  return manifest.source_path;
}

void extract_corpus_mels(Manifest& manifest, const std::filesystem::path& cache_dir,
                         const FeatureConfig& cfg) {
  std::filesystem::create_directories(cache_dir);
  for (auto& u : manifest.entries) {
    const auto cache_path = cache_dir / (u.id + ".mel");
    if (std::filesystem::exists(cache_path)) {
      u.mel = load_mel(cache_path);
      continue;
    }
    if (u.audio_path.empty()) throw DataError("utterance has no audio: " + u.id);
    WavData wav = read_wav(resolve_audio_path(manifest, u));
    u.mel = extract_mel(wav.samples, wav.sample_rate, cfg);
    save_mel(cache_path, *u.mel);
  }
}

}  // namespace mrtts
