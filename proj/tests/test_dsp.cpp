#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "mrtts/dsp.hpp"
#include "mrtts/errors.hpp"
#include "mrtts/wav.hpp"

using namespace mrtts;

namespace {

std::vector<double> tone(double hz, double seconds, int sr) {
  std::vector<double> out(static_cast<std::size_t>(seconds * sr));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / sr);
  return out;
}

}  // namespace

TEST_CASE("frame count is floor(len/hop)+1 with centered framing") {
  FeatureConfig cfg;
  std::vector<double> samples(22050, 0.1);
  MelSpectrogram mel = extract_mel(samples, 22050, cfg);
  CHECK(mel.n_frames() == 87);  // floor(22050/256) + 1
  CHECK(mel.n_mels() == 80);
}

TEST_CASE("all-zero waveform maps every value to log(clip_floor)") {
  FeatureConfig cfg;
  std::vector<double> silence(8000, 0.0);
  MelSpectrogram mel = extract_mel(silence, 22050, cfg);
  const double floor_val = std::log(cfg.clip_floor);
  CHECK((mel.frames.array() == floor_val).all());
}

TEST_CASE("extract_mel is pure: identical inputs give bit-identical outputs") {
  FeatureConfig cfg;
  auto wav = tone(330.0, 0.4, cfg.sample_rate);
  MelSpectrogram a = extract_mel(wav, cfg.sample_rate, cfg);
  MelSpectrogram b = extract_mel(wav, cfg.sample_rate, cfg);
  CHECK(a.frames == b.frames);
}

TEST_CASE("mel values are finite and floored for arbitrary waveforms") {
  FeatureConfig cfg;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> wav(3000 + 1000 * trial);
    for (auto& s : wav) s = dist(rng);
    MelSpectrogram mel = extract_mel(wav, cfg.sample_rate, cfg);
    CHECK(mel.frames.allFinite());
    CHECK(mel.frames.minCoeff() >= std::log(cfg.clip_floor) - 1e-12);
  }
}

TEST_CASE("error paths: empty audio and sample-rate mismatch") {
  FeatureConfig cfg;
  CHECK_THROWS_AS(extract_mel({}, 22050, cfg), EmptyAudioError);
  std::vector<double> wav(1000, 0.1);
  CHECK_THROWS_AS(extract_mel(wav, 16000, cfg), SampleRateMismatchError);
}

TEST_CASE("inversion of a pure tone keeps the dominant peak within one bin") {
  FeatureConfig cfg;
  auto wav = tone(440.0, 0.6, cfg.sample_rate);
  MelSpectrogram mel = extract_mel(wav, cfg.sample_rate, cfg);
  auto rebuilt = invert_mel(mel, 24, cfg);
  REQUIRE(!rebuilt.empty());
  const double peak = dominant_frequency(rebuilt, cfg.sample_rate);
  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.n_fft;
  CHECK(std::abs(peak - 440.0) <= bin_hz);
}

TEST_CASE("inversion of the floor mel is near-silence and deterministic") {
  FeatureConfig cfg;
  MelSpectrogram mel;
  mel.frames = Matrix::Constant(40, cfg.n_mels, std::log(cfg.clip_floor));
  auto a = invert_mel(mel, 8, cfg);
  auto b = invert_mel(mel, 8, cfg);
  CHECK(a == b);  // bit-identical
  double rms = 0.0;
  for (double s : a) rms += s * s;
  rms = std::sqrt(rms / static_cast<double>(a.size()));
  CHECK(rms < 1e-3);
}

TEST_CASE("mel cache round-trips exactly") {
  FeatureConfig cfg;
  auto wav = tone(220.0, 0.3, cfg.sample_rate);
  MelSpectrogram mel = extract_mel(wav, cfg.sample_rate, cfg);
  auto path = std::filesystem::temp_directory_path() / "mrtts_test_mel.mel";
  save_mel(path, mel);
  MelSpectrogram loaded = load_mel(path);
  CHECK(loaded.frames == mel.frames);
  CHECK(loaded.sample_rate == mel.sample_rate);
  CHECK(loaded.hop_length == mel.hop_length);
  CHECK(loaded.n_fft == mel.n_fft);
  std::filesystem::remove(path);
}

TEST_CASE("wav io round-trips 16-bit samples") {
  auto path = std::filesystem::temp_directory_path() / "mrtts_test_wav.wav";
  auto wav = tone(150.0, 0.1, 22050);
  write_wav(path, wav, 22050);
  WavData loaded = read_wav(path);
  CHECK(loaded.sample_rate == 22050);
  REQUIRE(loaded.samples.size() == wav.size());
  for (std::size_t i = 0; i < wav.size(); i += 97)
    CHECK(loaded.samples[i] == doctest::Approx(wav[i]).epsilon(1e-3));
  std::filesystem::remove(path);
}

TEST_CASE("fft matches a direct DFT on a small case and inverts") {
  std::vector<std::complex<double>> x = {{1, 0}, {2, 0}, {0, 1}, {-1, 0},
                                         {0, 0}, {3, 0}, {0, -2}, {1, 1}};
  auto expected = x;
  const std::size_t n = x.size();
  std::vector<std::complex<double>> dft(n, {0, 0});
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t t = 0; t < n; ++t) {
      double ang = -2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n);
      dft[k] += expected[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
  fft_inplace(x, false);
  for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(x[k] - dft[k]) < 1e-9);
  fft_inplace(x, true);
  for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(x[k] - expected[k]) < 1e-9);
}
