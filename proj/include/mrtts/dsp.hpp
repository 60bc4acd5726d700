#pragma once

#include <Eigen/Core>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace mrtts {

using Matrix = Eigen::MatrixXd;

// Mel front-end configuration. Framing values are conventions of this
// artifact (the usual seq2seq TTS front-end); everything is overridable.
struct FeatureConfig {
  int sample_rate = 22050;
  int n_fft = 1024;  // power of two
  int hop_length = 256;
  int win_length = 1024;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 -> sample_rate / 2
  double clip_floor = 1e-5;
};

struct MelSpectrogram {
  Matrix frames;  // T x n_mels, natural-log magnitude-mel, floored at log(clip_floor)
  int sample_rate = 22050;
  int hop_length = 256;
  int n_fft = 1024;

  Eigen::Index n_frames() const { return frames.rows(); }
  Eigen::Index n_mels() const { return frames.cols(); }
};

// In-place iterative radix-2 FFT (n must be a power of two).
void fft_inplace(std::vector<std::complex<double>>& data, bool inverse);

// Triangular mel filterbank, n_mels x (n_fft/2 + 1).
Matrix mel_filterbank(const FeatureConfig& cfg);

// Centered STFT magnitudes: T x (n_fft/2+1), T = floor(len/hop) + 1.
Matrix stft_magnitude(const std::vector<double>& samples, const FeatureConfig& cfg);

// waveform -> log mel spectrogram. Throws EmptyAudio / SampleRateMismatch.
MelSpectrogram extract_mel(const std::vector<double>& samples, int sample_rate,
                           const FeatureConfig& cfg);

// Deterministic spectrogram inversion: pseudo-inverse mel filterbank followed
// by Griffin-Lim with a seeded initial phase.
std::vector<double> invert_mel(const MelSpectrogram& mel, int iterations,
                               const FeatureConfig& cfg, std::uint64_t seed = 1234);

// Mel cache files: textual matrix with a self-describing header.
void save_mel(const std::filesystem::path& path, const MelSpectrogram& mel);
MelSpectrogram load_mel(const std::filesystem::path& path);

// Location of the dominant spectral peak of a waveform, in Hz (test oracle
// helper exposed for the CLI and bindings as well).
double dominant_frequency(const std::vector<double>& samples, int sample_rate);

}  // namespace mrtts
