#include "mrtts/dsp.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "mrtts/errors.hpp"
#include "mrtts/util.hpp"

namespace mrtts {

namespace {

constexpr double kPi = std::numbers::pi;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) w[static_cast<std::size_t>(k)] = 0.5 - 0.5 * std::cos(2.0 * kPi * k / n);
  return w;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

void fft_inplace(std::vector<std::complex<double>>& data, bool inverse) {
  const std::size_t n = data.size();
  if (n == 0 || (n & (n - 1)) != 0) throw ShapeMismatchError("FFT length must be a power of two");
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = data[i + k];
        std::complex<double> v = data[i + k + len / 2] * w;
        data[i + k] = u + v;
        data[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& x : data) x /= static_cast<double>(n);
}

Matrix mel_filterbank(const FeatureConfig& cfg) {
  const int n_bins = cfg.n_fft / 2 + 1;
  const double fmax = cfg.fmax > 0.0 ? cfg.fmax : cfg.sample_rate / 2.0;
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> centers(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    centers[static_cast<std::size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));

  Matrix fb = Matrix::Zero(cfg.n_mels, n_bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = centers[static_cast<std::size_t>(m)];
    const double mid = centers[static_cast<std::size_t>(m) + 1];
    const double hi = centers[static_cast<std::size_t>(m) + 2];
    for (int b = 0; b < n_bins; ++b) {
      const double f = static_cast<double>(b) * cfg.sample_rate / cfg.n_fft;
      if (f <= lo || f >= hi) continue;
      fb(m, b) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

Matrix stft_magnitude(const std::vector<double>& samples, const FeatureConfig& cfg) {
  if (samples.empty()) throw EmptyAudioError();
  if (!is_pow2(cfg.n_fft)) throw ShapeMismatchError("n_fft must be a power of two");
  if (cfg.win_length > cfg.n_fft) throw ShapeMismatchError("win_length exceeds n_fft");

  const int n_bins = cfg.n_fft / 2 + 1;
  const Eigen::Index n_frames =
      static_cast<Eigen::Index>(samples.size() / static_cast<std::size_t>(cfg.hop_length)) + 1;

  // window of win_length centered inside the n_fft frame
  std::vector<double> win = hann_window(cfg.win_length);
  std::vector<double> padded(static_cast<std::size_t>(cfg.n_fft), 0.0);
  const int off = (cfg.n_fft - cfg.win_length) / 2;
  for (int k = 0; k < cfg.win_length; ++k)
    padded[static_cast<std::size_t>(off + k)] = win[static_cast<std::size_t>(k)];

  Matrix mag(n_frames, n_bins);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.n_fft));
  const long len = static_cast<long>(samples.size());
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    const long center = static_cast<long>(t) * cfg.hop_length;
    for (int k = 0; k < cfg.n_fft; ++k) {
      const long s = center - cfg.n_fft / 2 + k;
      const double x = (s >= 0 && s < len) ? samples[static_cast<std::size_t>(s)] : 0.0;
      buf[static_cast<std::size_t>(k)] = x * padded[static_cast<std::size_t>(k)];
    }
    fft_inplace(buf, false);
    for (int b = 0; b < n_bins; ++b) mag(t, b) = std::abs(buf[static_cast<std::size_t>(b)]);
  }
  return mag;
}

MelSpectrogram extract_mel(const std::vector<double>& samples, int sample_rate,
                           const FeatureConfig& cfg) {
  if (samples.empty()) throw EmptyAudioError();
  if (sample_rate != cfg.sample_rate) throw SampleRateMismatchError(sample_rate, cfg.sample_rate);

  Matrix mag = stft_magnitude(samples, cfg);
  Matrix fb = mel_filterbank(cfg);
  Matrix mel = mag * fb.transpose();  // T x n_mels
  MelSpectrogram out;
  out.frames = mel.cwiseMax(cfg.clip_floor).array().log().matrix();
  out.sample_rate = cfg.sample_rate;
  out.hop_length = cfg.hop_length;
  out.n_fft = cfg.n_fft;
  return out;
}

namespace {

std::vector<double> istft(const Matrix& real, const Matrix& imag, const FeatureConfig& cfg) {
  const Eigen::Index n_frames = real.rows();
  const int n_bins = cfg.n_fft / 2 + 1;
  std::vector<double> win = hann_window(cfg.win_length);
  std::vector<double> padded(static_cast<std::size_t>(cfg.n_fft), 0.0);
  const int off = (cfg.n_fft - cfg.win_length) / 2;
  for (int k = 0; k < cfg.win_length; ++k)
    padded[static_cast<std::size_t>(off + k)] = win[static_cast<std::size_t>(k)];

  const std::size_t total =
      static_cast<std::size_t>((n_frames - 1) * cfg.hop_length + cfg.n_fft);
  std::vector<double> acc(total, 0.0), norm(total, 0.0);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.n_fft));
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    for (int b = 0; b < n_bins; ++b) buf[static_cast<std::size_t>(b)] = {real(t, b), imag(t, b)};
    for (int b = n_bins; b < cfg.n_fft; ++b)
      buf[static_cast<std::size_t>(b)] = std::conj(buf[static_cast<std::size_t>(cfg.n_fft - b)]);
    fft_inplace(buf, true);
    const std::size_t base = static_cast<std::size_t>(t) * static_cast<std::size_t>(cfg.hop_length);
    for (int k = 0; k < cfg.n_fft; ++k) {
      acc[base + static_cast<std::size_t>(k)] +=
          buf[static_cast<std::size_t>(k)].real() * padded[static_cast<std::size_t>(k)];
      norm[base + static_cast<std::size_t>(k)] +=
          padded[static_cast<std::size_t>(k)] * padded[static_cast<std::size_t>(k)];
    }
  }
  for (std::size_t i = 0; i < total; ++i) acc[i] /= std::max(norm[i], 1e-10);

  // drop the centering pad
  const std::size_t lead = static_cast<std::size_t>(cfg.n_fft / 2);
  const std::size_t body = static_cast<std::size_t>((n_frames - 1) * cfg.hop_length);
  std::vector<double> out(body, 0.0);
  for (std::size_t i = 0; i < body && lead + i < total; ++i) out[i] = acc[lead + i];
  return out;
}

}  // namespace

std::vector<double> invert_mel(const MelSpectrogram& mel, int iterations,
                               const FeatureConfig& cfg, std::uint64_t seed) {
  if (iterations < 1) throw PreconditionError("invert_mel needs iterations >= 1");
  if (mel.n_frames() < 1 || mel.n_mels() != cfg.n_mels)
    throw ShapeMismatchError("mel shape does not match config");

  Matrix fb = mel_filterbank(cfg);
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(fb);
  Matrix pinv = cod.pseudoInverse();  // n_bins x n_mels

  Matrix mel_mag = mel.frames.array().exp().matrix();          // T x n_mels
  Matrix lin = (pinv * mel_mag.transpose()).transpose();       // T x n_bins
  lin = lin.cwiseMax(0.0);

  const Eigen::Index t_len = lin.rows();
  const int n_bins = cfg.n_fft / 2 + 1;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase_dist(-kPi, kPi);
  Matrix phase(t_len, n_bins);
  for (Eigen::Index t = 0; t < t_len; ++t)
    for (int b = 0; b < n_bins; ++b) phase(t, b) = phase_dist(rng);

  Matrix re = lin.cwiseProduct(phase.array().cos().matrix());
  Matrix im = lin.cwiseProduct(phase.array().sin().matrix());
  std::vector<double> wav;
  for (int it = 0; it < iterations; ++it) {
    wav = istft(re, im, cfg);
    if (wav.empty()) break;
    if (it + 1 == iterations) break;
    // re-project: keep the target magnitude, adopt the signal's phase
    Matrix mag2 = stft_magnitude(wav, cfg);
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.n_fft));
    std::vector<double> win = hann_window(cfg.win_length);
    std::vector<double> padded(static_cast<std::size_t>(cfg.n_fft), 0.0);
    const int off = (cfg.n_fft - cfg.win_length) / 2;
    for (int k = 0; k < cfg.win_length; ++k)
      padded[static_cast<std::size_t>(off + k)] = win[static_cast<std::size_t>(k)];
    const long len = static_cast<long>(wav.size());
    const Eigen::Index frames2 = std::min<Eigen::Index>(t_len, mag2.rows());
    for (Eigen::Index t = 0; t < frames2; ++t) {
      const long center = static_cast<long>(t) * cfg.hop_length;
      for (int k = 0; k < cfg.n_fft; ++k) {
        const long s = center - cfg.n_fft / 2 + k;
        const double x = (s >= 0 && s < len) ? wav[static_cast<std::size_t>(s)] : 0.0;
        buf[static_cast<std::size_t>(k)] = x * padded[static_cast<std::size_t>(k)];
      }
      fft_inplace(buf, false);
      for (int b = 0; b < n_bins; ++b) {
        double m = std::abs(buf[static_cast<std::size_t>(b)]);
        double cr = m > 1e-12 ? buf[static_cast<std::size_t>(b)].real() / m : 1.0;
        double ci = m > 1e-12 ? buf[static_cast<std::size_t>(b)].imag() / m : 0.0;
        re(t, b) = lin(t, b) * cr;
        im(t, b) = lin(t, b) * ci;
      }
    }
  }
  return wav;
}

void save_mel(const std::filesystem::path& path, const MelSpectrogram& mel) {
  std::ostringstream ss;
  ss << "MRTTS-MEL 1\n";
  ss << "frames=" << mel.n_frames() << " n_mels=" << mel.n_mels()
     << " sample_rate=" << mel.sample_rate << " hop=" << mel.hop_length
     << " n_fft=" << mel.n_fft << "\n";
  for (Eigen::Index t = 0; t < mel.n_frames(); ++t) {
    for (Eigen::Index m = 0; m < mel.n_mels(); ++m) {
      if (m) ss << ' ';
      ss << format_double(mel.frames(t, m));
    }
    ss << '\n';
  }
  write_file(path, ss.str());
}

MelSpectrogram load_mel(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  if (lines.size() < 2 || lines[0] != "MRTTS-MEL 1")
    throw MalformedRecordError(path.string(), 1, "bad mel header");
  MelSpectrogram mel;
  Eigen::Index t_len = 0, n_mels = 0;
  for (const auto& field : split_words(lines[1])) {
    auto kv = split(field, '=');
    if (kv.size() != 2) throw MalformedRecordError(path.string(), 2, "bad header field");
    long v = std::stol(kv[1]);
    if (kv[0] == "frames") t_len = v;
    else if (kv[0] == "n_mels") n_mels = v;
    else if (kv[0] == "sample_rate") mel.sample_rate = static_cast<int>(v);
    else if (kv[0] == "hop") mel.hop_length = static_cast<int>(v);
    else if (kv[0] == "n_fft") mel.n_fft = static_cast<int>(v);
  }
  if (t_len < 1 || n_mels < 1) throw MalformedRecordError(path.string(), 2, "bad mel shape");
  if (lines.size() < static_cast<std::size_t>(2 + t_len))
    throw MalformedRecordError(path.string(), lines.size(), "mel rows truncated");
  mel.frames.resize(t_len, n_mels);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    auto vals = split_words(lines[static_cast<std::size_t>(2 + t)]);
    if (static_cast<Eigen::Index>(vals.size()) != n_mels)
      throw MalformedRecordError(path.string(), static_cast<std::size_t>(3 + t), "bad mel row");
    for (Eigen::Index m = 0; m < n_mels; ++m)
      mel.frames(t, m) = parse_double(vals[static_cast<std::size_t>(m)]);
  }
  return mel;
}

double dominant_frequency(const std::vector<double>& samples, int sample_rate) {
  if (samples.empty()) throw EmptyAudioError();
  std::size_t n = 1;
  while (n < samples.size()) n <<= 1;
  std::vector<std::complex<double>> buf(n, {0.0, 0.0});
  for (std::size_t i = 0; i < samples.size(); ++i) buf[i] = samples[i];
  fft_inplace(buf, false);
  std::size_t best = 0;
  double best_mag = -1.0;
  for (std::size_t b = 0; b <= n / 2; ++b) {
    double m = std::abs(buf[b]);
    if (m > best_mag) {
      best_mag = m;
      best = b;
    }
  }
  return static_cast<double>(best) * sample_rate / static_cast<double>(n);
}

}  // namespace mrtts
