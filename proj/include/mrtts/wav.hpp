#pragma once

#include <filesystem>
#include <vector>

namespace mrtts {

struct WavData {
  std::vector<double> samples;  // mono, [-1, 1]
  int sample_rate = 0;
};

// Reads a mono 16-bit PCM RIFF/WAVE file.
WavData read_wav(const std::filesystem::path& path);

// Writes mono 16-bit PCM. Samples are clamped to [-1, 1].
void write_wav(const std::filesystem::path& path, const std::vector<double>& samples,
               int sample_rate);

}  // namespace mrtts
