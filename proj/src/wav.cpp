#include "mrtts/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "mrtts/errors.hpp"

namespace mrtts {

namespace {

std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void wr_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError(path.string());
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  if (raw.size() < 44 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw DataError("not a RIFF/WAVE file: " + path.string());

  WavData wav;
  int channels = 0, bits = 0;
  std::size_t pos = 12;
  bool have_fmt = false, have_data = false;
  while (pos + 8 <= raw.size()) {
    const unsigned char* chunk = p + pos;
    std::uint32_t size = rd_u32(chunk + 4);
    std::size_t body = pos + 8;
    if (body + size > raw.size()) throw DataError("truncated WAV chunk: " + path.string());
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw DataError("short fmt chunk: " + path.string());
      std::uint16_t format = rd_u16(p + body);
      channels = rd_u16(p + body + 2);
      wav.sample_rate = static_cast<int>(rd_u32(p + body + 4));
      bits = rd_u16(p + body + 14);
      if (format != 1) throw DataError("only PCM WAV supported: " + path.string());
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw DataError("data chunk before fmt: " + path.string());
      if (channels != 1 || bits != 16)
        throw DataError("only mono 16-bit WAV supported: " + path.string());
      std::size_t n = size / 2;
      wav.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t s = static_cast<std::int16_t>(rd_u16(p + body + 2 * i));
        wav.samples[i] = static_cast<double>(s) / 32768.0;
      }
      have_data = true;
    }
    pos = body + size + (size & 1);
  }
  if (!have_data) throw DataError("no data chunk: " + path.string());
  return wav;
}

void write_wav(const std::filesystem::path& path, const std::vector<double>& samples,
               int sample_rate) {
  std::string out;
  out.reserve(44 + samples.size() * 2);
  std::uint32_t data_size = static_cast<std::uint32_t>(samples.size() * 2);
  out += "RIFF";
  wr_u32(out, 36 + data_size);
  out += "WAVEfmt ";
  wr_u32(out, 16);
  wr_u16(out, 1);  // PCM
  wr_u16(out, 1);  // mono
  wr_u32(out, static_cast<std::uint32_t>(sample_rate));
  wr_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
  wr_u16(out, 2);
  wr_u16(out, 16);
  out += "data";
  wr_u32(out, data_size);
  for (double s : samples) {
    double c = std::clamp(s, -1.0, 1.0);
    auto q = static_cast<std::int16_t>(std::lrint(c * 32767.0));
    wr_u16(out, static_cast<std::uint16_t>(q));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace mrtts
