#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace mrtts {

// FNV-1a over bytes. Used for config hashes and seed derivation.
std::uint64_t fnv1a64(const std::string& data);

// Derives an independent stream seed from a base seed and a stage tag.
std::uint64_t derive_seed(std::uint64_t base, const std::string& tag);

// Formats a double with enough digits to round-trip exactly through text.
std::string format_double(double v);
double parse_double(const std::string& s);

std::string lowercase(const std::string& s);
std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);
std::vector<std::string> split_words(const std::string& s);

// Reads all lines of a text file; throws MissingFileError if absent.
std::vector<std::string> read_lines(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

// Flat key=value config files. Lines starting with '#' and blank lines are
// skipped; later keys override earlier ones.
class KeyValueFile {
 public:
  KeyValueFile() = default;
  static KeyValueFile load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback = "") const;
  double get_double(const std::string& key, double fallback) const;
  long get_int(const std::string& key, long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Canonical serialization: keys in insertion order, one per line.
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  std::uint64_t hash() const { return fnv1a64(serialize()); }

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
};

}  // namespace mrtts
