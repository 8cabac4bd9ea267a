#pragma once

// Flat key=value configuration text. Keys may carry section prefixes
// ("model.hidden_size=32"); '#' starts a comment; blank lines are ignored.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace warmstart {

class Config {
 public:
  Config() = default;

  // Throws Error(config) naming the offending line.
  static Config parse(std::string_view text, std::string source_name = "<config>");
  static Config load(const std::filesystem::path& path);

  bool has(std::string_view key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_string(std::string_view key) const;
  std::string get_string(std::string_view key, std::string_view fallback) const;
  std::int64_t get_int(std::string_view key) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  double get_double(std::string_view key) const;
  double get_double(std::string_view key, double fallback) const;
  bool get_bool(std::string_view key) const;
  bool get_bool(std::string_view key, bool fallback) const;
  std::size_t get_size(std::string_view key, std::size_t fallback) const;

  // Path values resolve relative to the directory of the config file.
  std::filesystem::path get_path(std::string_view key) const;
  std::optional<std::filesystem::path> find_path(std::string_view key) const;
  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }

  // Keys never read through a getter; an unknown key is usually a typo.
  std::vector<std::string> unused_keys() const;
  void reject_unused() const;

  // FNV-1a 64 over the sorted key=value lines.
  std::uint64_t hash() const;
  std::string hash_hex() const;

  const std::map<std::string, std::string, std::less<>>& entries() const noexcept { return values_; }

 private:
  const std::string* lookup(std::string_view key) const;
  [[noreturn]] void bad_value(std::string_view key, std::string_view expected) const;

  std::map<std::string, std::string, std::less<>> values_;
  std::map<std::string, std::size_t, std::less<>> lines_;
  mutable std::set<std::string, std::less<>> used_;
  std::string source_ = "<config>";
  std::filesystem::path base_dir_;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace warmstart
