#include "warmstart/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "warmstart/error.hpp"

namespace warmstart {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

Config Config::parse(std::string_view text, std::string source_name) {
  Config c;
  c.source_ = std::move(source_name);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::config, c.source_ + " line " + std::to_string(line_no) + ": expected key=value, got \"" +
                                         std::string(line) + "\"");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw Error(ErrorCode::config, c.source_ + " line " + std::to_string(line_no) + ": empty key");
    if (auto it = c.lines_.find(key); it != c.lines_.end()) {
      throw Error(ErrorCode::config, c.source_ + " line " + std::to_string(line_no) + ": duplicate key " + key +
                                         " (first set on line " + std::to_string(it->second) + ")");
    }
    c.values_[key] = value;
    c.lines_[key] = line_no;
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  Config c = parse(buf.str(), path.string());
  c.base_dir_ = path.parent_path();
  return c;
}

bool Config::has(std::string_view key) const { return values_.find(key) != values_.end(); }

void Config::set(const std::string& key, const std::string& value) { values_[key] = value; }

const std::string* Config::lookup(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  used_.insert(std::string(key));
  return &it->second;
}

void Config::bad_value(std::string_view key, std::string_view expected) const {
  std::string where = source_;
  if (auto it = lines_.find(key); it != lines_.end()) where += " line " + std::to_string(it->second);
  throw Error(ErrorCode::config, where + ": " + std::string(key) + " must be " + std::string(expected) + ", got \"" +
                                     values_.find(key)->second + "\"");
}

std::string Config::get_string(std::string_view key) const {
  if (const auto* v = lookup(key)) return *v;
  throw Error(ErrorCode::config, source_ + ": missing required key " + std::string(key));
}

std::string Config::get_string(std::string_view key, std::string_view fallback) const {
  if (const auto* v = lookup(key)) return *v;
  return std::string(fallback);
}

std::int64_t Config::get_int(std::string_view key) const {
  const std::string s = get_string(key);
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) bad_value(key, "an integer");
  return v;
}

std::int64_t Config::get_int(std::string_view key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double Config::get_double(std::string_view key) const {
  const std::string s = get_string(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) bad_value(key, "a number");
    return v;
  } catch (const std::logic_error&) {
    bad_value(key, "a number");
  }
}

double Config::get_double(std::string_view key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool Config::get_bool(std::string_view key) const {
  const std::string s = get_string(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  bad_value(key, "true or false");
}

bool Config::get_bool(std::string_view key, bool fallback) const { return has(key) ? get_bool(key) : fallback; }

std::size_t Config::get_size(std::string_view key, std::size_t fallback) const {
  if (!has(key)) return fallback;
  const auto v = get_int(key);
  if (v < 0) bad_value(key, "non-negative");
  return static_cast<std::size_t>(v);
}

std::filesystem::path Config::get_path(std::string_view key) const {
  std::filesystem::path p = get_string(key);
  if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
  return p;
}

std::optional<std::filesystem::path> Config::find_path(std::string_view key) const {
  if (!has(key) || values_.find(key)->second.empty()) {
    lookup(key);
    return std::nullopt;
  }
  return get_path(key);
}

std::vector<std::string> Config::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (!used_.count(k)) out.push_back(k);
  }
  return out;
}

void Config::reject_unused() const {
  const auto unused = unused_keys();
  if (unused.empty()) return;
  std::string where = source_;
  if (auto it = lines_.find(unused.front()); it != lines_.end()) where += " line " + std::to_string(it->second);
  throw Error(ErrorCode::config, where + ": unknown key " + unused.front());
}

std::uint64_t Config::hash() const {
  std::string canon;
  for (const auto& [k, v] : values_) canon += k + "=" + v + "\n";
  return fnv1a64(canon);
}

std::string Config::hash_hex() const { return hex64(hash()); }

}  // namespace warmstart
