#include "warmstart/vocab.hpp"

#include <fstream>
#include <sstream>

#include "warmstart/error.hpp"

namespace warmstart {

namespace {

constexpr std::size_t kMaxWordBytes = 100;

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_utf8_boundary(std::string_view s, std::size_t pos) {
  return pos == 0 || pos >= s.size() || (static_cast<unsigned char>(s[pos]) & 0xC0) != 0x80;
}

std::string_view trim_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace

std::string ascii_lower(std::string_view text) {
  std::string out(text);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<std::string_view> split_whitespace(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, bool uncased, Reserved reserved)
    : tokens_(std::move(tokens)), uncased_(uncased), reserved_(std::move(reserved)) {
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw Error(ErrorCode::format, "empty token at id " + std::to_string(i));
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw Error(ErrorCode::format, "duplicate token \"" + tokens_[i] + "\" at id " + std::to_string(i));
    }
  }
  auto require = [&](const std::string& tok) {
    auto it = index_.find(tok);
    if (it == index_.end()) throw Error(ErrorCode::format, "vocabulary lacks reserved token " + tok);
    return it->second;
  };
  pad_ = require(reserved_.pad);
  unk_ = require(reserved_.unk);
  bos_ = require(reserved_.bos);
  eos_ = require(reserved_.eos);
  if (auto it = index_.find(reserved_.mask); it != index_.end()) mask_ = it->second;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  std::vector<std::string> tokens;
  bool uncased = false;
  Reserved reserved;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim_cr(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.starts_with("#!")) {
      const auto words = split_whitespace(line.substr(2));
      // "#! warmstart ..." is the artifact header, not a directive.
      if (!words.empty() && words.front() == "warmstart") continue;
      for (auto word : words) {
        if (word == "uncased") {
          uncased = true;
        } else if (word == "cased") {
          uncased = false;
        } else if (auto eq = word.find('='); eq != std::string_view::npos) {
          const auto key = word.substr(0, eq);
          std::string value(word.substr(eq + 1));
          if (key == "pad") reserved.pad = value;
          else if (key == "unk") reserved.unk = value;
          else if (key == "bos") reserved.bos = value;
          else if (key == "eos") reserved.eos = value;
          else if (key == "mask") reserved.mask = value;
          else throw Error(ErrorCode::format, "line " + std::to_string(line_no) + ": unknown directive " + std::string(word));
        } else {
          throw Error(ErrorCode::format, "line " + std::to_string(line_no) + ": unknown directive " + std::string(word));
        }
      }
      continue;
    }
    if (line.empty() && pos >= text.size()) break;
    tokens.emplace_back(line);
  }
  return Vocabulary(std::move(tokens), uncased, std::move(reserved));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open vocabulary " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string Vocabulary::serialize() const {
  std::ostringstream out;
  out << "#! " << (uncased_ ? "uncased" : "cased") << '\n';
  const Reserved defaults;
  if (reserved_.pad != defaults.pad || reserved_.unk != defaults.unk || reserved_.bos != defaults.bos ||
      reserved_.eos != defaults.eos || reserved_.mask != defaults.mask) {
    out << "#! pad=" << reserved_.pad << " unk=" << reserved_.unk << " bos=" << reserved_.bos
        << " eos=" << reserved_.eos << " mask=" << reserved_.mask << '\n';
  }
  for (const auto& t : tokens_) out << t << '\n';
  return out.str();
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write vocabulary " + path.string());
  out << serialize();
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id_of(std::string_view token) const {
  if (auto id = find(token)) return *id;
  throw Error(ErrorCode::id, "token \"" + std::string(token) + "\" not in vocabulary");
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorCode::id, "id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::is_special(TokenId id) const noexcept {
  return id == pad_ || id == bos_ || id == eos_ || (mask_ && id == *mask_);
}

std::vector<TokenId> Vocabulary::tokenize_word(std::string_view word) const {
  if (word.size() > kMaxWordBytes) return {unk_};
  std::vector<TokenId> pieces;
  std::string candidate;
  std::size_t start = 0;
  while (start < word.size()) {
    std::optional<TokenId> match;
    std::size_t end = word.size();
    for (; end > start; --end) {
      if (!is_utf8_boundary(word, end)) continue;
      candidate.assign(start > 0 ? kContinuation : std::string_view{});
      candidate.append(word.substr(start, end - start));
      if (auto it = index_.find(candidate); it != index_.end() && !is_special(it->second)) {
        match = it->second;
        break;
      }
    }
    if (!match) return {unk_};
    pieces.push_back(*match);
    start = end;
  }
  return pieces;
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text) const {
  const std::string normalized = uncased_ ? ascii_lower(text) : std::string(text);
  std::vector<TokenId> ids;
  for (auto word : split_whitespace(normalized)) {
    auto pieces = tokenize_word(word);
    ids.insert(ids.end(), pieces.begin(), pieces.end());
  }
  return ids;
}

std::string Vocabulary::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (auto id : ids) {
    const std::string& piece = token(id);
    if (piece.size() > kContinuation.size() && piece.starts_with(kContinuation)) {
      out.append(piece, kContinuation.size());
    } else {
      if (!out.empty()) out.push_back(' ');
      out.append(piece);
    }
  }
  return out;
}

}  // namespace warmstart
