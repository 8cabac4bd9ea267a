#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace warmstart {

using TokenId = std::int32_t;

struct ReservedTokens {
  std::string pad = "[PAD]";
  std::string unk = "[UNK]";
  std::string bos = "[BOS]";
  std::string eos = "[EOS]";
  std::string mask = "[MASK]";
};

// Subword vocabulary with WordPiece-style "##" continuation pieces.
//
// File format: UTF-8, one token per line; line order defines ids. Lines that
// start with "#!" are header directives and do not take an id:
//   #! uncased           lowercase input before matching
//   #! cased
//   #! pad=<tok> unk=<tok> bos=<tok> eos=<tok> mask=<tok>   rename reserved tokens
//   #! warmstart ...       artifact header, ignored
class Vocabulary {
 public:
  using Reserved = ReservedTokens;

  static constexpr std::string_view kContinuation = "##";

  // Throws Error(format) on duplicates or missing PAD/UNK/BOS/EOS.
  Vocabulary(std::vector<std::string> tokens, bool uncased = false, Reserved reserved = {});

  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  std::string serialize() const;

  std::size_t size() const noexcept { return tokens_.size(); }
  bool uncased() const noexcept { return uncased_; }

  std::optional<TokenId> find(std::string_view token) const;
  TokenId id_of(std::string_view token) const;  // throws Error(id) when absent
  const std::string& token(TokenId id) const;    // throws Error(id) when out of range
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  TokenId pad() const noexcept { return pad_; }
  TokenId unk() const noexcept { return unk_; }
  TokenId bos() const noexcept { return bos_; }
  TokenId eos() const noexcept { return eos_; }
  std::optional<TokenId> mask() const noexcept { return mask_; }
  bool is_special(TokenId id) const noexcept;

  // Whitespace pre-split, then greedy longest match per word; a word that
  // cannot be fully covered becomes a single UNK.
  std::vector<TokenId> tokenize(std::string_view text) const;
  std::vector<TokenId> tokenize_word(std::string_view word) const;

  // Joins pieces, gluing "##" continuations to the previous piece.
  std::string detokenize(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  bool uncased_ = false;
  Reserved reserved_;
  TokenId pad_ = 0, unk_ = 0, bos_ = 0, eos_ = 0;
  std::optional<TokenId> mask_;
};

// Lowercases ASCII letters; other bytes pass through unchanged.
std::string ascii_lower(std::string_view text);

std::vector<std::string_view> split_whitespace(std::string_view text);

}  // namespace warmstart
