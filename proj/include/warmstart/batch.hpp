#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "warmstart/vocab.hpp"

namespace warmstart {

// Right-padded rectangular token batch; mask marks real tokens. The mask is
// authoritative: a PAD id inside the mask still counts as a real token.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;

  static TokenBatch pack(std::span<const std::vector<TokenId>> sequences, TokenId pad);

  // Each entry is the number of real tokens before it in its row.
  std::vector<TokenId> positions() const;
  std::size_t real_length(std::size_t row) const;
  std::size_t max_real_length() const;

  std::span<const TokenId> row_ids(std::size_t row) const {
    return std::span<const TokenId>(ids).subspan(row * length, length);
  }
};

// Per-row concatenation [a_row | b_row], keeping each side's padding in place.
TokenBatch concat_rows(const TokenBatch& a, const TokenBatch& b);

struct Seq2SeqBatch {
  TokenBatch source;
  TokenBatch target;  // begins with BOS and ends with EOS
};

}  // namespace warmstart
