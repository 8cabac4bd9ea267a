#include "warmstart/batch.hpp"

#include <algorithm>

#include "warmstart/error.hpp"

namespace warmstart {

TokenBatch TokenBatch::pack(std::span<const std::vector<TokenId>> sequences, TokenId pad) {
  TokenBatch b;
  b.batch = sequences.size();
  for (const auto& s : sequences) b.length = std::max(b.length, s.size());
  b.ids.assign(b.batch * b.length, pad);
  b.mask.assign(b.batch * b.length, 0);
  for (std::size_t r = 0; r < b.batch; ++r) {
    std::copy(sequences[r].begin(), sequences[r].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(r * b.length));
    std::fill_n(b.mask.begin() + static_cast<std::ptrdiff_t>(r * b.length), sequences[r].size(), 1);
  }
  return b;
}

std::vector<TokenId> TokenBatch::positions() const {
  std::vector<TokenId> pos(ids.size());
  for (std::size_t r = 0; r < batch; ++r) {
    TokenId seen = 0;
    for (std::size_t t = 0; t < length; ++t) {
      pos[r * length + t] = seen;
      if (mask[r * length + t]) ++seen;
    }
  }
  return pos;
}

std::size_t TokenBatch::real_length(std::size_t row) const {
  return static_cast<std::size_t>(std::count(mask.begin() + static_cast<std::ptrdiff_t>(row * length),
                                             mask.begin() + static_cast<std::ptrdiff_t>((row + 1) * length), 1));
}

std::size_t TokenBatch::max_real_length() const {
  std::size_t m = 0;
  for (std::size_t r = 0; r < batch; ++r) m = std::max(m, real_length(r));
  return m;
}

TokenBatch concat_rows(const TokenBatch& a, const TokenBatch& b) {
  if (a.batch != b.batch) {
    throw Error(ErrorCode::shape, "cannot concatenate batches of " + std::to_string(a.batch) + " and " +
                                      std::to_string(b.batch) + " rows");
  }
  TokenBatch out;
  out.batch = a.batch;
  out.length = a.length + b.length;
  out.ids.reserve(out.batch * out.length);
  out.mask.reserve(out.batch * out.length);
  for (std::size_t r = 0; r < a.batch; ++r) {
    for (std::size_t t = 0; t < a.length; ++t) {
      out.ids.push_back(a.ids[r * a.length + t]);
      out.mask.push_back(a.mask[r * a.length + t]);
    }
    for (std::size_t t = 0; t < b.length; ++t) {
      out.ids.push_back(b.ids[r * b.length + t]);
      out.mask.push_back(b.mask[r * b.length + t]);
    }
  }
  return out;
}

}  // namespace warmstart
