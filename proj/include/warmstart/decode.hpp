#pragma once

// Greedy and beam-search decoding over any next-token scorer.
//
// Prefixes handed to a scorer start with BOS. Output token lists exclude BOS
// and EOS; the length |Y| used by the length penalty counts generated tokens
// including the EOS when one was produced.

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "warmstart/model.hpp"

namespace warmstart {

struct DecodeParams {
  std::size_t beam_size = 4;
  double alpha = 0.6;
  std::size_t max_output_length = 64;  // generated tokens, EOS included
  TokenId bos = 0;
  TokenId eos = 0;

  void validate(std::size_t max_positions = kMaxPositions) const;
};

// ((5 + length) / 6) ^ alpha
double length_penalty(std::size_t length, double alpha);

class NextTokenScorer {
 public:
  virtual ~NextTokenScorer() = default;
  virtual std::size_t num_sources() const = 0;
  virtual std::size_t vocab_size() const = 0;
  // Log-probabilities [prefixes.size(), vocab] of the next token.
  virtual Tensor<double> log_probs(std::span<const std::size_t> source_rows,
                                   std::span<const std::vector<TokenId>> prefixes) = 0;
};

template <class T>
class ModelScorer : public NextTokenScorer {
 public:
  ModelScorer(const Seq2SeqModel<T>& model, std::span<const std::vector<TokenId>> sources, TokenId pad);

  std::size_t num_sources() const override { return encoded_.source.batch; }
  std::size_t vocab_size() const override { return model_.config().output_vocab_size; }
  Tensor<double> log_probs(std::span<const std::size_t> source_rows,
                           std::span<const std::vector<TokenId>> prefixes) override;

 private:
  const Seq2SeqModel<T>& model_;
  EncodedSources<T> encoded_;
  TokenId pad_;
};

struct Hypothesis {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
  double score = 0.0;       // log_prob / length_penalty(length)
  std::size_t length = 0;   // |Y|
  bool ended = false;       // produced EOS (otherwise stopped at max length)

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;
};

// Argmax at every step (ties to the lowest id) until EOS or max length.
std::vector<Hypothesis> greedy_decode(NextTokenScorer& scorer, const DecodeParams& params);

// Per source: finished hypotheses best-first (score, then lexicographic ids),
// at most beam_size of them. Each step keeps the beam_size best expansions
// over the whole beam; expansions ending in EOS leave the beam as finished.
// Search stops once beam_size hypotheses are finished and none of them can be
// overtaken by a live one.
std::vector<std::vector<Hypothesis>> beam_decode(NextTokenScorer& scorer, const DecodeParams& params);

// Score of a given continuation under the scorer (tokens exclude BOS; EOS is
// appended when `ended`).
Hypothesis score_sequence(NextTokenScorer& scorer, std::size_t source_row, std::span<const TokenId> tokens, bool ended,
                          const DecodeParams& params);

// Convenience wrappers over a model.
template <class T>
std::vector<Hypothesis> greedy_decode(const Seq2SeqModel<T>& model, std::span<const std::vector<TokenId>> sources,
                                      const DecodeParams& params, TokenId pad);
template <class T>
std::vector<std::vector<Hypothesis>> beam_decode(const Seq2SeqModel<T>& model,
                                                 std::span<const std::vector<TokenId>> sources,
                                                 const DecodeParams& params, TokenId pad);

}  // namespace warmstart
