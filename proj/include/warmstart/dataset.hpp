#pragma once

// Text datasets: "source\ttarget" TSV, tokenization with per-task truncation,
// seeded subsampling and batching.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "warmstart/batch.hpp"
#include "warmstart/vocab.hpp"

namespace warmstart {

struct TextExample {
  std::string source;
  std::string target;
  friend bool operator==(const TextExample&, const TextExample&) = default;
};

// Lines starting with '#' and blank lines are skipped; a line without a tab is
// a format error naming the line.
std::vector<TextExample> parse_tsv(std::string_view text, const std::string& source_name = "<tsv>");
std::vector<TextExample> load_tsv(const std::filesystem::path& path);
std::string format_tsv(const std::vector<TextExample>& examples, const std::string& header = "");

struct EncodedExample {
  std::vector<TokenId> source;
  std::vector<TokenId> target;  // BOS ... EOS
};

struct Truncation {
  std::size_t max_source = 128;
  std::size_t max_target = 128;  // including BOS and EOS
};

std::vector<TokenId> encode_target(const Vocabulary& vocab, std::string_view text, std::size_t max_target);
std::vector<TokenId> encode_source(const Vocabulary& vocab, std::string_view text, std::size_t max_source);

// `input` tokenizes sources, `output` tokenizes targets (they differ for
// schemes with separate vocabularies).
std::vector<EncodedExample> encode_dataset(const std::vector<TextExample>& examples, const Vocabulary& input,
                                           const Vocabulary& output, const Truncation& truncation);

// round(fraction * n) examples drawn without replacement, returned in their
// original order. The draw is a prefix of one seeded permutation, so smaller
// fractions under the same seed select subsets of larger ones.
template <class E>
std::vector<E> subsample(const std::vector<E>& dataset, double fraction, std::uint64_t seed);
std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed);

Seq2SeqBatch make_batch(const std::vector<EncodedExample>& examples, std::span<const std::size_t> indices,
                        TokenId source_pad, TokenId target_pad);

template <class E>
std::vector<E> subsample(const std::vector<E>& dataset, double fraction, std::uint64_t seed) {
  std::vector<E> out;
  for (auto i : subsample_indices(dataset.size(), fraction, seed)) out.push_back(dataset[i]);
  return out;
}

}  // namespace warmstart
