#pragma once

// Seeded toy tasks standing in for sentence fusion, split-and-rephrase and
// copying, plus an in-domain corpus and two vocabularies over the same
// lexicon.
//
// Fusion rules (S subject, P predicate, PRON the subject's pronoun):
//   S P1 . S P2 .               -> S P1 and P2 .
//   S P1 . however , S P2 .     -> S P1 , but PRON P2 .
//   S P1 . therefore , S P2 .   -> S P1 , so PRON P2 .
//   S1 P1 . S2 P2 .  (S1 != S2) -> S1 P1 , and S2 P2 .
// split-toy is the same pairs reversed; copy maps a sentence to itself.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "warmstart/dataset.hpp"
#include "warmstart/vocab.hpp"

namespace warmstart {

enum class SyntheticTask { fusion, split, copy };

std::string to_string(SyntheticTask task);
SyntheticTask parse_task(std::string_view text);  // "fusion-toy", "split-toy", "copy"

std::vector<TextExample> generate_task(SyntheticTask task, std::size_t count, std::uint64_t seed);

// Single sentences and already fused ones, drawn from the same grammar.
std::vector<std::string> generate_corpus(std::size_t count, std::uint64_t seed);

// "bert": uncased, stems plus "##s"/"##es" pieces, [PAD]-style reserved names.
// "gpt": whole inflected words, "<pad>"-style reserved names, different order.
Vocabulary synthetic_vocab(std::string_view style);

}  // namespace warmstart
