#pragma once

// The ten initialization setups as data, plus the ablation modifiers that
// compose with any of them.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "warmstart/checkpoint.hpp"
#include "warmstart/config.hpp"
#include "warmstart/model.hpp"

namespace warmstart {

enum class SourceKind { none, bert, roberta, gpt };

std::string to_string(SourceKind kind);

struct InitScheme {
  std::string name;
  SourceKind encoder_source = SourceKind::none;
  SourceKind decoder_source = SourceKind::none;
  bool share_encoder_decoder = false;
  bool decoder_only = false;
  std::string input_vocab = "bert";   // vocabulary role: "bert" or "gpt"
  std::string output_vocab = "bert";
  bool separate_embeddings = false;   // one embedding matrix per side
};

const std::vector<InitScheme>& all_schemes();
// Throws Error(scheme) for unknown names.
const InitScheme& scheme_by_name(std::string_view name);

struct SchemeModifiers {
  bool embeddings_only = false;          // keep only embedding blocks of the archives
  bool exclude_word_embeddings = false;  // warm-start everything except token embedding matrices
  std::vector<std::size_t> layer_subset; // 1-based source layers; empty keeps all

  bool any() const noexcept { return embeddings_only || exclude_word_embeddings || !layer_subset.empty(); }
};

// Structural flags of the scheme applied to a base config (layer sizes and
// vocabulary sizes are taken from `base`; vocab sizes should already match
// the scheme's vocabulary roles).
ModelConfig apply_scheme(ModelConfig base, const InitScheme& scheme);

// Closed-form accounting with the warm-start prediction for the scheme.
ParamReport count_params(const ModelConfig& config, const InitScheme& scheme, const SchemeModifiers& modifiers = {});

struct SchemeArchives {
  const TensorArchive* encoder = nullptr;
  const TensorArchive* decoder = nullptr;
};

template <class T>
struct BuiltModel {
  Seq2SeqModel<T> model;
  InitReport report;
};

// Assembles the model for the scheme and warm-starts each side. A side that
// needs an archive falls back to the other side's archive when both sides
// name the same source kind.
template <class T>
BuiltModel<T> build_model(const ModelConfig& config, const InitScheme& scheme, const SchemeArchives& archives,
                          std::uint64_t seed, const SchemeModifiers& modifiers = {});

// Applies the modifiers to an archive.
TensorArchive modify_archive(const TensorArchive& archive, const SchemeModifiers& modifiers);

SchemeModifiers modifiers_from_config(const Config& config);

}  // namespace warmstart
