#pragma once

// Tensor archives and name-mapped warm-starting.
//
// Archive file layout (all integers little-endian):
//   "WSCK"  u32 version  u32 family
//   u32 metadata count, then (u32 len, key bytes, u32 len, value bytes) each
//   u32 tensor count, then per tensor: u32 len, name bytes, u32 dtype (1 = f32),
//     u32 rank, u64 dims[rank]
//   u32 CRC32 of every byte above
//   per tensor: f32 payload, u32 CRC32 of the payload bytes

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "warmstart/model.hpp"

namespace warmstart {

inline constexpr std::uint32_t kArchiveVersion = 1;

// bert-like: embeddings/* and encoder/layer_i/{self,ffn}/*
// gpt-like:  embeddings/* and decoder/layer_i/{self,ffn}/*
// native:    canonical names of a full model, copied name for name
enum class ArchiveFamily : std::uint32_t { native = 0, bert_like = 1, gpt_like = 2 };

std::string to_string(ArchiveFamily family);
ArchiveFamily parse_family(std::string_view text);

struct ArchiveEntry {
  std::string name;
  Tensor<float> value;

  friend bool operator==(const ArchiveEntry&, const ArchiveEntry&) = default;
};

struct TensorArchive {
  ArchiveFamily family = ArchiveFamily::native;
  std::map<std::string, std::string> metadata;
  std::vector<ArchiveEntry> entries;

  const ArchiveEntry* find(std::string_view name) const;
  std::vector<std::string> names() const;
  std::size_t parameter_count() const;
  // Throws Error(format) on duplicate names.
  void check_unique() const;

  friend bool operator==(const TensorArchive&, const TensorArchive&) = default;
};

std::string serialize_archive(const TensorArchive& archive);
TensorArchive parse_archive(std::string_view bytes);
void save_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive load_archive(const std::filesystem::path& path);

// Every unique parameter under its canonical name, in construction order.
template <class T>
TensorArchive archive_from_model(const Seq2SeqModel<T>& model, ArchiveFamily family = ArchiveFamily::native);

enum class WarmSide { encoder, decoder, both };

std::string to_string(WarmSide side);
WarmSide parse_side(std::string_view text);

struct InitReport {
  std::vector<std::string> warm_names;    // unique parameters, canonical names
  std::vector<std::string> random_names;
  std::size_t warm_params = 0;
  std::size_t random_params = 0;
  std::vector<std::string> unused_archive_names;

  std::size_t total() const noexcept { return warm_params + random_params; }
};

// Copies matched archive tensors into the model. Parameters the archive does
// not cover keep their current values. A positional table longer than the
// model's is truncated to its first max_positions rows.
template <class T>
InitReport warm_start(Seq2SeqModel<T>& model, const TensorArchive& archive, WarmSide side);

// Several sources at once (e.g. one archive per side). A parameter counts as
// warm when any source covered it.
template <class T>
InitReport warm_start(Seq2SeqModel<T>& model,
                      const std::vector<std::pair<const TensorArchive*, WarmSide>>& sources);

// Report for a model nothing was copied into.
template <class T>
InitReport cold_report(const Seq2SeqModel<T>& model);

}  // namespace warmstart
