#pragma once

// Foreign-layout conversion and the layer/embedding selectors.
//
// Rules file: one rule per line, '#' starts a comment.
//   rename <from> <to>                       '*' captures a run of non-'/' characters, '**' any run
//   split3 <glob> axis=<k> [<a> <b> <c>]     default outputs replace "qkv" with query/key/value
//   merge3 <name> axis=<k> [<a> <b> <c>]     inverse of split3; <name> is the fused result
//   transpose <glob>                         rank-1 tensors pass through unchanged
//   skip <glob>                              never transposed, split or merged
//   drop <glob>
// Rules run in file order, each over the whole archive using current names.
// skip globs are checked against the name a tensor has when a shape rule
// reaches it.

#include <filesystem>
#include <string>
#include <vector>

#include "warmstart/checkpoint.hpp"

namespace warmstart {

struct MappingRule {
  enum class Kind { rename, split3, merge3, transpose, skip, drop };
  Kind kind = Kind::rename;
  std::string pattern;
  std::string target;              // rename target or merge3 result name
  std::vector<std::string> parts;  // split3/merge3 piece names
  std::size_t axis = 0;
  std::size_t line = 0;
};

class MappingRules {
 public:
  MappingRules() = default;
  explicit MappingRules(std::vector<MappingRule> rules);

  static MappingRules parse(std::string_view text);
  static MappingRules load(const std::filesystem::path& path);
  std::string serialize() const;

  const std::vector<MappingRule>& rules() const noexcept { return rules_; }

  // Rules that undo this set; throws Error(rule) when a rule has no inverse.
  MappingRules inverse() const;

 private:
  std::vector<MappingRule> rules_;
};

struct ConvertResult {
  TensorArchive archive;
  std::vector<std::string> unmatched;  // input names no rule touched
};

ConvertResult convert_foreign(const TensorArchive& archive, const MappingRules& rules);

// Glob: '*' matches a run of characters other than '/', '**' matches any run.
bool glob_match(std::string_view pattern, std::string_view name);

// Target layer i of every stack becomes source layer source_layers[i]
// (1-based, as layers are usually numbered). Non-layer tensors pass through.
TensorArchive select_layer_subset(const TensorArchive& archive, const std::vector<std::size_t>& source_layers);
std::vector<std::size_t> parse_layer_list(std::string_view text);  // "9,10,13-18,23,24"

// Only the embedding blocks (token, positional, token-type, layer-norm).
TensorArchive embeddings_only(const TensorArchive& archive);

// GPT-2-style layout of a gpt-like archive: fused transposed attention
// projections and dotted names. The bundled rules convert it back.
TensorArchive to_gpt_layout(const TensorArchive& archive);
std::string gpt_layout_rules();

// Number of encoder/decoder layers present in an archive.
std::size_t archive_layer_count(const TensorArchive& archive, std::string_view stack);

}  // namespace warmstart
