#pragma once

// Config-driven experiment steps behind the command-line tool and the Python
// module. Each step reads its section of a flat config, writes its artifacts
// under the output directory and returns their paths.
//
// Every text artifact begins with artifact_header(); archives carry the same
// values as metadata (config_hash, seed). Inputs are never modified.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "warmstart/checkpoint.hpp"
#include "warmstart/config.hpp"
#include "warmstart/model.hpp"
#include "warmstart/schemes.hpp"
#include "warmstart/vocab.hpp"

namespace warmstart {

struct RunContext {
  Config config;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir;

  std::string config_hash() const { return config.hash_hex(); }
};

// Seed: the override, else the config's `seed` key, else 1. Output
// directory: the override, else `out` (relative to the config file), else
// the current directory. Unknown key sections raise Error(config).
RunContext make_context(Config config, std::optional<std::uint64_t> seed = std::nullopt,
                        std::optional<std::filesystem::path> out = std::nullopt);

// "# warmstart config_hash=<hex> seed=<n>\n"
std::string artifact_header(const RunContext& ctx);

// Sizes from model.* (layers, hidden, filter, heads, positions, dropout).
ModelConfig base_model_config(const Config& config);

// Model config for a scheme with vocabulary sizes filled in by role.
ModelConfig scheme_model_config(const ModelConfig& base, const InitScheme& scheme, std::size_t bert_vocab,
                                std::size_t gpt_vocab);

// ModelConfig as archive metadata and back (throws Error(format) when keys
// are missing).
void store_model_config(const ModelConfig& config, std::map<std::string, std::string>& metadata);
ModelConfig load_model_config(const std::map<std::string, std::string>& metadata);

std::vector<std::filesystem::path> cmd_generate_data(const RunContext& ctx);
std::vector<std::filesystem::path> cmd_pretrain(const RunContext& ctx);
std::vector<std::filesystem::path> cmd_train(const RunContext& ctx);
std::vector<std::filesystem::path> cmd_predict(const RunContext& ctx);
std::vector<std::filesystem::path> cmd_evaluate(const RunContext& ctx);
std::vector<std::filesystem::path> cmd_convert(const RunContext& ctx);

// Table of total / embed. / init. / random per scheme (`scheme=all` lists
// all ten), in millions and exact counts.
std::string count_params_table(const RunContext& ctx);

}  // namespace warmstart
