#pragma once

// A tiny generate -> pretrain -> train -> predict -> evaluate run, driven
// through the same command functions as the CLI.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "warmstart/config.hpp"
#include "warmstart/experiment.hpp"

namespace wstest {

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline constexpr const char* kTinyModel =
    "model.num_layers=1\nmodel.hidden_size=16\nmodel.filter_size=32\nmodel.num_heads=2\n"
    "model.max_positions=48\nmodel.dropout=0.1\n";

// Writes the configs under `dir` and runs every stage. Returns artifact
// name -> bytes for everything the stages wrote.
inline std::map<std::string, std::string> run_tiny_pipeline(const std::filesystem::path& dir, std::uint64_t seed,
                                                            std::size_t steps = 30) {
  using namespace warmstart;
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string n = std::to_string(steps);
  write_file(dir / "generate.conf",
             "out=data\ngenerate.tasks=fusion-toy\ngenerate.train_count=200\ngenerate.eval_count=20\n"
             "generate.corpus_count=300\n");
  write_file(dir / "pretrain.conf", std::string("out=pre\nvocab.bert=data/vocab_bert.txt\nvocab.gpt=data/vocab_gpt.txt\n") +
                                        kTinyModel +
                                        "pretrain.objective=masked\npretrain.vocab=bert\npretrain.corpus=data/corpus.txt\n"
                                        "pretrain.steps=" + n + "\npretrain.batch_size=8\npretrain.warmup=10\npretrain.log_every=5\n");
  write_file(dir / "train.conf",
             std::string("out=fine\nscheme=BERT2RND\nvocab.bert=data/vocab_bert.txt\nvocab.gpt=data/vocab_gpt.txt\n"
                         "archive.bert=pre/pretrain.wsck\n") +
                 kTinyModel +
                 "data.train=data/fusion-toy/train.tsv\ndata.eval=data/fusion-toy/eval.tsv\ndata.max_source=40\n"
                 "data.max_target=24\ntrain.steps=" + n + "\ntrain.batch_size=8\ntrain.warmup=10\ntrain.log_every=5\n"
                 "decode.beam_size=2\neval.metrics=exact,sari,bleu,rougeL\n");
  auto ctx = [&](const char* name) { return make_context(Config::load(dir / name), seed); };
  std::vector<fs::path> written;
  for (auto& p : cmd_generate_data(ctx("generate.conf"))) written.push_back(p);
  for (auto& p : cmd_pretrain(ctx("pretrain.conf"))) written.push_back(p);
  const auto train_ctx = ctx("train.conf");
  for (auto* cmd : {&cmd_train, &cmd_predict, &cmd_evaluate})
    for (auto& p : cmd(train_ctx)) written.push_back(p);
  std::map<std::string, std::string> out;
  for (const auto& p : written) out[fs::relative(p, dir).generic_string()] = read_file(p);
  return out;
}

}  // namespace wstest
