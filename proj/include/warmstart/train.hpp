#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "warmstart/adam.hpp"
#include "warmstart/checkpoint.hpp"
#include "warmstart/dataset.hpp"
#include "warmstart/model.hpp"
#include "warmstart/vocab.hpp"

namespace warmstart {

struct TrainSchedule {
  double base_rate = 0.05;
  std::size_t warmup_steps = 400;
  std::size_t hidden_size = 768;
  std::size_t total_steps = 2000;
  std::size_t batch_size = 32;

  void validate() const;
};

// base_rate * h^-1/2 * min(step * warmup^-3/2, step^-1/2); step counts from 1.
double learning_rate(const TrainSchedule& schedule, std::size_t step);

// Parameters matching any glob stay fixed for steps 1..unfreeze_at_step.
struct FreezeSpec {
  std::vector<std::string> globs;
  std::size_t unfreeze_at_step = 0;
};

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  TrainSchedule schedule;
  std::optional<FreezeSpec> freeze;
  std::uint64_t seed = 1;
  std::size_t log_every = 10;
  AdamConfig adam;
  TokenId source_pad = 0;
  TokenId target_pad = 0;
  // Called after every `callback_every` steps; returning true stops training.
  std::size_t callback_every = 0;
  std::function<bool(std::size_t step)> callback;
};

struct TrainResult {
  std::vector<LossPoint> curve;
  std::size_t steps_run = 0;
  bool stopped_early = false;
};

// Teacher-forced Adam training. Batches come from a seeded per-epoch shuffle.
// A non-finite loss or gradient raises Error(divergence) naming the step.
template <class T>
TrainResult train(Seq2SeqModel<T>& model, const std::vector<EncodedExample>& data, const TrainOptions& options);

std::string format_loss_csv(const std::vector<LossPoint>& curve, const std::string& header = "");

// Names of the model's unique parameters matched by the spec's globs.
template <class T>
std::vector<std::string> frozen_names(const Seq2SeqModel<T>& model, const FreezeSpec& spec);

enum class PretrainObjective { masked, causal };

std::string to_string(PretrainObjective objective);
PretrainObjective parse_objective(std::string_view text);

struct PretrainOptions {
  PretrainObjective objective = PretrainObjective::masked;
  TrainSchedule schedule;
  std::uint64_t seed = 1;
  double mask_rate = 0.15;
  std::size_t log_every = 10;
};

struct PretrainResult {
  TensorArchive archive;  // bert-like for masked, gpt-like for causal
  std::vector<LossPoint> curve;
};

// Trains an encoder-only (masked) or decoder-only (causal) stack on the
// corpus. `config` supplies sizes; stack flags are set here. Masked
// training needs the vocabulary's [MASK] token; of the selected positions
// 80% become [MASK], 10% a random non-special token and 10% stay unchanged.
PretrainResult toy_pretrain(const ModelConfig& config, const std::vector<std::vector<TokenId>>& corpus,
                            const Vocabulary& vocab, const PretrainOptions& options);

ModelConfig pretrain_model_config(ModelConfig config, PretrainObjective objective);

// Positions chosen for masked prediction: 15% of real, non-special tokens
// (at least one per non-empty sentence), with their corrupted replacements.
struct MaskedBatch {
  TokenBatch input;
  std::vector<std::size_t> rows;    // flattened positions predicted
  std::vector<TokenId> labels;      // original tokens
};
MaskedBatch make_masked_batch(const std::vector<std::vector<TokenId>>& sentences, const Vocabulary& vocab,
                              double mask_rate, Rng& rng);

template <class T>
double masked_token_accuracy(const Seq2SeqModel<T>& model, const std::vector<std::vector<TokenId>>& corpus,
                             const Vocabulary& vocab, std::uint64_t seed);

// exp(mean next-token NLL) over BOS sentence EOS streams.
template <class T>
double causal_perplexity(const Seq2SeqModel<T>& model, const std::vector<std::vector<TokenId>>& corpus,
                         const Vocabulary& vocab);

}  // namespace warmstart
