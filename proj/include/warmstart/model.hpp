#pragma once

// BERT-compatible Transformer encoder, the derived decoder (causal
// self-attention plus encoder-decoder attention), embeddings and loss.
//
// Canonical parameter names:
//   embeddings/{word,position,token_type,ln_gain,ln_bias}           input side (or the only block)
//   decoder/embeddings/{...}                                         output side when not shared
//   {encoder,decoder}/layer_{i}/{self,cross}/{query,key,value,output}_{w,b}
//   {encoder,decoder}/layer_{i}/{self,cross}/ln_{gain,bias}
//   {encoder,decoder}/layer_{i}/ffn/{intermediate,output}_{w,b}
//   {encoder,decoder}/layer_{i}/ffn/ln_{gain,bias}
//   output/{weight,bias}                                             untied head only
// Dense weights are stored [in, out] and applied as x * W.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "warmstart/autodiff.hpp"
#include "warmstart/batch.hpp"

namespace warmstart {

inline constexpr std::size_t kMaxPositions = 512;

struct ModelConfig {
  std::size_t num_layers = 2;  // per stack
  std::size_t hidden_size = 32;
  std::size_t filter_size = 128;
  std::size_t num_heads = 4;
  std::size_t input_vocab_size = 0;
  std::size_t output_vocab_size = 0;
  std::size_t max_positions = kMaxPositions;
  bool share_encoder_decoder = false;
  bool tie_output_to_embedding = true;
  bool decoder_only = false;
  bool encoder_only = false;     // masked-LM pretraining stack
  bool share_embeddings = true;  // decoder reads the encoder's embedding block
  double dropout = 0.1;          // attention and hidden; training only

  // Throws Error(config) when an invariant is violated.
  void validate() const;
  bool has_encoder() const noexcept { return !decoder_only; }
  bool has_decoder() const noexcept { return !encoder_only; }
  bool separate_decoder_embeddings() const noexcept {
    return !decoder_only && !encoder_only && !share_embeddings;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Parameter accounting. `embedding` counts token embedding matrices only;
// `embeddings_block` adds positional, token-type and layer-norm tensors.
struct ParamReport {
  std::size_t total = 0;
  std::size_t embedding = 0;
  std::size_t embeddings_block = 0;
  std::size_t encoder = 0;
  std::size_t decoder = 0;  // self-attention and feed-forward; zero when shared with the encoder
  std::size_t cross_attention = 0;
  std::size_t output_head = 0;
  std::size_t warm_started = 0;
  std::size_t random = 0;

  friend bool operator==(const ParamReport&, const ParamReport&) = default;
};

// Closed-form sizes of the building blocks.
std::size_t attention_param_count(std::size_t hidden);
std::size_t feed_forward_param_count(std::size_t hidden, std::size_t filter);
std::size_t layer_param_count(std::size_t hidden, std::size_t filter);  // self-attention + FFN + two layer-norms
std::size_t cross_attention_param_count(std::size_t hidden);            // attention + its layer-norm
std::size_t embedding_block_param_count(std::size_t vocab, std::size_t positions, std::size_t hidden);

// Structure-only accounting (everything counted as random).
ParamReport count_params(const ModelConfig& config);

template <class T>
struct AttentionParams {
  ParamPtr<T> query_w, query_b, key_w, key_b, value_w, value_b, output_w, output_b, ln_gain, ln_bias;
};

template <class T>
struct FeedForwardParams {
  ParamPtr<T> intermediate_w, intermediate_b, output_w, output_b, ln_gain, ln_bias;
};

template <class T>
struct EmbeddingParams {
  ParamPtr<T> word, position, token_type, ln_gain, ln_bias;
};

template <class T>
struct LayerParams {
  AttentionParams<T> self;
  std::optional<AttentionParams<T>> cross;
  FeedForwardParams<T> ffn;
};

struct ForwardOptions {
  bool training = false;  // enables dropout when rng is set
  Rng* rng = nullptr;
};

enum class EmbeddingSide { input, output };

// Encoder states detached from any graph, for decoding.
template <class T>
struct EncodedSources {
  TokenBatch source;
  Tensor<T> states;  // [batch * source.length, hidden]; empty for decoder-only models
};

template <class T>
class Seq2SeqModel {
 public:
  struct Memory {
    Var states;
    std::size_t length = 0;
    std::vector<std::uint8_t> mask;  // batch * length
  };

  // Random initialization: dense and embedding matrices from a truncated
  // normal (stddev 0.02) drawn in canonical order from `seed`; biases zero,
  // layer-norm gains one.
  Seq2SeqModel(const ModelConfig& config, std::uint64_t seed);

  Seq2SeqModel(const Seq2SeqModel&) = delete;
  Seq2SeqModel& operator=(const Seq2SeqModel&) = delete;
  Seq2SeqModel(Seq2SeqModel&&) noexcept = default;
  Seq2SeqModel& operator=(Seq2SeqModel&&) noexcept = default;

  const ModelConfig& config() const noexcept { return config_; }

  // Unique parameter storage in canonical order.
  const std::vector<ParamPtr<T>>& parameters() const noexcept { return params_; }
  // Every name a parameter is reachable under, aliases included.
  const std::vector<std::pair<std::string, ParamPtr<T>>>& named_parameters() const noexcept { return names_; }
  ParamPtr<T> find(std::string_view name) const;
  Parameter<T>& at(std::string_view name) const;
  std::size_t parameter_count() const;

  const EmbeddingParams<T>& input_embeddings() const noexcept { return embeddings_; }
  const EmbeddingParams<T>& output_embeddings() const noexcept {
    return decoder_embeddings_ ? *decoder_embeddings_ : embeddings_;
  }
  const std::vector<LayerParams<T>>& encoder_layers() const noexcept { return encoder_; }
  const std::vector<LayerParams<T>>& decoder_layers() const noexcept { return decoder_; }

  void zero_grad();

  // --- forward ---
  Var embed(Graph<T>& g, const TokenBatch& batch, EmbeddingSide side, const ForwardOptions& opts = {}) const;
  Var encoder_forward(Graph<T>& g, const TokenBatch& source, const ForwardOptions& opts = {}) const;
  // Hidden states [batch * target.length, hidden]. For decoder-only models the
  // target is the whole stream and memory must be absent.
  Var decoder_hidden(Graph<T>& g, const TokenBatch& target, const std::optional<Memory>& memory,
                     const ForwardOptions& opts = {}) const;
  Var decoder_forward(Graph<T>& g, const TokenBatch& target, const std::optional<Memory>& memory,
                      const ForwardOptions& opts = {}) const;
  // Output projection (tied or free) of hidden rows.
  Var logits(Graph<T>& g, Var hidden) const;
  Memory make_memory(Var states, const TokenBatch& source) const;

  // Teacher-forced mean cross-entropy of target positions 1..L-1.
  Var lm_loss(Graph<T>& g, const Seq2SeqBatch& batch, const ForwardOptions& opts = {}) const;

  // --- inference helpers ---
  EncodedSources<T> encode_sources(std::span<const std::vector<TokenId>> sources, TokenId pad) const;
  // Log-probabilities [prefixes.size(), output_vocab] of the token following
  // each prefix; prefix i conditions on source row source_rows[i].
  Tensor<T> next_log_probs(const EncodedSources<T>& encoded, std::span<const std::size_t> source_rows,
                           std::span<const std::vector<TokenId>> prefixes, TokenId pad) const;

 private:
  ParamPtr<T> make(const std::string& name, Shape shape, Rng& rng, int kind);
  void alias(const std::string& name, const ParamPtr<T>& p);
  AttentionParams<T> make_attention(const std::string& prefix, Rng& rng);
  FeedForwardParams<T> make_ffn(const std::string& prefix, Rng& rng);
  EmbeddingParams<T> make_embeddings(const std::string& prefix, std::size_t vocab, Rng& rng);
  void alias_attention(const std::string& prefix, const AttentionParams<T>& a);
  void alias_ffn(const std::string& prefix, const FeedForwardParams<T>& f);

  Var attention_block(Graph<T>& g, const AttentionParams<T>& p, Var x, Var kv, AttentionSpec spec,
                      const ForwardOptions& opts) const;
  Var ffn_block(Graph<T>& g, const FeedForwardParams<T>& p, Var x, const ForwardOptions& opts) const;

  ModelConfig config_;
  std::vector<ParamPtr<T>> params_;
  std::vector<std::pair<std::string, ParamPtr<T>>> names_;
  std::unordered_map<std::string, ParamPtr<T>> by_name_;
  EmbeddingParams<T> embeddings_;
  std::optional<EmbeddingParams<T>> decoder_embeddings_;
  std::vector<LayerParams<T>> encoder_;
  std::vector<LayerParams<T>> decoder_;
  ParamPtr<T> output_weight_, output_bias_;
};

using Model = Seq2SeqModel<float>;

}  // namespace warmstart
