#include "warmstart/model.hpp"

#include <algorithm>

#include "warmstart/error.hpp"

namespace warmstart {

namespace {

enum InitKind { kNormal = 0, kZeros = 1, kOnes = 2 };

constexpr double kInitStddev = 0.02;

std::string layer_prefix(const char* stack, std::size_t i) {
  return std::string(stack) + "/layer_" + std::to_string(i) + "/";
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::config, msg); };
  if (num_layers == 0) fail("num_layers must be positive");
  if (hidden_size == 0 || filter_size == 0) fail("hidden_size and filter_size must be positive");
  if (num_heads == 0 || hidden_size % num_heads != 0) {
    fail("hidden_size " + std::to_string(hidden_size) + " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (max_positions == 0 || max_positions > kMaxPositions) {
    fail("max_positions must be in [1, " + std::to_string(kMaxPositions) + "], got " + std::to_string(max_positions));
  }
  if (input_vocab_size == 0 || output_vocab_size == 0) fail("vocabulary sizes must be positive");
  if (decoder_only && encoder_only) fail("decoder_only and encoder_only are exclusive");
  if (share_encoder_decoder && (decoder_only || encoder_only)) fail("share_encoder_decoder needs both stacks");
  if (share_encoder_decoder && input_vocab_size != output_vocab_size) {
    fail("share_encoder_decoder needs identical input and output vocabularies");
  }
  if ((decoder_only || encoder_only || share_embeddings) && input_vocab_size != output_vocab_size) {
    fail("a single embedding block needs identical input and output vocabularies");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

std::size_t attention_param_count(std::size_t h) { return 4 * (h * h + h); }

std::size_t feed_forward_param_count(std::size_t h, std::size_t f) { return (h * f + f) + (f * h + h); }

std::size_t layer_param_count(std::size_t h, std::size_t f) {
  return attention_param_count(h) + feed_forward_param_count(h, f) + 2 * (2 * h);
}

std::size_t cross_attention_param_count(std::size_t h) { return attention_param_count(h) + 2 * h; }

std::size_t embedding_block_param_count(std::size_t v, std::size_t p, std::size_t h) {
  return v * h + p * h + 2 * h + 2 * h;
}

ParamReport count_params(const ModelConfig& c) {
  c.validate();
  const std::size_t h = c.hidden_size;
  ParamReport r;
  r.embedding = c.input_vocab_size * h;
  r.embeddings_block = embedding_block_param_count(c.input_vocab_size, c.max_positions, h);
  if (c.separate_decoder_embeddings()) {
    r.embedding += c.output_vocab_size * h;
    r.embeddings_block += embedding_block_param_count(c.output_vocab_size, c.max_positions, h);
  }
  const std::size_t layer = layer_param_count(h, c.filter_size);
  if (c.has_encoder()) r.encoder = c.num_layers * layer;
  if (c.has_decoder() && !c.share_encoder_decoder) r.decoder = c.num_layers * layer;
  if (c.has_encoder() && c.has_decoder()) r.cross_attention = c.num_layers * cross_attention_param_count(h);
  if (!c.tie_output_to_embedding) r.output_head = h * c.output_vocab_size + c.output_vocab_size;
  r.total = r.embeddings_block + r.encoder + r.decoder + r.cross_attention + r.output_head;
  r.random = r.total;
  return r;
}

template <class T>
ParamPtr<T> Seq2SeqModel<T>::make(const std::string& name, Shape shape, Rng& rng, int kind) {
  Tensor<T> value(std::move(shape));
  if (kind == kNormal) {
    for (auto& x : value.data()) x = static_cast<T>(truncated_normal(rng, kInitStddev));
  } else if (kind == kOnes) {
    value.fill(T{1});
  }
  auto p = std::make_shared<Parameter<T>>(name, std::move(value));
  params_.push_back(p);
  alias(name, p);
  return p;
}

template <class T>
void Seq2SeqModel<T>::alias(const std::string& name, const ParamPtr<T>& p) {
  names_.emplace_back(name, p);
  by_name_.emplace(name, p);
}

template <class T>
AttentionParams<T> Seq2SeqModel<T>::make_attention(const std::string& prefix, Rng& rng) {
  const std::size_t h = config_.hidden_size;
  AttentionParams<T> a;
  a.query_w = make(prefix + "query_w", {h, h}, rng, kNormal);
  a.query_b = make(prefix + "query_b", {h}, rng, kZeros);
  a.key_w = make(prefix + "key_w", {h, h}, rng, kNormal);
  a.key_b = make(prefix + "key_b", {h}, rng, kZeros);
  a.value_w = make(prefix + "value_w", {h, h}, rng, kNormal);
  a.value_b = make(prefix + "value_b", {h}, rng, kZeros);
  a.output_w = make(prefix + "output_w", {h, h}, rng, kNormal);
  a.output_b = make(prefix + "output_b", {h}, rng, kZeros);
  a.ln_gain = make(prefix + "ln_gain", {h}, rng, kOnes);
  a.ln_bias = make(prefix + "ln_bias", {h}, rng, kZeros);
  return a;
}

template <class T>
FeedForwardParams<T> Seq2SeqModel<T>::make_ffn(const std::string& prefix, Rng& rng) {
  const std::size_t h = config_.hidden_size, f = config_.filter_size;
  FeedForwardParams<T> p;
  p.intermediate_w = make(prefix + "intermediate_w", {h, f}, rng, kNormal);
  p.intermediate_b = make(prefix + "intermediate_b", {f}, rng, kZeros);
  p.output_w = make(prefix + "output_w", {f, h}, rng, kNormal);
  p.output_b = make(prefix + "output_b", {h}, rng, kZeros);
  p.ln_gain = make(prefix + "ln_gain", {h}, rng, kOnes);
  p.ln_bias = make(prefix + "ln_bias", {h}, rng, kZeros);
  return p;
}

template <class T>
EmbeddingParams<T> Seq2SeqModel<T>::make_embeddings(const std::string& prefix, std::size_t vocab, Rng& rng) {
  const std::size_t h = config_.hidden_size;
  EmbeddingParams<T> e;
  e.word = make(prefix + "word", {vocab, h}, rng, kNormal);
  e.position = make(prefix + "position", {config_.max_positions, h}, rng, kNormal);
  e.token_type = make(prefix + "token_type", {2, h}, rng, kNormal);
  e.ln_gain = make(prefix + "ln_gain", {h}, rng, kOnes);
  e.ln_bias = make(prefix + "ln_bias", {h}, rng, kZeros);
  return e;
}

template <class T>
void Seq2SeqModel<T>::alias_attention(const std::string& prefix, const AttentionParams<T>& a) {
  alias(prefix + "query_w", a.query_w);
  alias(prefix + "query_b", a.query_b);
  alias(prefix + "key_w", a.key_w);
  alias(prefix + "key_b", a.key_b);
  alias(prefix + "value_w", a.value_w);
  alias(prefix + "value_b", a.value_b);
  alias(prefix + "output_w", a.output_w);
  alias(prefix + "output_b", a.output_b);
  alias(prefix + "ln_gain", a.ln_gain);
  alias(prefix + "ln_bias", a.ln_bias);
}

template <class T>
void Seq2SeqModel<T>::alias_ffn(const std::string& prefix, const FeedForwardParams<T>& f) {
  alias(prefix + "intermediate_w", f.intermediate_w);
  alias(prefix + "intermediate_b", f.intermediate_b);
  alias(prefix + "output_w", f.output_w);
  alias(prefix + "output_b", f.output_b);
  alias(prefix + "ln_gain", f.ln_gain);
  alias(prefix + "ln_bias", f.ln_bias);
}

template <class T>
Seq2SeqModel<T>::Seq2SeqModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  embeddings_ = make_embeddings("embeddings/", config_.input_vocab_size, rng);
  if (config_.separate_decoder_embeddings()) {
    decoder_embeddings_ = make_embeddings("decoder/embeddings/", config_.output_vocab_size, rng);
  }
  if (config_.has_encoder()) {
    for (std::size_t i = 0; i < config_.num_layers; ++i) {
      const auto prefix = layer_prefix("encoder", i);
      LayerParams<T> layer;
      layer.self = make_attention(prefix + "self/", rng);
      layer.ffn = make_ffn(prefix + "ffn/", rng);
      encoder_.push_back(std::move(layer));
    }
  }
  if (config_.has_decoder()) {
    for (std::size_t i = 0; i < config_.num_layers; ++i) {
      const auto prefix = layer_prefix("decoder", i);
      LayerParams<T> layer;
      if (config_.share_encoder_decoder) {
        layer.self = encoder_[i].self;
        alias_attention(prefix + "self/", layer.self);
      } else {
        layer.self = make_attention(prefix + "self/", rng);
      }
      if (config_.has_encoder()) layer.cross = make_attention(prefix + "cross/", rng);
      if (config_.share_encoder_decoder) {
        layer.ffn = encoder_[i].ffn;
        alias_ffn(prefix + "ffn/", layer.ffn);
      } else {
        layer.ffn = make_ffn(prefix + "ffn/", rng);
      }
      decoder_.push_back(std::move(layer));
    }
  }
  if (!config_.tie_output_to_embedding) {
    output_weight_ = make("output/weight", {config_.hidden_size, config_.output_vocab_size}, rng, kNormal);
    output_bias_ = make("output/bias", {config_.output_vocab_size}, rng, kZeros);
  }
}

template <class T>
ParamPtr<T> Seq2SeqModel<T>::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  return it == by_name_.end() ? nullptr : it->second;
}

template <class T>
Parameter<T>& Seq2SeqModel<T>::at(std::string_view name) const {
  auto p = find(name);
  if (!p) throw Error(ErrorCode::id, "model has no parameter " + std::string(name));
  return *p;
}

template <class T>
std::size_t Seq2SeqModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <class T>
void Seq2SeqModel<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <class T>
Var Seq2SeqModel<T>::embed(Graph<T>& g, const TokenBatch& batch, EmbeddingSide side,
                           const ForwardOptions& opts) const {
  const auto& e = side == EmbeddingSide::input ? embeddings_ : output_embeddings();
  const std::size_t n = batch.batch * batch.length;
  if (batch.ids.size() != n || batch.mask.size() != n) {
    throw Error(ErrorCode::shape, "token batch holds " + std::to_string(batch.ids.size()) + " ids and " +
                                      std::to_string(batch.mask.size()) + " mask entries for " +
                                      std::to_string(batch.batch) + "x" + std::to_string(batch.length));
  }
  // Padded slots read row 0 of each table; attention never looks at them.
  std::vector<TokenId> ids(n, 0);
  std::vector<TokenId> pos = batch.positions();
  for (std::size_t i = 0; i < n; ++i) {
    if (!batch.mask[i]) {
      pos[i] = 0;
      continue;
    }
    ids[i] = batch.ids[i];
    if (static_cast<std::size_t>(pos[i]) >= config_.max_positions) {
      throw Error(ErrorCode::length, "sequence of more than " + std::to_string(config_.max_positions) +
                                         " tokens exceeds max_positions");
    }
  }
  const std::vector<TokenId> types(n, 0);
  Var x = embedding(g, g.parameter(*e.word), std::span<const TokenId>(ids));
  x = add(g, x, embedding(g, g.parameter(*e.position), std::span<const TokenId>(pos)));
  x = add(g, x, embedding(g, g.parameter(*e.token_type), std::span<const TokenId>(types)));
  x = layer_norm(g, x, g.parameter(*e.ln_gain), g.parameter(*e.ln_bias));
  if (opts.training && opts.rng) x = dropout(g, x, config_.dropout, *opts.rng);
  return x;
}

template <class T>
Var Seq2SeqModel<T>::attention_block(Graph<T>& g, const AttentionParams<T>& p, Var x, Var kv, AttentionSpec spec,
                                     const ForwardOptions& opts) const {
  Var q = add_bias(g, matmul(g, x, g.parameter(*p.query_w)), g.parameter(*p.query_b));
  Var k = add_bias(g, matmul(g, kv, g.parameter(*p.key_w)), g.parameter(*p.key_b));
  Var v = add_bias(g, matmul(g, kv, g.parameter(*p.value_w)), g.parameter(*p.value_b));
  spec.heads = config_.num_heads;
  Rng* rng = opts.training ? opts.rng : nullptr;
  spec.dropout = rng ? config_.dropout : 0.0;
  Var ctx = attention(g, q, k, v, spec, rng);
  Var out = add_bias(g, matmul(g, ctx, g.parameter(*p.output_w)), g.parameter(*p.output_b));
  if (rng) out = dropout(g, out, config_.dropout, *rng);
  return layer_norm(g, add(g, x, out), g.parameter(*p.ln_gain), g.parameter(*p.ln_bias));
}

template <class T>
Var Seq2SeqModel<T>::ffn_block(Graph<T>& g, const FeedForwardParams<T>& p, Var x, const ForwardOptions& opts) const {
  Var hmid = gelu(g, add_bias(g, matmul(g, x, g.parameter(*p.intermediate_w)), g.parameter(*p.intermediate_b)));
  Var out = add_bias(g, matmul(g, hmid, g.parameter(*p.output_w)), g.parameter(*p.output_b));
  if (opts.training && opts.rng) out = dropout(g, out, config_.dropout, *opts.rng);
  return layer_norm(g, add(g, x, out), g.parameter(*p.ln_gain), g.parameter(*p.ln_bias));
}

template <class T>
Var Seq2SeqModel<T>::encoder_forward(Graph<T>& g, const TokenBatch& source, const ForwardOptions& opts) const {
  if (!config_.has_encoder()) throw Error(ErrorCode::config, "decoder-only model has no encoder");
  if (source.batch == 0) throw Error(ErrorCode::degenerate, "empty source batch");
  for (std::size_t r = 0; r < source.batch; ++r) {
    if (source.real_length(r) == 0) {
      throw Error(ErrorCode::degenerate, "source row " + std::to_string(r) + " has no real tokens");
    }
  }
  Var x = embed(g, source, EmbeddingSide::input, opts);
  AttentionSpec spec;
  spec.batch = source.batch;
  spec.query_len = spec.key_len = source.length;
  spec.key_valid = source.mask;
  for (const auto& layer : encoder_) {
    x = attention_block(g, layer.self, x, x, spec, opts);
    x = ffn_block(g, layer.ffn, x, opts);
  }
  return x;
}

template <class T>
typename Seq2SeqModel<T>::Memory Seq2SeqModel<T>::make_memory(Var states, const TokenBatch& source) const {
  return Memory{states, source.length, source.mask};
}

template <class T>
Var Seq2SeqModel<T>::decoder_hidden(Graph<T>& g, const TokenBatch& target, const std::optional<Memory>& memory,
                                    const ForwardOptions& opts) const {
  if (!config_.has_decoder()) throw Error(ErrorCode::config, "encoder-only model has no decoder");
  if (config_.decoder_only && memory) throw Error(ErrorCode::shape, "decoder-only model takes no encoder memory");
  if (!config_.decoder_only && !memory) throw Error(ErrorCode::shape, "decoder needs encoder memory");
  if (memory) {
    const auto& states = g.value(memory->states);
    if (memory->mask.size() != target.batch * memory->length || states.rank() != 2 ||
        states.rows() != memory->mask.size()) {
      throw Error(ErrorCode::shape, "memory of " + shape_string(states.shape()) + " does not match source mask of " +
                                        std::to_string(memory->mask.size()) + " entries for batch " +
                                        std::to_string(target.batch));
    }
  }
  Var x = embed(g, target, config_.decoder_only ? EmbeddingSide::input : EmbeddingSide::output, opts);
  AttentionSpec self;
  self.batch = target.batch;
  self.query_len = self.key_len = target.length;
  self.key_valid = target.mask;
  self.causal = true;
  AttentionSpec cross;
  if (memory) {
    cross.batch = target.batch;
    cross.query_len = target.length;
    cross.key_len = memory->length;
    cross.key_valid = memory->mask;
  }
  for (const auto& layer : decoder_) {
    x = attention_block(g, layer.self, x, x, self, opts);
    if (layer.cross) x = attention_block(g, *layer.cross, x, memory->states, cross, opts);
    x = ffn_block(g, layer.ffn, x, opts);
  }
  return x;
}

template <class T>
Var Seq2SeqModel<T>::logits(Graph<T>& g, Var hidden) const {
  if (config_.tie_output_to_embedding) {
    const auto& e = config_.decoder_only || config_.encoder_only ? embeddings_ : output_embeddings();
    return matmul_bt(g, hidden, g.parameter(*e.word));
  }
  return add_bias(g, matmul(g, hidden, g.parameter(*output_weight_)), g.parameter(*output_bias_));
}

template <class T>
Var Seq2SeqModel<T>::decoder_forward(Graph<T>& g, const TokenBatch& target, const std::optional<Memory>& memory,
                                     const ForwardOptions& opts) const {
  return logits(g, decoder_hidden(g, target, memory, opts));
}

template <class T>
Var Seq2SeqModel<T>::lm_loss(Graph<T>& g, const Seq2SeqBatch& batch, const ForwardOptions& opts) const {
  const TokenBatch& tgt = batch.target;
  std::vector<std::size_t> rows;
  std::vector<TokenId> labels;
  Var hidden;
  std::size_t stride = tgt.length, offset = 0;
  if (config_.decoder_only) {
    const TokenBatch stream = concat_rows(batch.source, tgt);
    hidden = decoder_hidden(g, stream, std::nullopt, opts);
    stride = stream.length;
    offset = batch.source.length;
  } else {
    auto memory = make_memory(encoder_forward(g, batch.source, opts), batch.source);
    hidden = decoder_hidden(g, tgt, memory, opts);
  }
  for (std::size_t b = 0; b < tgt.batch; ++b) {
    for (std::size_t j = 0; j + 1 < tgt.length; ++j) {
      const std::size_t i = b * tgt.length + j;
      if (!tgt.mask[i] || !tgt.mask[i + 1]) continue;
      rows.push_back(b * stride + offset + j);
      labels.push_back(tgt.ids[i + 1]);
    }
  }
  if (rows.empty()) throw Error(ErrorCode::degenerate, "batch has no target positions to predict");
  Var selected = select_rows(g, hidden, std::span<const std::size_t>(rows));
  return cross_entropy(g, logits(g, selected), std::span<const TokenId>(labels), {});
}

template <class T>
EncodedSources<T> Seq2SeqModel<T>::encode_sources(std::span<const std::vector<TokenId>> sources, TokenId pad) const {
  EncodedSources<T> out;
  out.source = TokenBatch::pack(sources, pad);
  if (config_.has_encoder()) {
    Graph<T> g(false);
    out.states = g.value(encoder_forward(g, out.source));
  }
  return out;
}

template <class T>
Tensor<T> Seq2SeqModel<T>::next_log_probs(const EncodedSources<T>& encoded, std::span<const std::size_t> source_rows,
                                          std::span<const std::vector<TokenId>> prefixes, TokenId pad) const {
  if (source_rows.size() != prefixes.size()) {
    throw Error(ErrorCode::shape, std::to_string(prefixes.size()) + " prefixes for " +
                                      std::to_string(source_rows.size()) + " source rows");
  }
  const std::size_t n = prefixes.size();
  for (auto r : source_rows) {
    if (r >= encoded.source.batch) throw Error(ErrorCode::shape, "source row " + std::to_string(r) + " out of range");
  }
  for (const auto& p : prefixes) {
    if (p.empty()) throw Error(ErrorCode::shape, "decoding prefix must hold at least BOS");
  }
  Graph<T> g(false);
  std::vector<std::size_t> last(n);
  Var hidden;
  if (config_.decoder_only) {
    std::vector<std::vector<TokenId>> streams(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = source_rows[i];
      const auto src = encoded.source.row_ids(r);
      for (std::size_t t = 0; t < encoded.source.length; ++t) {
        if (encoded.source.mask[r * encoded.source.length + t]) streams[i].push_back(src[t]);
      }
      streams[i].insert(streams[i].end(), prefixes[i].begin(), prefixes[i].end());
    }
    const TokenBatch batch = TokenBatch::pack(streams, pad);
    for (std::size_t i = 0; i < n; ++i) last[i] = i * batch.length + streams[i].size() - 1;
    hidden = decoder_hidden(g, batch, std::nullopt);
  } else {
    const std::size_t len = encoded.source.length;
    const std::size_t h = config_.hidden_size;
    Tensor<T> states({n * len, h});
    Memory memory;
    memory.length = len;
    memory.mask.resize(n * len);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = source_rows[i];
      std::copy_n(encoded.states.data().begin() + static_cast<std::ptrdiff_t>(r * len * h), len * h,
                  states.data().begin() + static_cast<std::ptrdiff_t>(i * len * h));
      std::copy_n(encoded.source.mask.begin() + static_cast<std::ptrdiff_t>(r * len), len,
                  memory.mask.begin() + static_cast<std::ptrdiff_t>(i * len));
    }
    memory.states = g.constant(std::move(states));
    const TokenBatch batch = TokenBatch::pack(prefixes, pad);
    for (std::size_t i = 0; i < n; ++i) last[i] = i * batch.length + prefixes[i].size() - 1;
    hidden = decoder_hidden(g, batch, memory);
  }
  Var sel = select_rows(g, hidden, std::span<const std::size_t>(last));
  return log_softmax_rows(g.value(logits(g, sel)));
}

template class Seq2SeqModel<float>;
template class Seq2SeqModel<double>;

}  // namespace warmstart
