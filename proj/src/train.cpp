#include "warmstart/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "warmstart/convert.hpp"
#include "warmstart/error.hpp"

namespace warmstart {

void TrainSchedule::validate() const {
  if (warmup_steps < 1) throw Error(ErrorCode::config, "warmup_steps must be at least 1");
  if (!(base_rate > 0.0)) throw Error(ErrorCode::config, "base_rate must be positive");
  if (hidden_size == 0) throw Error(ErrorCode::config, "schedule hidden_size must be positive");
  if (batch_size == 0) throw Error(ErrorCode::config, "batch_size must be positive");
}

double learning_rate(const TrainSchedule& s, std::size_t step) {
  if (step < 1) throw Error(ErrorCode::config, "learning rate is defined from step 1");
  const double t = static_cast<double>(step);
  const double w = static_cast<double>(s.warmup_steps);
  return s.base_rate / std::sqrt(static_cast<double>(s.hidden_size)) * std::min(t * std::pow(w, -1.5), 1.0 / std::sqrt(t));
}

std::string format_loss_csv(const std::vector<LossPoint>& curve, const std::string& header) {
  std::ostringstream out;
  out << header << "step,loss,lr\n";
  out.precision(9);
  for (const auto& p : curve) out << p.step << ',' << p.loss << ',' << p.lr << '\n';
  return out.str();
}

template <class T>
std::vector<std::string> frozen_names(const Seq2SeqModel<T>& model, const FreezeSpec& spec) {
  std::unordered_set<const Parameter<T>*> hit;
  for (const auto& [name, p] : model.named_parameters()) {
    for (const auto& g : spec.globs) {
      if (glob_match(g, name)) hit.insert(p.get());
    }
  }
  std::vector<std::string> out;
  for (const auto& p : model.parameters()) {
    if (hit.count(p.get())) out.push_back(p->name);
  }
  return out;
}

namespace {

// Endless seeded stream of example indices, reshuffled every epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    shuffle();
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (pos_ == order_.size()) shuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void shuffle() {
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[uniform_index(rng_, i)]);
    pos_ = 0;
  }

  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

template <class T>
Error as_divergence(const Error& e, std::size_t step) {
  if (e.code() == ErrorCode::non_finite || e.code() == ErrorCode::divergence) {
    return Error(ErrorCode::divergence, "training diverged at step " + std::to_string(step) + ": " + e.what());
  }
  return e;
}

// Runs `loss_of` + backward + Adam for one step; returns the loss value.
template <class T, class LossFn>
double optimize_step(Seq2SeqModel<T>& model, Adam<T>& adam, double lr, std::size_t step, LossFn&& loss_of,
                     const std::vector<ParamPtr<T>>& extra = {}) {
  try {
    model.zero_grad();
    for (const auto& p : extra) p->zero_grad();
    Graph<T> g;
    Var loss = loss_of(g);
    const double value = static_cast<double>(g.value(loss).item());
    if (!std::isfinite(value)) throw Error(ErrorCode::divergence, "non-finite loss");
    g.backward(loss);
    if (extra.empty()) {
      adam.step(model.parameters(), lr);
    } else {
      auto all = model.parameters();
      all.insert(all.end(), extra.begin(), extra.end());
      adam.step(all, lr);
    }
    return value;
  } catch (const Error& e) {
    throw as_divergence<T>(e, step);
  }
}

}  // namespace

template <class T>
TrainResult train(Seq2SeqModel<T>& model, const std::vector<EncodedExample>& data, const TrainOptions& options) {
  const auto& sched = options.schedule;
  sched.validate();
  if (data.empty()) throw Error(ErrorCode::degenerate, "training set is empty");
  if (options.freeze && options.freeze->unfreeze_at_step > sched.total_steps) {
    throw Error(ErrorCode::config, "unfreeze_at_step exceeds total_steps");
  }
  std::vector<std::pair<Parameter<T>*, bool>> initial;
  for (const auto& p : model.parameters()) initial.emplace_back(p.get(), p->frozen);
  std::unordered_set<const Parameter<T>*> frozen_set;
  if (options.freeze) {
    for (const auto& [name, p] : model.named_parameters()) {
      for (const auto& g : options.freeze->globs) {
        if (glob_match(g, name)) frozen_set.insert(p.get());
      }
    }
  }

  BatchSampler sampler(data.size(), mix_seed(options.seed, 11));
  Rng dropout_rng(mix_seed(options.seed, 12));
  Adam<T> adam(options.adam);
  TrainResult result;
  const ForwardOptions fwd{true, &dropout_rng};

  for (std::size_t step = 1; step <= sched.total_steps; ++step) {
    const bool freezing = options.freeze && step <= options.freeze->unfreeze_at_step;
    for (auto& [p, was] : initial) p->frozen = was || (freezing && frozen_set.count(p));
    const auto idx = sampler.next(sched.batch_size);
    const Seq2SeqBatch batch = make_batch(data, idx, options.source_pad, options.target_pad);
    const double lr = learning_rate(sched, step);
    const double loss = optimize_step(model, adam, lr, step, [&](Graph<T>& g) { return model.lm_loss(g, batch, fwd); });
    if (options.log_every && step % options.log_every == 0) result.curve.push_back({step, loss, lr});
    result.steps_run = step;
    if (options.callback && options.callback_every && step % options.callback_every == 0 && options.callback(step)) {
      result.stopped_early = true;
      break;
    }
  }
  for (auto& [p, was] : initial) p->frozen = was;
  return result;
}

std::string to_string(PretrainObjective objective) {
  return objective == PretrainObjective::masked ? "masked" : "causal";
}

PretrainObjective parse_objective(std::string_view text) {
  if (text == "masked") return PretrainObjective::masked;
  if (text == "causal") return PretrainObjective::causal;
  throw Error(ErrorCode::config, "unknown pretraining objective " + std::string(text));
}

ModelConfig pretrain_model_config(ModelConfig config, PretrainObjective objective) {
  config.share_encoder_decoder = false;
  config.share_embeddings = true;
  config.tie_output_to_embedding = true;
  config.encoder_only = objective == PretrainObjective::masked;
  config.decoder_only = objective == PretrainObjective::causal;
  return config;
}

MaskedBatch make_masked_batch(const std::vector<std::vector<TokenId>>& sentences, const Vocabulary& vocab,
                              double mask_rate, Rng& rng) {
  if (!vocab.mask()) throw Error(ErrorCode::config, "masked pretraining needs a [MASK] token in the vocabulary");
  MaskedBatch mb;
  mb.input = TokenBatch::pack(sentences, vocab.pad());
  const TokenId mask = *vocab.mask();
  auto random_token = [&] {
    for (;;) {
      const auto id = static_cast<TokenId>(uniform_index(rng, vocab.size()));
      if (!vocab.is_special(id)) return id;
    }
  };
  for (std::size_t r = 0; r < sentences.size(); ++r) {
    std::vector<std::size_t> candidates;
    for (std::size_t t = 0; t < sentences[r].size(); ++t) {
      if (!vocab.is_special(sentences[r][t])) candidates.push_back(t);
    }
    if (candidates.empty()) continue;
    const auto k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(mask_rate * static_cast<double>(candidates.size()))));
    for (std::size_t i = 0; i < k; ++i) std::swap(candidates[i], candidates[i + uniform_index(rng, candidates.size() - i)]);
    std::vector<std::size_t> chosen(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(chosen.begin(), chosen.end());
    for (auto t : chosen) {
      const std::size_t flat = r * mb.input.length + t;
      mb.rows.push_back(flat);
      mb.labels.push_back(sentences[r][t]);
      const double u = uniform01(rng);
      if (u < 0.8) {
        mb.input.ids[flat] = mask;
      } else if (u < 0.9) {
        mb.input.ids[flat] = random_token();
      }
    }
  }
  return mb;
}

namespace {

std::vector<std::vector<TokenId>> usable(const std::vector<std::vector<TokenId>>& corpus) {
  std::vector<std::vector<TokenId>> out;
  for (const auto& s : corpus) {
    if (!s.empty()) out.push_back(s);
  }
  if (out.empty()) throw Error(ErrorCode::degenerate, "pretraining corpus is empty");
  return out;
}

std::vector<TokenId> stream_of(const std::vector<TokenId>& s, const Vocabulary& vocab) {
  std::vector<TokenId> out{vocab.bos()};
  out.insert(out.end(), s.begin(), s.end());
  out.push_back(vocab.eos());
  return out;
}

Seq2SeqBatch causal_batch(const std::vector<std::vector<TokenId>>& sentences, const Vocabulary& vocab) {
  std::vector<std::vector<TokenId>> streams;
  for (const auto& s : sentences) streams.push_back(stream_of(s, vocab));
  Seq2SeqBatch b;
  b.source.batch = sentences.size();
  b.target = TokenBatch::pack(streams, vocab.pad());
  return b;
}

}  // namespace

PretrainResult toy_pretrain(const ModelConfig& base, const std::vector<std::vector<TokenId>>& raw_corpus,
                            const Vocabulary& vocab, const PretrainOptions& options) {
  ModelConfig config = pretrain_model_config(base, options.objective);
  config.input_vocab_size = config.output_vocab_size = vocab.size();
  const auto corpus = usable(raw_corpus);
  options.schedule.validate();
  if (options.objective == PretrainObjective::masked && !vocab.mask()) {
    throw Error(ErrorCode::config, "masked pretraining needs a [MASK] token in the vocabulary");
  }

  Seq2SeqModel<float> model(config, options.seed);
  Adam<float> adam;
  BatchSampler sampler(corpus.size(), mix_seed(options.seed, 21));
  Rng mask_rng(mix_seed(options.seed, 22));
  Rng dropout_rng(mix_seed(options.seed, 23));
  const ForwardOptions fwd{true, &dropout_rng};
  PretrainResult result;

  // Masked-LM prediction head (dense, GELU, layer norm) ahead of the tied
  // output. It stays out of the archive, so the last encoder layer is not
  // forced to double as the output projection.
  const std::size_t h = config.hidden_size;
  Rng head_rng(mix_seed(options.seed, 24));
  Tensor<float> head_w({h, h});
  for (std::size_t i = 0; i < head_w.size(); ++i) head_w.data()[i] = static_cast<float>(truncated_normal(head_rng, 0.02));
  Tensor<float> ones({h});
  ones.fill(1.0f);
  const std::vector<ParamPtr<float>> head = {
      std::make_shared<Parameter<float>>("mlm_head/dense_w", std::move(head_w)),
      std::make_shared<Parameter<float>>("mlm_head/dense_b", Tensor<float>({h})),
      std::make_shared<Parameter<float>>("mlm_head/ln_gain", ones),
      std::make_shared<Parameter<float>>("mlm_head/ln_bias", Tensor<float>({h})),
  };

  for (std::size_t step = 1; step <= options.schedule.total_steps; ++step) {
    std::vector<std::vector<TokenId>> sentences;
    for (auto i : sampler.next(options.schedule.batch_size)) sentences.push_back(corpus[i]);
    const double lr = learning_rate(options.schedule, step);
    double loss = 0.0;
    if (options.objective == PretrainObjective::masked) {
      const MaskedBatch mb = make_masked_batch(sentences, vocab, options.mask_rate, mask_rng);
      loss = optimize_step(model, adam, lr, step, [&](Graph<float>& g) {
        Var h = model.encoder_forward(g, mb.input, fwd);
        Var sel = select_rows(g, h, std::span<const std::size_t>(mb.rows));
        Var t = gelu(g, add_bias(g, matmul(g, sel, g.parameter(*head[0])), g.parameter(*head[1])));
        t = layer_norm(g, t, g.parameter(*head[2]), g.parameter(*head[3]));
        return cross_entropy(g, model.logits(g, t), std::span<const TokenId>(mb.labels), {});
      }, head);
    } else {
      const Seq2SeqBatch b = causal_batch(sentences, vocab);
      loss = optimize_step(model, adam, lr, step, [&](Graph<float>& g) { return model.lm_loss(g, b, fwd); });
    }
    if (options.log_every && step % options.log_every == 0) result.curve.push_back({step, loss, lr});
  }

  result.archive = archive_from_model(
      model, options.objective == PretrainObjective::masked ? ArchiveFamily::bert_like : ArchiveFamily::gpt_like);
  result.archive.metadata["objective"] = to_string(options.objective);
  result.archive.metadata["seed"] = std::to_string(options.seed);
  result.archive.metadata["steps"] = std::to_string(options.schedule.total_steps);
  return result;
}

template <class T>
double masked_token_accuracy(const Seq2SeqModel<T>& model, const std::vector<std::vector<TokenId>>& raw_corpus,
                             const Vocabulary& vocab, std::uint64_t seed) {
  const auto corpus = usable(raw_corpus);
  Rng rng(seed);
  std::size_t correct = 0, total = 0;
  constexpr std::size_t kBatch = 32;
  for (std::size_t start = 0; start < corpus.size(); start += kBatch) {
    const std::vector<std::vector<TokenId>> sentences(
        corpus.begin() + static_cast<std::ptrdiff_t>(start),
        corpus.begin() + static_cast<std::ptrdiff_t>(std::min(corpus.size(), start + kBatch)));
    const MaskedBatch mb = make_masked_batch(sentences, vocab, 0.15, rng);
    Graph<T> g(false);
    Var h = model.encoder_forward(g, mb.input);
    const auto& logits = g.value(model.logits(g, select_rows(g, h, std::span<const std::size_t>(mb.rows))));
    for (std::size_t i = 0; i < mb.rows.size(); ++i) {
      const auto row = logits.row(i);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      correct += static_cast<TokenId>(best) == mb.labels[i];
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

template <class T>
double causal_perplexity(const Seq2SeqModel<T>& model, const std::vector<std::vector<TokenId>>& raw_corpus,
                         const Vocabulary& vocab) {
  const auto corpus = usable(raw_corpus);
  double nll = 0.0;
  std::size_t count = 0;
  constexpr std::size_t kBatch = 32;
  for (std::size_t start = 0; start < corpus.size(); start += kBatch) {
    const std::vector<std::vector<TokenId>> sentences(
        corpus.begin() + static_cast<std::ptrdiff_t>(start),
        corpus.begin() + static_cast<std::ptrdiff_t>(std::min(corpus.size(), start + kBatch)));
    const Seq2SeqBatch b = causal_batch(sentences, vocab);
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size() + 1;
    Graph<T> g(false);
    nll += static_cast<double>(g.value(model.lm_loss(g, b)).item()) * static_cast<double>(n);
    count += n;
  }
  return std::exp(nll / static_cast<double>(count));
}

#define WARMSTART_INSTANTIATE(T)                                                                                 \
  template TrainResult train<T>(Seq2SeqModel<T>&, const std::vector<EncodedExample>&, const TrainOptions&);      \
  template std::vector<std::string> frozen_names<T>(const Seq2SeqModel<T>&, const FreezeSpec&);                   \
  template double masked_token_accuracy<T>(const Seq2SeqModel<T>&, const std::vector<std::vector<TokenId>>&,    \
                                           const Vocabulary&, std::uint64_t);                                    \
  template double causal_perplexity<T>(const Seq2SeqModel<T>&, const std::vector<std::vector<TokenId>>&,        \
                                       const Vocabulary&);

WARMSTART_INSTANTIATE(float)
WARMSTART_INSTANTIATE(double)

}  // namespace warmstart
