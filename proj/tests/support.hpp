#pragma once

// Helpers shared by the unit suites and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "warmstart/batch.hpp"
#include "warmstart/checkpoint.hpp"
#include "warmstart/model.hpp"
#include "warmstart/random.hpp"

namespace wstest {

using namespace warmstart;

inline ModelConfig toy_config(std::size_t layers = 2, std::size_t hidden = 16, std::size_t vocab = 23) {
  ModelConfig c;
  c.num_layers = layers;
  c.hidden_size = hidden;
  c.filter_size = 2 * hidden;
  c.num_heads = 2;
  c.input_vocab_size = vocab;
  c.output_vocab_size = vocab;
  c.max_positions = 32;
  c.dropout = 0.0;
  return c;
}

// Ids in [lo, hi), lengths in [min_len, max_len].
inline std::vector<std::vector<TokenId>> random_sequences(Rng& rng, std::size_t n, TokenId lo, TokenId hi,
                                                          std::size_t min_len, std::size_t max_len) {
  std::vector<std::vector<TokenId>> out(n);
  for (auto& s : out) {
    const std::size_t len = min_len + uniform_index(rng, max_len - min_len + 1);
    for (std::size_t i = 0; i < len; ++i) s.push_back(lo + static_cast<TokenId>(uniform_index(rng, hi - lo)));
  }
  return out;
}

// Targets get BOS=2 ... EOS=3 around random content ids >= 4; pad is 0.
inline Seq2SeqBatch random_batch(Rng& rng, const ModelConfig& c, std::size_t batch, std::size_t max_len = 6) {
  const auto src = random_sequences(rng, batch, 4, static_cast<TokenId>(c.input_vocab_size), 1, max_len);
  auto tgt = random_sequences(rng, batch, 4, static_cast<TokenId>(c.output_vocab_size), 1, max_len);
  for (auto& t : tgt) {
    t.insert(t.begin(), 2);
    t.push_back(3);
  }
  Seq2SeqBatch b;
  b.source = TokenBatch::pack(src, 0);
  b.target = TokenBatch::pack(tgt, 0);
  return b;
}

struct GradCheck {
  std::size_t checked = 0;
  double worst = 0.0;
  std::string worst_name;
  std::vector<std::string> failures;
};

// Central differences against the analytic gradient of `loss` for every
// entry of every unique parameter (or `per_tensor` sampled entries when
// nonzero). Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(Seq2SeqModel<double>& model, const std::function<Var(Graph<double>&)>& loss,
                                 double tolerance, std::size_t per_tensor = 0, std::uint64_t seed = 1,
                                 double eps = 1e-6, double floor = 1e-6) {
  model.zero_grad();
  {
    Graph<double> g;
    g.backward(loss(g));
  }
  auto value = [&] {
    Graph<double> g(false);
    return g.value(loss(g)).item();
  };
  Rng rng(seed);
  GradCheck out;
  for (const auto& p : model.parameters()) {
    const std::string& name = p->name;
    std::vector<std::size_t> idx;
    if (per_tensor == 0 || per_tensor >= p->value.size()) {
      for (std::size_t i = 0; i < p->value.size(); ++i) idx.push_back(i);
    } else {
      for (std::size_t i = 0; i < per_tensor; ++i) idx.push_back(uniform_index(rng, p->value.size()));
    }
    for (auto i : idx) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double up = value();
      p->value[i] = orig - eps;
      const double down = value();
      p->value[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = p->grad[i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++out.checked;
      if (rel > out.worst) {
        out.worst = rel;
        out.worst_name = name + "[" + std::to_string(i) + "]";
      }
      if (rel > tolerance) out.failures.push_back(name + "[" + std::to_string(i) + "]");
    }
  }
  return out;
}

// Random archive: a word matrix plus self-attention tensors per layer.
inline TensorArchive random_archive(Rng& rng, std::size_t layers, std::size_t hidden) {
  TensorArchive a;
  a.family = static_cast<ArchiveFamily>(uniform_index(rng, 3));
  a.metadata["origin"] = "random";
  a.metadata["k" + std::to_string(uniform_index(rng, 100))] = "v";
  auto tensor = [&](Shape s) {
    Tensor<float> t(std::move(s));
    for (auto& v : t.storage()) v = static_cast<float>(standard_normal(rng));
    return t;
  };
  a.entries.push_back({"embeddings/word", tensor({7 + uniform_index(rng, 5), hidden})});
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string p = "encoder/layer_" + std::to_string(l) + "/self/";
    for (const char* k : {"query", "key", "value", "output"}) {
      a.entries.push_back({p + k + "_w", tensor({hidden, hidden})});
      a.entries.push_back({p + k + "_b", tensor({hidden})});
    }
  }
  return a;
}

inline std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("warmstart_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace wstest
