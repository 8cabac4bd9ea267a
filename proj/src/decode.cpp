#include "warmstart/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "warmstart/error.hpp"

namespace warmstart {

void DecodeParams::validate(std::size_t max_positions) const {
  if (beam_size < 1) throw Error(ErrorCode::config, "beam_size must be at least 1");
  if (!(alpha >= 0.0)) throw Error(ErrorCode::config, "alpha must be non-negative");
  if (max_output_length < 1 || max_output_length > max_positions) {
    throw Error(ErrorCode::config, "max_output_length must be in [1, " + std::to_string(max_positions) + "]");
  }
}

double length_penalty(std::size_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

template <class T>
ModelScorer<T>::ModelScorer(const Seq2SeqModel<T>& model, std::span<const std::vector<TokenId>> sources, TokenId pad)
    : model_(model), encoded_(model.encode_sources(sources, pad)), pad_(pad) {}

template <class T>
Tensor<double> ModelScorer<T>::log_probs(std::span<const std::size_t> source_rows,
                                         std::span<const std::vector<TokenId>> prefixes) {
  return model_.next_log_probs(encoded_, source_rows, prefixes, pad_).template cast<double>();
}

namespace {

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

std::vector<TokenId> with_bos(TokenId bos, const std::vector<TokenId>& tokens) {
  std::vector<TokenId> p{bos};
  p.insert(p.end(), tokens.begin(), tokens.end());
  return p;
}

}  // namespace

std::vector<Hypothesis> greedy_decode(NextTokenScorer& scorer, const DecodeParams& params) {
  params.validate(std::numeric_limits<std::size_t>::max());
  const std::size_t n = scorer.num_sources();
  std::vector<Hypothesis> out(n);
  std::vector<std::size_t> active(n);
  std::iota(active.begin(), active.end(), std::size_t{0});
  for (std::size_t step = 0; step < params.max_output_length && !active.empty(); ++step) {
    std::vector<std::vector<TokenId>> prefixes;
    for (auto r : active) prefixes.push_back(with_bos(params.bos, out[r].tokens));
    const auto lp = scorer.log_probs(active, prefixes);
    std::vector<std::size_t> still;
    for (std::size_t i = 0; i < active.size(); ++i) {
      auto& h = out[active[i]];
      const auto row = lp.row(i);
      // Compared on the running total, as beam search does, so both agree
      // even when rounding merges two step scores.
      std::size_t best = 0;
      double best_total = h.log_prob + row[0];
      for (std::size_t v = 1; v < row.size(); ++v) {
        const double total = h.log_prob + row[v];
        if (total > best_total) {
          best_total = total;
          best = v;
        }
      }
      h.log_prob = best_total;
      ++h.length;
      if (static_cast<TokenId>(best) == params.eos) {
        h.ended = true;
      } else {
        h.tokens.push_back(static_cast<TokenId>(best));
        if (h.length < params.max_output_length) still.push_back(active[i]);
      }
    }
    active = std::move(still);
  }
  for (auto& h : out) h.score = h.log_prob / length_penalty(h.length, params.alpha);
  return out;
}

std::vector<std::vector<Hypothesis>> beam_decode(NextTokenScorer& scorer, const DecodeParams& params) {
  params.validate(std::numeric_limits<std::size_t>::max());
  const std::size_t n = scorer.num_sources();
  const std::size_t k = params.beam_size;
  const std::size_t vocab = scorer.vocab_size();
  const double lp_max = length_penalty(params.max_output_length, params.alpha);

  struct State {
    std::vector<Hypothesis> alive{Hypothesis{}};
    std::vector<Hypothesis> finished;
    bool done = false;
  };
  std::vector<State> states(n);

  for (std::size_t step = 1; step <= params.max_output_length; ++step) {
    std::vector<std::size_t> rows;
    std::vector<std::vector<TokenId>> prefixes;
    for (std::size_t s = 0; s < n; ++s) {
      if (states[s].done) continue;
      for (const auto& h : states[s].alive) {
        rows.push_back(s);
        prefixes.push_back(with_bos(params.bos, h.tokens));
      }
    }
    if (rows.empty()) break;
    const auto lp = scorer.log_probs(rows, prefixes);
    const bool last = step == params.max_output_length;

    std::size_t cursor = 0;
    for (std::size_t s = 0; s < n; ++s) {
      auto& st = states[s];
      if (st.done) continue;
      // Candidate = (parent, token); ranked by cumulative log-prob, then ids.
      struct Cand {
        double log_prob;
        std::size_t parent;
        TokenId token;
      };
      std::vector<Cand> cands;
      cands.reserve(st.alive.size() * vocab);
      for (std::size_t a = 0; a < st.alive.size(); ++a) {
        const auto row = lp.row(cursor + a);
        for (std::size_t v = 0; v < vocab; ++v) {
          cands.push_back({st.alive[a].log_prob + row[v], a, static_cast<TokenId>(v)});
        }
      }
      cursor += st.alive.size();
      auto cand_less = [&](const Cand& x, const Cand& y) {
        if (x.log_prob != y.log_prob) return x.log_prob > y.log_prob;
        const auto& tx = st.alive[x.parent].tokens;
        const auto& ty = st.alive[y.parent].tokens;
        // Lexicographic order of parent tokens followed by the new token.
        const auto mis = std::mismatch(tx.begin(), tx.end(), ty.begin(), ty.end());
        if (mis.first != tx.end() && mis.second != ty.end()) return *mis.first < *mis.second;
        return x.token < y.token;
      };
      const std::size_t keep = std::min(k, cands.size());
      std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), cand_less);

      std::vector<Hypothesis> next;
      for (std::size_t c = 0; c < keep; ++c) {
        const auto& cand = cands[c];
        Hypothesis h;
        h.tokens = st.alive[cand.parent].tokens;
        h.log_prob = cand.log_prob;
        h.length = step;
        if (cand.token == params.eos) {
          h.ended = true;
        } else {
          h.tokens.push_back(cand.token);
        }
        if (h.ended || last) {
          h.score = h.log_prob / length_penalty(h.length, params.alpha);
          st.finished.push_back(std::move(h));
        } else {
          next.push_back(std::move(h));
        }
      }
      st.alive = std::move(next);
      std::sort(st.finished.begin(), st.finished.end(), better);
      if (st.alive.empty()) {
        st.done = true;
      } else if (st.finished.size() >= k) {
        // Live log-probs only fall; the penalty is largest at max length.
        double best_alive = -std::numeric_limits<double>::infinity();
        for (const auto& h : st.alive) best_alive = std::max(best_alive, h.log_prob);
        if (st.finished[k - 1].score >= best_alive / lp_max) st.done = true;
      }
    }
  }

  std::vector<std::vector<Hypothesis>> out(n);
  for (std::size_t s = 0; s < n; ++s) {
    auto& f = states[s].finished;
    std::sort(f.begin(), f.end(), better);
    if (f.size() > k) f.resize(k);
    out[s] = std::move(f);
  }
  return out;
}

Hypothesis score_sequence(NextTokenScorer& scorer, std::size_t source_row, std::span<const TokenId> tokens, bool ended,
                          const DecodeParams& params) {
  std::vector<TokenId> full(tokens.begin(), tokens.end());
  if (ended) full.push_back(params.eos);
  std::vector<std::vector<TokenId>> prefixes;
  std::vector<std::size_t> rows(full.size(), source_row);
  for (std::size_t t = 0; t < full.size(); ++t) {
    std::vector<TokenId> p{params.bos};
    p.insert(p.end(), full.begin(), full.begin() + static_cast<std::ptrdiff_t>(t));
    prefixes.push_back(std::move(p));
  }
  Hypothesis h;
  h.tokens.assign(tokens.begin(), tokens.end());
  h.ended = ended;
  h.length = full.size();
  if (!full.empty()) {
    const auto lp = scorer.log_probs(rows, prefixes);
    for (std::size_t t = 0; t < full.size(); ++t) h.log_prob += lp.at(t, static_cast<std::size_t>(full[t]));
  }
  h.score = h.log_prob / length_penalty(h.length, params.alpha);
  return h;
}

template <class T>
std::vector<Hypothesis> greedy_decode(const Seq2SeqModel<T>& model, std::span<const std::vector<TokenId>> sources,
                                      const DecodeParams& params, TokenId pad) {
  params.validate(model.config().max_positions);
  ModelScorer<T> scorer(model, sources, pad);
  return greedy_decode(scorer, params);
}

template <class T>
std::vector<std::vector<Hypothesis>> beam_decode(const Seq2SeqModel<T>& model,
                                                 std::span<const std::vector<TokenId>> sources,
                                                 const DecodeParams& params, TokenId pad) {
  params.validate(model.config().max_positions);
  ModelScorer<T> scorer(model, sources, pad);
  return beam_decode(scorer, params);
}

template class ModelScorer<float>;
template class ModelScorer<double>;
template std::vector<Hypothesis> greedy_decode<float>(const Seq2SeqModel<float>&, std::span<const std::vector<TokenId>>,
                                                      const DecodeParams&, TokenId);
template std::vector<Hypothesis> greedy_decode<double>(const Seq2SeqModel<double>&,
                                                       std::span<const std::vector<TokenId>>, const DecodeParams&,
                                                       TokenId);
template std::vector<std::vector<Hypothesis>> beam_decode<float>(const Seq2SeqModel<float>&,
                                                                 std::span<const std::vector<TokenId>>,
                                                                 const DecodeParams&, TokenId);
template std::vector<std::vector<Hypothesis>> beam_decode<double>(const Seq2SeqModel<double>&,
                                                                  std::span<const std::vector<TokenId>>,
                                                                  const DecodeParams&, TokenId);

}  // namespace warmstart
