#include "warmstart/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include "warmstart/error.hpp"
#include "warmstart/vocab.hpp"

namespace warmstart {

namespace {

using Gram = std::string;
using Counts = std::map<Gram, double>;

std::vector<Gram> ngrams(const std::vector<std::string>& toks, std::size_t n) {
  std::vector<Gram> out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    Gram g = toks[i];
    for (std::size_t j = 1; j < n; ++j) {
      g += '\x1f';
      g += toks[i + j];
    }
    out.push_back(std::move(g));
  }
  return out;
}

Counts count_multiset(const std::vector<std::string>& toks, std::size_t n) {
  Counts c;
  for (auto& g : ngrams(toks, n)) c[g] += 1.0;
  return c;
}

double total(const Counts& c) {
  double s = 0.0;
  for (const auto& [g, v] : c) s += v;
  return s;
}

// Multiset intersection (min) and positive difference.
Counts meet(const Counts& a, const Counts& b) {
  Counts out;
  for (const auto& [g, v] : a) {
    auto it = b.find(g);
    if (it != b.end()) {
      const double m = std::min(v, it->second);
      if (m > 0) out[g] = m;
    }
  }
  return out;
}

Counts minus(const Counts& a, const Counts& b) {
  Counts out;
  for (const auto& [g, v] : a) {
    auto it = b.find(g);
    const double d = v - (it == b.end() ? 0.0 : it->second);
    if (d > 0) out[g] = d;
  }
  return out;
}

double smoothed_f1(double tp, double selected, double relevant) {
  if (selected == 0.0 && relevant == 0.0) return 1.0;
  if (selected == 0.0 || relevant == 0.0) return 0.0;
  const double p = tp / selected, r = tp / relevant;
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

double smoothed_precision(double tp, double selected, double relevant) {
  if (selected == 0.0 && relevant == 0.0) return 1.0;
  if (selected == 0.0 || relevant == 0.0) return 0.0;
  return tp / selected;
}

void require_examples(const std::vector<EvalExample>& examples, const char* metric) {
  if (examples.empty()) throw Error(ErrorCode::degenerate, std::string(metric) + " needs at least one example");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].references.empty()) {
      throw Error(ErrorCode::degenerate, std::string(metric) + ": example " + std::to_string(i) + " has no reference");
    }
  }
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace

std::string normalize_quotes(std::string_view text) {
  static const std::pair<std::string_view, char> table[] = {
      {"\xE2\x80\x9C", '"'},  {"\xE2\x80\x9D", '"'},  {"\xE2\x80\x9E", '"'}, {"\xE2\x80\x9F", '"'},
      {"\xE2\x80\xB3", '"'},  {"\xC2\xAB", '"'},      {"\xC2\xBB", '"'},     {"\xE2\x80\x98", '\''},
      {"\xE2\x80\x99", '\''}, {"\xE2\x80\x9A", '\''}, {"\xE2\x80\x9B", '\''}, {"\xE2\x80\xB2", '\''},
  };
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    bool replaced = false;
    for (const auto& [seq, ascii] : table) {
      if (text.substr(i, seq.size()) == seq) {
        out += ascii;
        i += seq.size();
        replaced = true;
        break;
      }
    }
    if (!replaced) out += text[i++];
  }
  return out;
}

std::vector<std::string> metric_tokens(std::string_view text, bool lowercase) {
  std::string norm = normalize_quotes(text);
  if (lowercase) norm = ascii_lower(norm);
  std::vector<std::string> out;
  for (auto w : split_whitespace(norm)) out.emplace_back(w);
  return out;
}

SariComponents sari_sentence(std::string_view source, std::string_view prediction,
                             const std::vector<std::string>& references, std::size_t max_n) {
  if (max_n == 0) throw Error(ErrorCode::config, "SARI needs max_n >= 1");
  const auto src = metric_tokens(source);
  const auto pred = metric_tokens(prediction);
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(metric_tokens(r));

  SariComponents c;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const Counts s = count_multiset(src, n);
    const Counts p = count_multiset(pred, n);
    Counts weighted, any;
    std::size_t nonempty = 0;
    for (const auto& r : refs) {
      const Counts rc = count_multiset(r, n);
      if (rc.empty()) continue;
      ++nonempty;
      for (const auto& [g, v] : rc) {
        weighted[g] += v;
        any[g] = std::max(any[g], v);
      }
    }
    for (auto& [g, v] : weighted) v /= static_cast<double>(nonempty);

    const Counts sp = meet(s, p), st = meet(s, weighted);
    c.keep += smoothed_f1(total(meet(sp, st)), total(sp), total(st));

    const Counts s_not_p = minus(s, p), s_not_t = minus(s, weighted);
    c.del += smoothed_precision(total(meet(s_not_p, s_not_t)), total(s_not_p), total(s_not_t));

    const Counts p_not_s = minus(p, s), t_not_s = minus(any, s);
    c.add += smoothed_f1(total(meet(p_not_s, t_not_s)), total(p_not_s), total(t_not_s));
  }
  const double nn = static_cast<double>(max_n);
  c.keep /= nn;
  c.del /= nn;
  c.add /= nn;
  c.sari = 100.0 * (c.keep + c.del + c.add) / 3.0;
  return c;
}

MetricReport sari(const std::vector<EvalExample>& examples, std::size_t max_n) {
  require_examples(examples, "SARI");
  MetricReport r;
  r.name = "sari";
  r.settings["max_n"] = std::to_string(max_n);
  r.settings["scale"] = "100";
  for (const auto& e : examples) r.per_example.push_back(sari_sentence(e.source, e.prediction, e.references, max_n).sari);
  r.corpus = mean(r.per_example);
  return r;
}

MetricReport bleu_corpus(const std::vector<EvalExample>& examples, std::size_t max_n, bool cased) {
  require_examples(examples, "BLEU");
  if (max_n == 0) throw Error(ErrorCode::config, "BLEU needs max_n >= 1");
  std::vector<double> matched(max_n, 0.0), possible(max_n, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (const auto& e : examples) {
    const auto cand = metric_tokens(e.prediction, !cased);
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : e.references) refs.push_back(metric_tokens(r, !cased));
    cand_len += static_cast<double>(cand.size());
    std::size_t best = refs[0].size();
    for (const auto& r : refs) {
      const auto d = [&](std::size_t len) { return len > cand.size() ? len - cand.size() : cand.size() - len; };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);
    for (std::size_t n = 1; n <= max_n; ++n) {
      const Counts c = count_multiset(cand, n);
      Counts max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, v] : count_multiset(r, n)) max_ref[g] = std::max(max_ref[g], v);
      }
      matched[n - 1] += total(meet(c, max_ref));
      possible[n - 1] += total(c);
    }
  }
  if (cand_len == 0.0) throw Error(ErrorCode::degenerate, "BLEU over a corpus with zero candidate length");
  MetricReport r;
  r.name = cased ? "bleu_cased" : "bleu";
  r.settings["max_n"] = std::to_string(max_n);
  r.settings["cased"] = cased ? "true" : "false";
  r.settings["scale"] = "100";
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (matched[n] == 0.0 || possible[n] == 0.0) {
      zero = true;
      break;
    }
    log_sum += std::log(matched[n] / possible[n]);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  r.settings["brevity_penalty"] = std::to_string(bp);
  r.corpus = zero ? 0.0 : 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
  return r;
}

PrecisionRecall rouge_pair(std::string_view prediction, std::string_view reference, RougeVariant variant) {
  const auto p = metric_tokens(prediction);
  const auto r = metric_tokens(reference);
  double overlap = 0.0, np = 0.0, nr = 0.0;
  if (variant == RougeVariant::rougeL) {
    overlap = static_cast<double>(lcs_length(p, r));
    np = static_cast<double>(p.size());
    nr = static_cast<double>(r.size());
  } else {
    const std::size_t n = variant == RougeVariant::rouge1 ? 1 : 2;
    const Counts pc = count_multiset(p, n), rc = count_multiset(r, n);
    overlap = total(meet(pc, rc));
    np = total(pc);
    nr = total(rc);
  }
  PrecisionRecall out;
  if (np > 0) out.precision = overlap / np;
  if (nr > 0) out.recall = overlap / nr;
  if (out.precision + out.recall > 0) out.f1 = 2 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

MetricReport rouge(const std::vector<EvalExample>& examples, RougeVariant variant) {
  require_examples(examples, "ROUGE");
  MetricReport r;
  r.name = variant == RougeVariant::rouge1 ? "rouge1" : variant == RougeVariant::rouge2 ? "rouge2" : "rougeL";
  r.settings["scale"] = "1";
  r.settings["stemming"] = "none";
  for (const auto& e : examples) {
    double best = 0.0;
    for (const auto& ref : e.references) best = std::max(best, rouge_pair(e.prediction, ref, variant).f1);
    r.per_example.push_back(best);
  }
  r.corpus = mean(r.per_example);
  return r;
}

MetricReport exact_match(const std::vector<EvalExample>& examples) {
  require_examples(examples, "exact match");
  MetricReport r;
  r.name = "exact";
  r.settings["scale"] = "1";
  for (const auto& e : examples) {
    const auto pred = join_tokens(metric_tokens(e.prediction));
    const bool hit = std::any_of(e.references.begin(), e.references.end(),
                                 [&](const std::string& ref) { return join_tokens(metric_tokens(ref)) == pred; });
    r.per_example.push_back(hit ? 1.0 : 0.0);
  }
  r.corpus = mean(r.per_example);
  return r;
}

std::vector<EvalExample> parse_eval_tsv(std::string_view text, const std::string& source_name) {
  std::vector<EvalExample> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) {
      throw Error(ErrorCode::format,
                  source_name + " line " + std::to_string(line_no) + ": expected source<TAB>prediction<TAB>references");
    }
    EvalExample e;
    e.source = std::string(line.substr(0, t1));
    e.prediction = std::string(line.substr(t1 + 1, t2 - t1 - 1));
    std::string_view refs = line.substr(t2 + 1);
    std::size_t start = 0;
    while (true) {
      const auto sep = refs.find("|||", start);
      e.references.emplace_back(refs.substr(start, sep == std::string_view::npos ? std::string_view::npos : sep - start));
      if (sep == std::string_view::npos) break;
      start = sep + 3;
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<EvalExample> load_eval_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open evaluation file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_eval_tsv(buf.str(), path.string());
}

MetricReport compute_metric(const std::vector<EvalExample>& examples, std::string_view name) {
  if (name == "sari") return sari(examples);
  if (name == "bleu") return bleu_corpus(examples, 4, false);
  if (name == "bleu_cased") return bleu_corpus(examples, 4, true);
  if (name == "rouge1") return rouge(examples, RougeVariant::rouge1);
  if (name == "rouge2") return rouge(examples, RougeVariant::rouge2);
  if (name == "rougeL") return rouge(examples, RougeVariant::rougeL);
  if (name == "exact") return exact_match(examples);
  throw Error(ErrorCode::config, "unknown metric " + std::string(name));
}

std::string format_reports_kv(const std::vector<MetricReport>& reports, const std::string& header) {
  std::ostringstream out;
  out << header << std::setprecision(10);
  for (const auto& r : reports) {
    out << r.name << '=' << r.corpus << '\n';
    for (const auto& [k, v] : r.settings) out << r.name << '.' << k << '=' << v << '\n';
  }
  return out.str();
}

std::string format_reports_csv(const std::vector<MetricReport>& reports, const std::string& header) {
  std::ostringstream out;
  out << header << std::setprecision(10) << "metric,example,score\n";
  for (const auto& r : reports) {
    out << r.name << ",corpus," << r.corpus << '\n';
    for (std::size_t i = 0; i < r.per_example.size(); ++i) out << r.name << ',' << i << ',' << r.per_example[i] << '\n';
  }
  return out.str();
}

}  // namespace warmstart
