#pragma once

// Generation metrics on whitespace tokens of normalized text (typographic
// quotes folded to ASCII). SARI and BLEU are reported on [0, 100], ROUGE F1
// and exact match on [0, 1].

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace warmstart {

struct EvalExample {
  std::string source;
  std::string prediction;
  std::vector<std::string> references;
};

struct MetricReport {
  std::string name;
  double corpus = 0.0;
  std::vector<double> per_example;  // empty for corpus-level metrics (BLEU)
  std::map<std::string, std::string> settings;
};

std::string normalize_quotes(std::string_view text);
std::vector<std::string> metric_tokens(std::string_view text, bool lowercase = false);

// Per example, for n = 1..max_n over n-gram multisets: add-F1, keep-F1 and
// delete-precision. Keep/delete compare against reference counts averaged
// over the non-empty references; add uses the per-n-gram maximum over them. A component whose
// selected and relevant sets are both empty scores 1; when only one of them
// is empty it scores 0. SARI = mean over n of the three averaged, times 100.
MetricReport sari(const std::vector<EvalExample>& examples, std::size_t max_n = 4);

struct SariComponents {
  double add = 0.0, keep = 0.0, del = 0.0;  // each averaged over n, in [0, 1]
  double sari = 0.0;                        // [0, 100]
};
SariComponents sari_sentence(std::string_view source, std::string_view prediction,
                             const std::vector<std::string>& references, std::size_t max_n = 4);

// Corpus BLEU: clipped n-gram precisions pooled over the corpus, geometric
// mean, brevity penalty against the closest reference length (ties to the
// shorter). Any zero precision gives 0. Zero total candidate length raises
// Error(degenerate).
MetricReport bleu_corpus(const std::vector<EvalExample>& examples, std::size_t max_n = 4, bool cased = false);

enum class RougeVariant { rouge1, rouge2, rougeL };
// Per-example F1 against the best-matching reference, averaged.
MetricReport rouge(const std::vector<EvalExample>& examples, RougeVariant variant);

struct PrecisionRecall {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};
PrecisionRecall rouge_pair(std::string_view prediction, std::string_view reference, RougeVariant variant);

MetricReport exact_match(const std::vector<EvalExample>& examples);

// "source\tprediction\tref1|||ref2" per line; '#' lines are comments.
std::vector<EvalExample> parse_eval_tsv(std::string_view text, const std::string& source_name = "<eval>");
std::vector<EvalExample> load_eval_tsv(const std::filesystem::path& path);

// Metric names: sari, bleu, bleu_cased, rouge1, rouge2, rougeL, exact.
MetricReport compute_metric(const std::vector<EvalExample>& examples, std::string_view name);

std::string format_reports_kv(const std::vector<MetricReport>& reports, const std::string& header = "");
std::string format_reports_csv(const std::vector<MetricReport>& reports, const std::string& header = "");

}  // namespace warmstart
