#include "warmstart/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "warmstart/error.hpp"
#include "warmstart/random.hpp"

namespace warmstart {

std::vector<TextExample> parse_tsv(std::string_view text, const std::string& source_name) {
  std::vector<TextExample> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw Error(ErrorCode::format, source_name + " line " + std::to_string(line_no) + ": expected source<TAB>target");
    }
    out.push_back({std::string(line.substr(0, tab)), std::string(line.substr(tab + 1))});
  }
  return out;
}

std::vector<TextExample> load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open dataset " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_tsv(buf.str(), path.string());
}

std::string format_tsv(const std::vector<TextExample>& examples, const std::string& header) {
  std::string out = header;
  for (const auto& e : examples) out += e.source + "\t" + e.target + "\n";
  return out;
}

std::vector<TokenId> encode_source(const Vocabulary& vocab, std::string_view text, std::size_t max_source) {
  auto ids = vocab.tokenize(text);
  if (ids.size() > max_source) ids.resize(max_source);
  return ids;
}

std::vector<TokenId> encode_target(const Vocabulary& vocab, std::string_view text, std::size_t max_target) {
  if (max_target < 2) throw Error(ErrorCode::config, "max_target must leave room for BOS and EOS");
  auto body = vocab.tokenize(text);
  if (body.size() > max_target - 2) body.resize(max_target - 2);
  std::vector<TokenId> ids;
  ids.reserve(body.size() + 2);
  ids.push_back(vocab.bos());
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(vocab.eos());
  return ids;
}

std::vector<EncodedExample> encode_dataset(const std::vector<TextExample>& examples, const Vocabulary& input,
                                           const Vocabulary& output, const Truncation& truncation) {
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    out.push_back({encode_source(input, e.source, truncation.max_source),
                   encode_target(output, e.target, truncation.max_target)});
  }
  return out;
}

std::vector<std::size_t> subsample_indices(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::config, "subsample fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (take == 0) throw Error(ErrorCode::degenerate, "subsample of " + std::to_string(n) + " examples is empty");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
  perm.resize(take);
  std::sort(perm.begin(), perm.end());
  return perm;
}

Seq2SeqBatch make_batch(const std::vector<EncodedExample>& examples, std::span<const std::size_t> indices,
                        TokenId source_pad, TokenId target_pad) {
  std::vector<std::vector<TokenId>> src, tgt;
  src.reserve(indices.size());
  tgt.reserve(indices.size());
  for (auto i : indices) {
    src.push_back(examples.at(i).source);
    tgt.push_back(examples.at(i).target);
  }
  return {TokenBatch::pack(src, source_pad), TokenBatch::pack(tgt, target_pad)};
}

}  // namespace warmstart
