#include "warmstart/convert.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>

#include "warmstart/error.hpp"

namespace warmstart {

namespace {

std::regex glob_regex(std::string_view pattern) {
  std::string re;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const char c = pattern[i];
    if (c == '*' && i + 1 < pattern.size() && pattern[i + 1] == '*') {
      re += "(.*)";
      ++i;
    } else if (c == '*') {
      re += "([^/]*)";
    } else if (std::string_view(".^$|()[]{}+?\\").find(c) != std::string_view::npos) {
      re += '\\';
      re += c;
    } else {
      re += c;
    }
  }
  return std::regex(re);
}

std::optional<std::vector<std::string>> glob_captures(std::string_view pattern, const std::string& name) {
  std::smatch m;
  const auto re = glob_regex(pattern);
  if (!std::regex_match(name, m, re)) return std::nullopt;
  std::vector<std::string> caps;
  for (std::size_t i = 1; i < m.size(); ++i) caps.push_back(m[i].str());
  return caps;
}

std::string substitute(std::string_view pattern, const std::vector<std::string>& caps) {
  std::string out;
  std::size_t k = 0;
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    if (pattern[i] == '*') {
      if (i + 1 < pattern.size() && pattern[i + 1] == '*') ++i;
      out += k < caps.size() ? caps[k] : std::string();
      ++k;
    } else {
      out += pattern[i];
    }
  }
  return out;
}

// Number of wildcards, '**' counting once.
std::size_t stars(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '*') continue;
    ++n;
    if (i + 1 < s.size() && s[i + 1] == '*') ++i;
  }
  return n;
}

Error rule_error(std::size_t line, const std::string& msg) {
  return Error(ErrorCode::rule, (line ? "line " + std::to_string(line) + ": " : std::string()) + msg);
}

std::vector<std::string> default_parts(const std::string& name, std::size_t line) {
  const auto at = name.find("qkv");
  if (at == std::string::npos) {
    throw rule_error(line, "split3/merge3 on \"" + name + "\" needs explicit part names (no \"qkv\" to replace)");
  }
  std::vector<std::string> parts;
  for (const char* piece : {"query", "key", "value"}) {
    std::string p = name;
    p.replace(at, 3, piece);
    parts.push_back(std::move(p));
  }
  return parts;
}

struct Work {
  std::string name;
  Tensor<float> value;
  bool touched = false;
  std::vector<std::size_t> origins;
};

Tensor<float> transpose2(const Tensor<float>& t) {
  Tensor<float> out({t.cols(), t.rows()});
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) out.at(c, r) = t.at(r, c);
  }
  return out;
}

std::vector<Tensor<float>> split_axis(const Tensor<float>& t, std::size_t axis, const std::string& name, std::size_t line) {
  if (t.rank() == 0 || t.rank() > 2 || axis >= t.rank()) {
    throw rule_error(line, "cannot split " + name + " of shape " + shape_string(t.shape()) + " along axis " +
                               std::to_string(axis));
  }
  if (t.dim(axis) % 3 != 0) {
    throw rule_error(line, "axis " + std::to_string(axis) + " of " + name + " (" + shape_string(t.shape()) +
                               ") is not divisible by 3");
  }
  std::vector<Tensor<float>> parts;
  if (t.rank() == 1 || axis == 0) {
    const std::size_t rows = t.dim(0) / 3;
    const std::size_t stride = t.rank() == 1 ? 1 : t.cols();
    for (std::size_t p = 0; p < 3; ++p) {
      Shape s = t.shape();
      s[0] = rows;
      std::vector<float> data(t.data().begin() + static_cast<std::ptrdiff_t>(p * rows * stride),
                              t.data().begin() + static_cast<std::ptrdiff_t>((p + 1) * rows * stride));
      parts.emplace_back(std::move(s), std::move(data));
    }
  } else {
    const std::size_t cols = t.cols() / 3;
    for (std::size_t p = 0; p < 3; ++p) {
      Tensor<float> part({t.rows(), cols});
      for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) part.at(r, c) = t.at(r, p * cols + c);
      }
      parts.push_back(std::move(part));
    }
  }
  return parts;
}

Tensor<float> concat_axis(const std::vector<const Tensor<float>*>& parts, std::size_t axis, const std::string& name,
                          std::size_t line) {
  const auto& first = *parts[0];
  for (auto* p : parts) {
    if (p->shape() != first.shape()) throw rule_error(line, "merge3 parts of " + name + " differ in shape");
  }
  if (first.rank() == 0 || first.rank() > 2 || axis >= first.rank()) {
    throw rule_error(line, "cannot merge " + name + " parts of shape " + shape_string(first.shape()) + " along axis " +
                               std::to_string(axis));
  }
  if (first.rank() == 1 || axis == 0) {
    Shape s = first.shape();
    s[0] *= 3;
    std::vector<float> data;
    for (auto* p : parts) data.insert(data.end(), p->data().begin(), p->data().end());
    return Tensor<float>(std::move(s), std::move(data));
  }
  const std::size_t cols = first.cols();
  Tensor<float> out({first.rows(), cols * 3});
  for (std::size_t p = 0; p < 3; ++p) {
    for (std::size_t r = 0; r < first.rows(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) out.at(r, p * cols + c) = parts[p]->at(r, c);
    }
  }
  return out;
}

}  // namespace

bool glob_match(std::string_view pattern, std::string_view name) {
  return glob_captures(pattern, std::string(name)).has_value();
}

MappingRules::MappingRules(std::vector<MappingRule> rules) : rules_(std::move(rules)) {
  for (auto& r : rules_) {
    if (r.kind == MappingRule::Kind::rename && stars(r.pattern) != stars(r.target)) {
      throw rule_error(r.line, "rename " + r.pattern + " -> " + r.target + " must use the same number of '*'");
    }
    if (r.kind == MappingRule::Kind::split3 || r.kind == MappingRule::Kind::merge3) {
      const std::string& whole = r.kind == MappingRule::Kind::split3 ? r.pattern : r.target;
      if (r.parts.empty()) r.parts = default_parts(whole, r.line);
      if (r.parts.size() != 3) throw rule_error(r.line, "split3/merge3 takes exactly three part names");
      for (const auto& p : r.parts) {
        if (stars(p) != stars(whole)) throw rule_error(r.line, "part " + p + " must use the same '*' count as " + whole);
      }
    }
  }
}

MappingRules MappingRules::parse(std::string_view text) {
  std::vector<MappingRule> rules;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto words = split_whitespace(line);
    if (words.empty()) continue;
    MappingRule r;
    r.line = line_no;
    const std::string_view op = words[0];
    auto want = [&](std::size_t lo, std::size_t hi) {
      if (words.size() < lo || words.size() > hi) throw rule_error(line_no, "wrong number of arguments for " + std::string(op));
    };
    auto parse_axis = [&](std::string_view w) {
      if (!w.starts_with("axis=")) throw rule_error(line_no, "expected axis=<k>, got " + std::string(w));
      auto digits = w.substr(5);
      std::size_t axis = 0;
      auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), axis);
      if (ec != std::errc() || p != digits.data() + digits.size()) throw rule_error(line_no, "bad axis " + std::string(w));
      return axis;
    };
    if (op == "rename") {
      want(3, 3);
      r.kind = MappingRule::Kind::rename;
      r.pattern = words[1];
      r.target = words[2];
    } else if (op == "split3" || op == "merge3") {
      want(3, 6);
      if (words.size() != 3 && words.size() != 6) throw rule_error(line_no, std::string(op) + " takes zero or three part names");
      r.kind = op == "split3" ? MappingRule::Kind::split3 : MappingRule::Kind::merge3;
      (op == "split3" ? r.pattern : r.target) = words[1];
      r.axis = parse_axis(words[2]);
      for (std::size_t i = 3; i < words.size(); ++i) r.parts.emplace_back(words[i]);
    } else if (op == "transpose" || op == "skip" || op == "drop") {
      want(2, 2);
      r.kind = op == "transpose" ? MappingRule::Kind::transpose
               : op == "skip"    ? MappingRule::Kind::skip
                                 : MappingRule::Kind::drop;
      r.pattern = words[1];
    } else {
      throw rule_error(line_no, "unknown rule " + std::string(op));
    }
    rules.push_back(std::move(r));
  }
  return MappingRules(std::move(rules));
}

MappingRules MappingRules::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open rules file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string MappingRules::serialize() const {
  std::ostringstream out;
  for (const auto& r : rules_) {
    switch (r.kind) {
      case MappingRule::Kind::rename: out << "rename " << r.pattern << ' ' << r.target; break;
      case MappingRule::Kind::split3:
        out << "split3 " << r.pattern << " axis=" << r.axis << ' ' << r.parts[0] << ' ' << r.parts[1] << ' ' << r.parts[2];
        break;
      case MappingRule::Kind::merge3:
        out << "merge3 " << r.target << " axis=" << r.axis << ' ' << r.parts[0] << ' ' << r.parts[1] << ' ' << r.parts[2];
        break;
      case MappingRule::Kind::transpose: out << "transpose " << r.pattern; break;
      case MappingRule::Kind::skip: out << "skip " << r.pattern; break;
      case MappingRule::Kind::drop: out << "drop " << r.pattern; break;
    }
    out << '\n';
  }
  return out.str();
}

MappingRules MappingRules::inverse() const {
  std::vector<MappingRule> inv;
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) {
    MappingRule r = *it;
    switch (r.kind) {
      case MappingRule::Kind::rename: std::swap(r.pattern, r.target); break;
      case MappingRule::Kind::split3:
        r.kind = MappingRule::Kind::merge3;
        r.target = r.pattern;
        r.pattern.clear();
        break;
      case MappingRule::Kind::merge3:
        r.kind = MappingRule::Kind::split3;
        r.pattern = r.target;
        r.target.clear();
        break;
      case MappingRule::Kind::transpose:
      case MappingRule::Kind::skip: break;
      case MappingRule::Kind::drop: throw rule_error(r.line, "drop " + r.pattern + " has no inverse");
    }
    inv.push_back(std::move(r));
  }
  return MappingRules(std::move(inv));
}

ConvertResult convert_foreign(const TensorArchive& archive, const MappingRules& rules) {
  archive.check_unique();
  std::vector<std::string> skips;
  for (const auto& r : rules.rules()) {
    if (r.kind == MappingRule::Kind::skip) skips.push_back(r.pattern);
  }
  auto skipped = [&](const std::string& name) {
    return std::any_of(skips.begin(), skips.end(), [&](const std::string& g) { return glob_match(g, name); });
  };

  std::vector<Work> work;
  for (std::size_t i = 0; i < archive.entries.size(); ++i) {
    work.push_back({archive.entries[i].name, archive.entries[i].value, skipped(archive.entries[i].name), {i}});
  }

  for (const auto& r : rules.rules()) {
    switch (r.kind) {
      case MappingRule::Kind::skip: break;
      case MappingRule::Kind::rename: {
        for (auto& w : work) {
          if (auto caps = glob_captures(r.pattern, w.name)) {
            w.name = substitute(r.target, *caps);
            w.touched = true;
          }
        }
        break;
      }
      case MappingRule::Kind::transpose: {
        for (auto& w : work) {
          if (!glob_match(r.pattern, w.name) || skipped(w.name)) continue;
          if (w.value.rank() > 2) {
            throw rule_error(r.line, "cannot transpose " + w.name + " of rank " + std::to_string(w.value.rank()));
          }
          if (w.value.rank() == 2) w.value = transpose2(w.value);
          w.touched = true;
        }
        break;
      }
      case MappingRule::Kind::drop: {
        std::erase_if(work, [&](const Work& w) { return glob_match(r.pattern, w.name); });
        break;
      }
      case MappingRule::Kind::split3: {
        std::vector<Work> next;
        for (auto& w : work) {
          auto caps = glob_captures(r.pattern, w.name);
          if (!caps || skipped(w.name)) {
            next.push_back(std::move(w));
            continue;
          }
          auto parts = split_axis(w.value, r.axis, w.name, r.line);
          for (std::size_t p = 0; p < 3; ++p) {
            next.push_back({substitute(r.parts[p], *caps), std::move(parts[p]), true, w.origins});
          }
        }
        work = std::move(next);
        break;
      }
      case MappingRule::Kind::merge3: {
        std::vector<Work> next;
        std::set<std::string> consumed;
        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < work.size(); ++i) index[work[i].name] = i;
        for (const auto& w : work) {
          if (consumed.count(w.name)) continue;
          auto caps = glob_captures(r.parts[0], w.name);
          if (!caps || skipped(w.name)) {
            next.push_back(w);
            continue;
          }
          std::vector<const Tensor<float>*> pieces{&w.value};
          std::vector<std::size_t> origins = w.origins;
          for (std::size_t p = 1; p < 3; ++p) {
            const std::string other = substitute(r.parts[p], *caps);
            auto it = index.find(other);
            if (it == index.end()) throw rule_error(r.line, "merge3 is missing part " + other);
            pieces.push_back(&work[it->second].value);
            origins.insert(origins.end(), work[it->second].origins.begin(), work[it->second].origins.end());
            consumed.insert(other);
          }
          const std::string name = substitute(r.target, *caps);
          next.push_back({name, concat_axis(pieces, r.axis, name, r.line), true, std::move(origins)});
        }
        std::erase_if(next, [&](const Work& w) { return consumed.count(w.name) > 0; });
        work = std::move(next);
        break;
      }
    }
  }

  ConvertResult result;
  result.archive.family = archive.family;
  result.archive.metadata = archive.metadata;
  std::set<std::size_t> touched;
  for (auto& w : work) {
    if (w.touched) touched.insert(w.origins.begin(), w.origins.end());
    result.archive.entries.push_back({std::move(w.name), std::move(w.value)});
  }
  for (std::size_t i = 0; i < archive.entries.size(); ++i) {
    if (!touched.count(i)) result.unmatched.push_back(archive.entries[i].name);
  }
  try {
    result.archive.check_unique();
  } catch (const Error& e) {
    throw Error(ErrorCode::rule, std::string("conversion produced a name clash: ") + e.what());
  }
  return result;
}

namespace {

const std::regex& layer_regex() {
  static const std::regex re(R"(^(encoder|decoder)/layer_(\d+)/(.+)$)");
  return re;
}

}  // namespace

std::size_t archive_layer_count(const TensorArchive& archive, std::string_view stack) {
  std::size_t count = 0;
  for (const auto& e : archive.entries) {
    std::smatch m;
    if (std::regex_match(e.name, m, layer_regex()) && m[1].str() == stack) {
      count = std::max(count, static_cast<std::size_t>(std::stoul(m[2].str())) + 1);
    }
  }
  return count;
}

std::vector<std::size_t> parse_layer_list(std::string_view text) {
  std::vector<std::size_t> out;
  auto number = [&](std::string_view s) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty() || v == 0) {
      throw Error(ErrorCode::selection, "bad layer index \"" + std::string(s) + "\" (layers count from 1)");
    }
    return v;
  };
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    auto item = text.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (auto dash = item.find('-'); dash != std::string_view::npos) {
      const auto lo = number(item.substr(0, dash)), hi = number(item.substr(dash + 1));
      if (lo > hi) throw Error(ErrorCode::selection, "descending layer range " + std::string(item));
      for (auto i = lo; i <= hi; ++i) out.push_back(i);
    } else {
      out.push_back(number(item));
    }
    start = end + 1;
  }
  return out;
}

TensorArchive select_layer_subset(const TensorArchive& archive, const std::vector<std::size_t>& source_layers) {
  if (source_layers.empty()) throw Error(ErrorCode::selection, "empty layer selection");
  // stack -> source layer index -> entries (in archive order)
  std::map<std::string, std::map<std::size_t, std::vector<std::pair<std::string, const ArchiveEntry*>>>> stacks;
  for (const auto& e : archive.entries) {
    std::smatch m;
    if (std::regex_match(e.name, m, layer_regex())) {
      stacks[m[1].str()][std::stoul(m[2].str())].emplace_back(m[3].str(), &e);
    }
  }
  if (stacks.empty()) throw Error(ErrorCode::selection, "archive has no layer tensors");
  for (const auto& [stack, layers] : stacks) {
    for (auto l : source_layers) {
      if (l == 0 || !layers.count(l - 1)) {
        throw Error(ErrorCode::selection, "layer " + std::to_string(l) + " is not in the " + stack + " stack of " +
                                              std::to_string(layers.size()) + " layers (layers are numbered from 1)");
      }
    }
  }
  TensorArchive out;
  out.family = archive.family;
  out.metadata = archive.metadata;
  std::set<std::string> emitted;
  for (const auto& e : archive.entries) {
    std::smatch m;
    if (!std::regex_match(e.name, m, layer_regex())) {
      out.entries.push_back(e);
      continue;
    }
    const std::string stack = m[1].str();
    if (!emitted.insert(stack).second) continue;
    const auto& layers = stacks[stack];
    for (std::size_t i = 0; i < source_layers.size(); ++i) {
      for (const auto& [rest, src] : layers.at(source_layers[i] - 1)) {
        out.entries.push_back({stack + "/layer_" + std::to_string(i) + "/" + rest, src->value});
      }
    }
  }
  return out;
}

TensorArchive embeddings_only(const TensorArchive& archive) {
  TensorArchive out;
  out.family = archive.family;
  out.metadata = archive.metadata;
  for (const auto& e : archive.entries) {
    if (e.name.starts_with("embeddings/") || e.name.starts_with("decoder/embeddings/")) out.entries.push_back(e);
  }
  if (out.entries.empty()) throw Error(ErrorCode::selection, "archive has no embedding tensors");
  return out;
}

TensorArchive to_gpt_layout(const TensorArchive& archive) {
  auto get = [&](const std::string& name) -> const Tensor<float>& {
    const auto* e = archive.find(name);
    if (!e) throw Error(ErrorCode::selection, "gpt layout needs tensor " + name);
    return e->value;
  };
  TensorArchive out;
  out.family = ArchiveFamily::gpt_like;
  out.metadata = archive.metadata;
  const std::pair<const char*, const char*> emb[] = {{"embeddings/word", "wte.weight"},
                                                     {"embeddings/position", "wpe.weight"},
                                                     {"embeddings/token_type", "wtt.weight"},
                                                     {"embeddings/ln_gain", "ln_emb.weight"},
                                                     {"embeddings/ln_bias", "ln_emb.bias"}};
  for (const auto& [from, to] : emb) out.entries.push_back({to, get(from)});
  const std::size_t layers = archive_layer_count(archive, "decoder");
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string src = "decoder/layer_" + std::to_string(i) + "/";
    const std::string dst = "h." + std::to_string(i) + ".";
    const auto& q = get(src + "self/query_w");
    const auto& k = get(src + "self/key_w");
    const auto& v = get(src + "self/value_w");
    out.entries.push_back({dst + "attn.c_attn.weight", transpose2(concat_axis({&q, &k, &v}, 1, dst, 0))});
    out.entries.push_back({dst + "attn.c_attn.bias",
                           concat_axis({&get(src + "self/query_b"), &get(src + "self/key_b"), &get(src + "self/value_b")},
                                       0, dst, 0)});
    out.entries.push_back({dst + "attn.c_proj.weight", transpose2(get(src + "self/output_w"))});
    out.entries.push_back({dst + "attn.c_proj.bias", get(src + "self/output_b")});
    out.entries.push_back({dst + "ln_1.weight", get(src + "self/ln_gain")});
    out.entries.push_back({dst + "ln_1.bias", get(src + "self/ln_bias")});
    out.entries.push_back({dst + "mlp.c_fc.weight", transpose2(get(src + "ffn/intermediate_w"))});
    out.entries.push_back({dst + "mlp.c_fc.bias", get(src + "ffn/intermediate_b")});
    out.entries.push_back({dst + "mlp.c_proj.weight", transpose2(get(src + "ffn/output_w"))});
    out.entries.push_back({dst + "mlp.c_proj.bias", get(src + "ffn/output_b")});
    out.entries.push_back({dst + "ln_2.weight", get(src + "ffn/ln_gain")});
    out.entries.push_back({dst + "ln_2.bias", get(src + "ffn/ln_bias")});
  }
  return out;
}

std::string gpt_layout_rules() {
  return R"(# GPT-2 style layout -> canonical decoder names
rename wte.weight embeddings/word
rename wpe.weight embeddings/position
rename wtt.weight embeddings/token_type
rename ln_emb.weight embeddings/ln_gain
rename ln_emb.bias embeddings/ln_bias
rename h.*.attn.c_attn.weight decoder/layer_*/self/qkv_w
rename h.*.attn.c_attn.bias decoder/layer_*/self/qkv_b
rename h.*.attn.c_proj.weight decoder/layer_*/self/output_w
rename h.*.attn.c_proj.bias decoder/layer_*/self/output_b
rename h.*.ln_1.weight decoder/layer_*/self/ln_gain
rename h.*.ln_1.bias decoder/layer_*/self/ln_bias
rename h.*.mlp.c_fc.weight decoder/layer_*/ffn/intermediate_w
rename h.*.mlp.c_fc.bias decoder/layer_*/ffn/intermediate_b
rename h.*.mlp.c_proj.weight decoder/layer_*/ffn/output_w
rename h.*.mlp.c_proj.bias decoder/layer_*/ffn/output_b
rename h.*.ln_2.weight decoder/layer_*/ffn/ln_gain
rename h.*.ln_2.bias decoder/layer_*/ffn/ln_bias
# embedding matrices keep their orientation
skip embeddings/*
transpose decoder/*/*/*_w
split3 decoder/*/self/qkv_w axis=1
split3 decoder/*/self/qkv_b axis=0
)";
}

}  // namespace warmstart
