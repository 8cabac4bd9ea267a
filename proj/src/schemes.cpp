#include "warmstart/schemes.hpp"

#include <algorithm>

#include "warmstart/convert.hpp"
#include "warmstart/error.hpp"

namespace warmstart {

std::string to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::none: return "none";
    case SourceKind::bert: return "bert";
    case SourceKind::roberta: return "roberta";
    case SourceKind::gpt: return "gpt";
  }
  return "unknown";
}

const std::vector<InitScheme>& all_schemes() {
  using S = SourceKind;
  static const std::vector<InitScheme> schemes = {
      {"RND2RND", S::none, S::none, false, false, "bert", "bert", false},
      {"BERT2RND", S::bert, S::none, false, false, "bert", "bert", false},
      {"RND2BERT", S::none, S::bert, false, false, "bert", "bert", false},
      {"BERT2BERT", S::bert, S::bert, false, false, "bert", "bert", false},
      {"BERTSHARE", S::bert, S::bert, true, false, "bert", "bert", false},
      {"ROBERTASHARE", S::roberta, S::roberta, true, false, "gpt", "gpt", false},
      {"GPT", S::none, S::gpt, false, true, "gpt", "gpt", false},
      {"RND2GPT", S::none, S::gpt, false, false, "gpt", "gpt", false},
      {"BERT2GPT", S::bert, S::gpt, false, false, "bert", "gpt", true},
      {"ROBERTA2GPT", S::roberta, S::gpt, false, false, "gpt", "gpt", true},
  };
  return schemes;
}

const InitScheme& scheme_by_name(std::string_view name) {
  for (const auto& s : all_schemes()) {
    if (s.name == name) return s;
  }
  throw Error(ErrorCode::scheme, "unknown scheme " + std::string(name));
}

ModelConfig apply_scheme(ModelConfig base, const InitScheme& scheme) {
  base.decoder_only = scheme.decoder_only;
  base.encoder_only = false;
  base.share_encoder_decoder = scheme.share_encoder_decoder;
  base.share_embeddings = !scheme.separate_embeddings;
  if (scheme.decoder_only) base.input_vocab_size = base.output_vocab_size;
  return base;
}

ParamReport count_params(const ModelConfig& config, const InitScheme& scheme, const SchemeModifiers& modifiers) {
  const ModelConfig c = apply_scheme(config, scheme);
  ParamReport r = count_params(c);
  const std::size_t h = c.hidden_size;
  const bool enc_warm = scheme.encoder_source != SourceKind::none;
  const bool dec_warm = scheme.decoder_source != SourceKind::none;

  auto block = [&](std::size_t vocab) {
    std::size_t n = embedding_block_param_count(vocab, c.max_positions, h);
    if (modifiers.exclude_word_embeddings) n -= vocab * h;
    return n;
  };
  const std::size_t layers =
      modifiers.embeddings_only
          ? 0
          : (modifiers.layer_subset.empty() ? c.num_layers : std::min(c.num_layers, modifiers.layer_subset.size()));
  const std::size_t layer = layer_param_count(h, c.filter_size);

  std::size_t warm = 0;
  if (c.separate_decoder_embeddings()) {
    if (enc_warm) warm += block(c.input_vocab_size);
    if (dec_warm) warm += block(c.output_vocab_size);
  } else if (enc_warm || dec_warm) {
    warm += block(c.input_vocab_size);
  }
  if (enc_warm) warm += layers * layer;
  if (dec_warm && !(c.share_encoder_decoder && enc_warm)) warm += layers * layer;
  r.warm_started = warm;
  r.random = r.total - warm;
  return r;
}

TensorArchive modify_archive(const TensorArchive& archive, const SchemeModifiers& modifiers) {
  TensorArchive out = archive;
  if (!modifiers.layer_subset.empty()) out = select_layer_subset(out, modifiers.layer_subset);
  if (modifiers.embeddings_only) out = embeddings_only(out);
  if (modifiers.exclude_word_embeddings) {
    std::erase_if(out.entries, [](const ArchiveEntry& e) { return e.name.ends_with("embeddings/word"); });
  }
  return out;
}

SchemeModifiers modifiers_from_config(const Config& config) {
  SchemeModifiers m;
  m.embeddings_only = config.get_bool("init.embeddings_only", false);
  m.exclude_word_embeddings = config.get_bool("init.exclude_word_embeddings", false);
  const std::string subset = config.get_string("init.layer_subset", "");
  if (!subset.empty()) m.layer_subset = parse_layer_list(subset);
  return m;
}

namespace {

ArchiveFamily expected_family(SourceKind kind) {
  return kind == SourceKind::gpt ? ArchiveFamily::gpt_like : ArchiveFamily::bert_like;
}

const TensorArchive* pick(const InitScheme& scheme, bool encoder_side, const SchemeArchives& archives) {
  const SourceKind kind = encoder_side ? scheme.encoder_source : scheme.decoder_source;
  const SourceKind other = encoder_side ? scheme.decoder_source : scheme.encoder_source;
  const TensorArchive* own = encoder_side ? archives.encoder : archives.decoder;
  const TensorArchive* fallback = encoder_side ? archives.decoder : archives.encoder;
  const TensorArchive* a = own ? own : (other == kind ? fallback : nullptr);
  const char* side = encoder_side ? "encoder" : "decoder";
  if (!a) {
    throw Error(ErrorCode::scheme, "scheme " + scheme.name + " warm-starts the " + side + " from a " + to_string(kind) +
                                       " checkpoint but no archive was given");
  }
  if (a->family != ArchiveFamily::native && a->family != expected_family(kind)) {
    throw Error(ErrorCode::scheme, "scheme " + scheme.name + " expects a " + to_string(expected_family(kind)) +
                                       " archive for the " + side + ", got " + to_string(a->family));
  }
  return a;
}

}  // namespace

template <class T>
BuiltModel<T> build_model(const ModelConfig& config, const InitScheme& scheme, const SchemeArchives& archives,
                          std::uint64_t seed, const SchemeModifiers& modifiers) {
  BuiltModel<T> built{Seq2SeqModel<T>(apply_scheme(config, scheme), seed), {}};
  std::vector<TensorArchive> prepared;
  prepared.reserve(2);
  std::vector<std::pair<const TensorArchive*, WarmSide>> sources;
  if (scheme.encoder_source != SourceKind::none) {
    prepared.push_back(modify_archive(*pick(scheme, true, archives), modifiers));
    sources.emplace_back(&prepared.back(), WarmSide::encoder);
  }
  if (scheme.decoder_source != SourceKind::none) {
    prepared.push_back(modify_archive(*pick(scheme, false, archives), modifiers));
    sources.emplace_back(&prepared.back(), WarmSide::decoder);
  }
  built.report = sources.empty() ? cold_report(built.model) : warm_start(built.model, sources);
  return built;
}

template BuiltModel<float> build_model<float>(const ModelConfig&, const InitScheme&, const SchemeArchives&,
                                              std::uint64_t, const SchemeModifiers&);
template BuiltModel<double> build_model<double>(const ModelConfig&, const InitScheme&, const SchemeArchives&,
                                                std::uint64_t, const SchemeModifiers&);

}  // namespace warmstart
