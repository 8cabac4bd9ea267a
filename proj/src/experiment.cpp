#include "warmstart/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include "warmstart/convert.hpp"
#include "warmstart/dataset.hpp"
#include "warmstart/decode.hpp"
#include "warmstart/error.hpp"
#include "warmstart/metrics.hpp"
#include "warmstart/synthetic.hpp"
#include "warmstart/train.hpp"

namespace warmstart {

namespace fs = std::filesystem;

namespace {

const std::set<std::string, std::less<>> kSections = {"model", "scheme", "init",  "vocab",    "data",
                                                      "archive", "pretrain", "train", "decode", "eval",
                                                      "convert", "count", "generate", "predict"};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::io, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path out_path(const RunContext& ctx, std::string_view key, std::string_view fallback) {
  if (auto p = ctx.config.find_path(key)) return *p;
  return ctx.out_dir / fallback;
}

void stamp(TensorArchive& archive, const RunContext& ctx) {
  archive.metadata["config_hash"] = ctx.config_hash();
  archive.metadata["seed"] = std::to_string(ctx.seed);
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ' && c != '\t') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string vocab_role(SourceKind kind) { return kind == SourceKind::bert ? "bert" : "gpt"; }

Vocabulary load_vocab(const Config& config, const std::string& role) {
  return Vocabulary::load(config.get_path("vocab." + role));
}

std::vector<std::string> load_corpus(const fs::path& path) {
  const std::string text = read_text(path);
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    out.push_back(line);
  }
  if (out.empty()) throw Error(ErrorCode::degenerate, "corpus " + path.string() + " has no sentences");
  return out;
}

TrainSchedule schedule_from(const Config& config, std::string_view section, std::size_t hidden) {
  const std::string s(section);
  TrainSchedule sched;
  sched.hidden_size = hidden;
  sched.base_rate = config.get_double(s + ".rate", sched.base_rate);
  sched.warmup_steps = config.get_size(s + ".warmup", sched.warmup_steps);
  sched.total_steps = config.get_size(s + ".steps", sched.total_steps);
  sched.batch_size = config.get_size(s + ".batch_size", sched.batch_size);
  sched.validate();
  return sched;
}

DecodeParams decode_params(const Config& config, const Vocabulary& output, std::size_t max_target) {
  DecodeParams p;
  p.beam_size = config.get_size("decode.beam_size", p.beam_size);
  p.alpha = config.get_double("decode.alpha", p.alpha);
  // Targets hold BOS and EOS; the decoder generates everything after BOS.
  p.max_output_length = config.get_size("decode.max_output_length", max_target > 1 ? max_target - 1 : 1);
  p.bos = output.bos();
  p.eos = output.eos();
  return p;
}

Truncation truncation_for(const Config& config, const ModelConfig& model) {
  Truncation t;
  t.max_source = config.get_size("data.max_source", 64);
  t.max_target = config.get_size("data.max_target", 64);
  if (t.max_target > model.max_positions) {
    throw Error(ErrorCode::config, "data.max_target exceeds model.max_positions");
  }
  // A decoder-only model reads source and target as one stream.
  if (model.decoder_only) t.max_source = std::min(t.max_source, model.max_positions - t.max_target);
  if (t.max_source == 0) throw Error(ErrorCode::config, "no room left for the source sequence");
  return t;
}

std::string fmt_millions(std::size_t n) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << static_cast<double>(n) / 1e6 << "M";
  return o.str();
}

}  // namespace

RunContext make_context(Config config, std::optional<std::uint64_t> seed, std::optional<fs::path> out) {
  for (const auto& [key, value] : config.entries()) {
    const std::string section = key.substr(0, key.find('.'));
    if (key != "seed" && key != "out" && !kSections.contains(section)) {
      throw Error(ErrorCode::config, "unknown config section in key " + key);
    }
  }
  RunContext ctx;
  ctx.seed = seed ? *seed : static_cast<std::uint64_t>(config.get_int("seed", 1));
  if (out) ctx.out_dir = *out;
  else if (auto p = config.find_path("out")) ctx.out_dir = *p;
  else ctx.out_dir = ".";
  ctx.config = std::move(config);
  return ctx;
}

std::string artifact_header(const RunContext& ctx) {
  return "# warmstart config_hash=" + ctx.config_hash() + " seed=" + std::to_string(ctx.seed) + "\n";
}

ModelConfig base_model_config(const Config& config) {
  ModelConfig m;
  m.num_layers = config.get_size("model.num_layers", m.num_layers);
  m.hidden_size = config.get_size("model.hidden_size", m.hidden_size);
  m.filter_size = config.get_size("model.filter_size", m.filter_size);
  m.num_heads = config.get_size("model.num_heads", m.num_heads);
  m.max_positions = config.get_size("model.max_positions", m.max_positions);
  m.dropout = config.get_double("model.dropout", m.dropout);
  m.tie_output_to_embedding = config.get_bool("model.tie_output", m.tie_output_to_embedding);
  return m;
}

ModelConfig scheme_model_config(const ModelConfig& base, const InitScheme& scheme, std::size_t bert_vocab,
                                std::size_t gpt_vocab) {
  ModelConfig m = base;
  m.input_vocab_size = scheme.input_vocab == "bert" ? bert_vocab : gpt_vocab;
  m.output_vocab_size = scheme.output_vocab == "bert" ? bert_vocab : gpt_vocab;
  return apply_scheme(m, scheme);
}

void store_model_config(const ModelConfig& c, std::map<std::string, std::string>& md) {
  md["model.num_layers"] = std::to_string(c.num_layers);
  md["model.hidden_size"] = std::to_string(c.hidden_size);
  md["model.filter_size"] = std::to_string(c.filter_size);
  md["model.num_heads"] = std::to_string(c.num_heads);
  md["model.input_vocab_size"] = std::to_string(c.input_vocab_size);
  md["model.output_vocab_size"] = std::to_string(c.output_vocab_size);
  md["model.max_positions"] = std::to_string(c.max_positions);
  md["model.share_encoder_decoder"] = c.share_encoder_decoder ? "1" : "0";
  md["model.tie_output"] = c.tie_output_to_embedding ? "1" : "0";
  md["model.decoder_only"] = c.decoder_only ? "1" : "0";
  md["model.encoder_only"] = c.encoder_only ? "1" : "0";
  md["model.share_embeddings"] = c.share_embeddings ? "1" : "0";
  std::ostringstream d;
  d << std::setprecision(17) << c.dropout;
  md["model.dropout"] = d.str();
}

ModelConfig load_model_config(const std::map<std::string, std::string>& md) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = md.find(key);
    if (it == md.end()) throw Error(ErrorCode::format, "archive metadata lacks " + key);
    return it->second;
  };
  auto num = [&](const std::string& key) {
    try {
      return static_cast<std::size_t>(std::stoull(get(key)));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::format, "archive metadata " + key + " is not a number");
    }
  };
  auto flag = [&](const std::string& key) { return get(key) == "1"; };
  ModelConfig c;
  c.num_layers = num("model.num_layers");
  c.hidden_size = num("model.hidden_size");
  c.filter_size = num("model.filter_size");
  c.num_heads = num("model.num_heads");
  c.input_vocab_size = num("model.input_vocab_size");
  c.output_vocab_size = num("model.output_vocab_size");
  c.max_positions = num("model.max_positions");
  c.share_encoder_decoder = flag("model.share_encoder_decoder");
  c.tie_output_to_embedding = flag("model.tie_output");
  c.decoder_only = flag("model.decoder_only");
  c.encoder_only = flag("model.encoder_only");
  c.share_embeddings = flag("model.share_embeddings");
  c.dropout = std::stod(get("model.dropout"));
  c.validate();
  return c;
}

std::vector<fs::path> cmd_generate_data(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  const std::string header = artifact_header(ctx);
  std::vector<fs::path> written;
  const auto tasks = split_list(cfg.get_string("generate.tasks", "fusion-toy,split-toy,copy"));
  const std::size_t n_train = cfg.get_size("generate.train_count", 2000);
  const std::size_t n_eval = cfg.get_size("generate.eval_count", 200);
  for (const auto& name : tasks) {
    const SyntheticTask task = parse_task(name);
    const auto dir = ctx.out_dir / to_string(task);
    // Train and eval draw from disjoint seed streams.
    const auto train_set = generate_task(task, n_train, mix_seed(ctx.seed, 1));
    const auto eval_set = generate_task(task, n_eval, mix_seed(ctx.seed, 2));
    write_text(dir / "train.tsv", format_tsv(train_set, header));
    write_text(dir / "eval.tsv", format_tsv(eval_set, header));
    written.push_back(dir / "train.tsv");
    written.push_back(dir / "eval.tsv");
  }
  std::string corpus = header;
  for (const auto& s : generate_corpus(cfg.get_size("generate.corpus_count", 4000), mix_seed(ctx.seed, 3))) {
    corpus += s + "\n";
  }
  write_text(ctx.out_dir / "corpus.txt", corpus);
  written.push_back(ctx.out_dir / "corpus.txt");
  for (const std::string style : {"bert", "gpt"}) {
    const auto path = ctx.out_dir / ("vocab_" + style + ".txt");
    write_text(path, "#! warmstart config_hash=" + ctx.config_hash() + " seed=" + std::to_string(ctx.seed) + "\n" +
                         synthetic_vocab(style).serialize());
    written.push_back(path);
  }
  return written;
}

std::vector<fs::path> cmd_pretrain(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  const std::string role = cfg.get_string("pretrain.vocab", "bert");
  if (role != "bert" && role != "gpt") throw Error(ErrorCode::config, "pretrain.vocab must be bert or gpt");
  const Vocabulary vocab = load_vocab(cfg, role);
  const std::size_t max_len = cfg.get_size("pretrain.max_length", 64);
  std::vector<std::vector<TokenId>> corpus;
  for (const auto& s : load_corpus(cfg.get_path("pretrain.corpus"))) {
    auto ids = vocab.tokenize(s);
    if (ids.size() > max_len) ids.resize(max_len);
    if (!ids.empty()) corpus.push_back(std::move(ids));
  }
  PretrainOptions opts;
  opts.objective = parse_objective(cfg.get_string("pretrain.objective", "masked"));
  ModelConfig model = base_model_config(cfg);
  opts.schedule = schedule_from(cfg, "pretrain", model.hidden_size);
  opts.seed = ctx.seed;
  opts.mask_rate = cfg.get_double("pretrain.mask_rate", opts.mask_rate);
  opts.log_every = cfg.get_size("pretrain.log_every", opts.log_every);

  PretrainResult result = toy_pretrain(model, corpus, vocab, opts);
  stamp(result.archive, ctx);
  result.archive.metadata["vocab"] = role;
  const auto archive_path = out_path(ctx, "pretrain.output", "pretrain.wsck");
  fs::create_directories(archive_path.parent_path().empty() ? fs::path(".") : archive_path.parent_path());
  save_archive(result.archive, archive_path);
  const auto loss_path = ctx.out_dir / "pretrain_loss.csv";
  write_text(loss_path, format_loss_csv(result.curve, artifact_header(ctx)));
  return {archive_path, loss_path};
}

std::vector<fs::path> cmd_train(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  const InitScheme& scheme = scheme_by_name(cfg.get_string("scheme"));
  const Vocabulary input = load_vocab(cfg, scheme.input_vocab);
  const Vocabulary output = load_vocab(cfg, scheme.output_vocab);
  const std::size_t bert_size = scheme.input_vocab == "bert" ? input.size()
                                : scheme.output_vocab == "bert" ? output.size()
                                                                : 0;
  const std::size_t gpt_size = scheme.input_vocab == "gpt" ? input.size()
                               : scheme.output_vocab == "gpt" ? output.size()
                                                              : 0;
  const ModelConfig model_config = scheme_model_config(base_model_config(cfg), scheme, bert_size, gpt_size);
  const SchemeModifiers modifiers = modifiers_from_config(cfg);

  // One archive per source kind the scheme names.
  std::map<SourceKind, TensorArchive> archives;
  for (SourceKind kind : {scheme.encoder_source, scheme.decoder_source}) {
    if (kind == SourceKind::none || archives.contains(kind)) continue;
    TensorArchive a = load_archive(cfg.get_path("archive." + to_string(kind)));
    if (auto it = a.metadata.find("vocab"); it != a.metadata.end() && it->second != vocab_role(kind)) {
      throw Error(ErrorCode::scheme, "archive." + to_string(kind) + " was trained with the " + it->second +
                                         " vocabulary, scheme " + scheme.name + " expects " + vocab_role(kind));
    }
    archives.emplace(kind, std::move(a));
  }
  SchemeArchives sources;
  if (auto it = archives.find(scheme.encoder_source); it != archives.end()) sources.encoder = &it->second;
  if (auto it = archives.find(scheme.decoder_source); it != archives.end()) sources.decoder = &it->second;

  auto built = build_model<float>(model_config, scheme, sources, ctx.seed, modifiers);

  const Truncation trunc = truncation_for(cfg, model_config);
  auto examples = load_tsv(cfg.get_path("data.train"));
  const double fraction = cfg.get_double("data.fraction", 1.0);
  if (fraction != 1.0) examples = subsample(examples, fraction, mix_seed(ctx.seed, 5));
  const auto data = encode_dataset(examples, input, output, trunc);

  TrainOptions opts;
  opts.schedule = schedule_from(cfg, "train", model_config.hidden_size);
  opts.seed = ctx.seed;
  opts.log_every = cfg.get_size("train.log_every", opts.log_every);
  opts.source_pad = input.pad();
  opts.target_pad = output.pad();
  if (cfg.has("train.freeze")) {
    FreezeSpec freeze;
    freeze.globs = split_list(cfg.get_string("train.freeze"));
    freeze.unfreeze_at_step = cfg.get_size("train.unfreeze_at", 0);
    opts.freeze = freeze;
  }
  const TrainResult result = train(built.model, data, opts);

  TensorArchive archive = archive_from_model(built.model);
  stamp(archive, ctx);
  store_model_config(model_config, archive.metadata);
  archive.metadata["scheme"] = scheme.name;
  archive.metadata["vocab.input"] = scheme.input_vocab;
  archive.metadata["vocab.output"] = scheme.output_vocab;
  archive.metadata["steps"] = std::to_string(result.steps_run);
  const auto model_path = out_path(ctx, "train.output", "model.wsck");
  fs::create_directories(model_path.parent_path().empty() ? fs::path(".") : model_path.parent_path());
  save_archive(archive, model_path);

  const auto loss_path = ctx.out_dir / "loss.csv";
  write_text(loss_path, format_loss_csv(result.curve, artifact_header(ctx)));

  std::ostringstream rep;
  rep << artifact_header(ctx) << "scheme=" << scheme.name << "\n"
      << "train_examples=" << data.size() << "\n"
      << "warm_params=" << built.report.warm_params << "\n"
      << "random_params=" << built.report.random_params << "\n";
  for (const auto& n : built.report.warm_names) rep << "warm=" << n << "\n";
  for (const auto& n : built.report.random_names) rep << "random=" << n << "\n";
  for (const auto& n : built.report.unused_archive_names) rep << "unused=" << n << "\n";
  const auto report_path = ctx.out_dir / "init_report.txt";
  write_text(report_path, rep.str());
  return {model_path, loss_path, report_path};
}

std::vector<fs::path> cmd_predict(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  const fs::path model_path = cfg.find_path("predict.model").value_or(ctx.out_dir / "model.wsck");
  const TensorArchive archive = load_archive(model_path);
  const ModelConfig model_config = load_model_config(archive.metadata);
  auto role = [&](const std::string& key) {
    auto it = archive.metadata.find(key);
    if (it == archive.metadata.end()) throw Error(ErrorCode::format, model_path.string() + " lacks metadata " + key);
    return it->second;
  };
  const Vocabulary input = load_vocab(cfg, role("vocab.input"));
  const Vocabulary output = load_vocab(cfg, role("vocab.output"));

  Seq2SeqModel<float> model(model_config, ctx.seed);
  const InitReport rep = warm_start(model, archive, WarmSide::both);
  if (rep.random_params != 0) {
    throw Error(ErrorCode::incompatible, model_path.string() + " does not cover every model parameter");
  }

  // Sources in first-appearance order; every target of a source is a reference.
  const auto examples = load_tsv(cfg.get_path("data.eval"));
  std::vector<std::string> sources;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::vector<std::string>> refs;
  for (const auto& e : examples) {
    auto [it, fresh] = index.emplace(e.source, sources.size());
    if (fresh) {
      sources.push_back(e.source);
      refs.emplace_back();
    }
    refs[it->second].push_back(e.target);
  }
  if (sources.empty()) throw Error(ErrorCode::degenerate, "no evaluation sources");

  const Truncation trunc = truncation_for(cfg, model_config);
  DecodeParams params = decode_params(cfg, output, trunc.max_target);
  if (model_config.decoder_only && trunc.max_source + params.max_output_length > model_config.max_positions) {
    throw Error(ErrorCode::config, "decode.max_output_length leaves no room for the source");
  }
  params.validate(model_config.max_positions);
  const std::size_t chunk = std::max<std::size_t>(1, cfg.get_size("predict.batch_size", 32));

  std::ostringstream pred, scores;
  pred << artifact_header(ctx);
  scores << artifact_header(ctx) << "index,score,log_prob,length\n" << std::setprecision(10);
  for (std::size_t start = 0; start < sources.size(); start += chunk) {
    const std::size_t end = std::min(sources.size(), start + chunk);
    std::vector<std::vector<TokenId>> ids;
    for (std::size_t i = start; i < end; ++i) ids.push_back(encode_source(input, sources[i], trunc.max_source));
    const auto beams = beam_decode(model, std::span<const std::vector<TokenId>>(ids), params, input.pad());
    for (std::size_t i = start; i < end; ++i) {
      const Hypothesis& best = beams[i - start].front();
      std::string refs_joined;
      for (const auto& r : refs[i]) refs_joined += (refs_joined.empty() ? "" : "|||") + r;
      pred << sources[i] << '\t' << output.detokenize(best.tokens) << '\t' << refs_joined << '\n';
      scores << i << ',' << best.score << ',' << best.log_prob << ',' << best.length << '\n';
    }
  }
  const auto pred_path = out_path(ctx, "predict.output", "predictions.tsv");
  const auto score_path = ctx.out_dir / "scores.csv";
  write_text(pred_path, pred.str());
  write_text(score_path, scores.str());
  return {pred_path, score_path};
}

std::vector<fs::path> cmd_evaluate(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  const fs::path input = cfg.find_path("eval.predictions").value_or(ctx.out_dir / "predictions.tsv");
  const auto examples = load_eval_tsv(input);
  std::vector<MetricReport> reports;
  for (const auto& name : split_list(cfg.get_string("eval.metrics", "exact,sari,bleu"))) {
    reports.push_back(compute_metric(examples, name));
  }
  const auto kv = ctx.out_dir / "metrics.txt";
  const auto csv = ctx.out_dir / "metrics.csv";
  write_text(kv, format_reports_kv(reports, artifact_header(ctx)));
  write_text(csv, format_reports_csv(reports, artifact_header(ctx)));
  return {kv, csv};
}

std::vector<fs::path> cmd_convert(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  const fs::path input = cfg.get_path("convert.input");
  TensorArchive archive = load_archive(input);
  std::vector<std::string> unmatched;
  if (auto rules = cfg.find_path("convert.rules")) {
    auto result = convert_foreign(archive, MappingRules::load(*rules));
    archive = std::move(result.archive);
    unmatched = std::move(result.unmatched);
  }
  if (cfg.has("convert.layers")) archive = select_layer_subset(archive, parse_layer_list(cfg.get_string("convert.layers")));
  if (cfg.get_bool("convert.embeddings_only", false)) archive = embeddings_only(archive);
  if (cfg.get_bool("convert.to_gpt_layout", false)) archive = to_gpt_layout(archive);
  if (cfg.has("convert.family")) archive.family = parse_family(cfg.get_string("convert.family"));
  archive.metadata["source_archive"] = input.filename().string();
  stamp(archive, ctx);

  const auto out = out_path(ctx, "convert.output", "converted.wsck");
  if (fs::exists(out) && fs::equivalent(out, input)) {
    throw Error(ErrorCode::config, "convert.output would overwrite the input archive");
  }
  fs::create_directories(out.parent_path().empty() ? fs::path(".") : out.parent_path());
  save_archive(archive, out);
  std::string rep = artifact_header(ctx);
  rep += "tensors=" + std::to_string(archive.entries.size()) + "\n";
  rep += "parameters=" + std::to_string(archive.parameter_count()) + "\n";
  for (const auto& n : unmatched) rep += "unmatched=" + n + "\n";
  const auto rep_path = ctx.out_dir / "convert_report.txt";
  write_text(rep_path, rep);
  return {out, rep_path};
}

std::string count_params_table(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  ModelConfig base = base_model_config(cfg);
  const std::size_t bert = cfg.get_size("count.bert_vocab", 30522);
  const std::size_t gpt = cfg.get_size("count.gpt_vocab", 50257);
  const std::string which = cfg.get_string("scheme", "all");
  const SchemeModifiers modifiers = modifiers_from_config(cfg);
  std::vector<const InitScheme*> schemes;
  if (which == "all") {
    for (const auto& s : all_schemes()) schemes.push_back(&s);
  } else {
    schemes.push_back(&scheme_by_name(which));
  }
  std::ostringstream out;
  out << artifact_header(ctx) << std::left << std::setw(14) << "scheme" << std::right << std::setw(10) << "total"
      << std::setw(10) << "embed." << std::setw(10) << "init." << std::setw(10) << "random"
      << "  exact(total,embed,init,random,cross)\n";
  for (const auto* s : schemes) {
    const ParamReport r = count_params(scheme_model_config(base, *s, bert, gpt), *s, modifiers);
    out << std::left << std::setw(14) << s->name << std::right << std::setw(10) << fmt_millions(r.total)
        << std::setw(10) << fmt_millions(r.embedding) << std::setw(10) << fmt_millions(r.warm_started)
        << std::setw(10) << fmt_millions(r.random) << "  " << r.total << ',' << r.embedding << ','
        << r.warm_started << ',' << r.random << ',' << r.cross_attention << "\n";
  }
  return out.str();
}

}  // namespace warmstart
