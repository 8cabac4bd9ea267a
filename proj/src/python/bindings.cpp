// Python module warmstart._core: experiment commands, parameter accounting,
// archives, vocabularies, decoding of trained models and metrics.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "warmstart/checkpoint.hpp"
#include "warmstart/convert.hpp"
#include "warmstart/decode.hpp"
#include "warmstart/error.hpp"
#include "warmstart/experiment.hpp"
#include "warmstart/metrics.hpp"
#include "warmstart/schemes.hpp"
#include "warmstart/synthetic.hpp"
#include "warmstart/train.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace warmstart;

namespace {

RunContext context(const fs::path& config, std::optional<std::uint64_t> seed, std::optional<fs::path> out) {
  return make_context(Config::load(config), seed, std::move(out));
}

std::vector<EvalExample> to_examples(const std::vector<std::string>& sources, const std::vector<std::string>& predictions,
                                     const std::vector<std::vector<std::string>>& references) {
  if (sources.size() != predictions.size() || sources.size() != references.size()) {
    throw Error(ErrorCode::dimension, "sources, predictions and references differ in length");
  }
  std::vector<EvalExample> out;
  for (std::size_t i = 0; i < sources.size(); ++i) out.push_back({sources[i], predictions[i], references[i]});
  return out;
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  d["name"] = r.name;
  d["corpus"] = r.corpus;
  d["per_example"] = r.per_example;
  d["settings"] = r.settings;
  return d;
}

py::dict param_dict(const ParamReport& r) {
  py::dict d;
  d["total"] = r.total;
  d["embedding"] = r.embedding;
  d["embeddings_block"] = r.embeddings_block;
  d["encoder"] = r.encoder;
  d["decoder"] = r.decoder;
  d["cross_attention"] = r.cross_attention;
  d["output_head"] = r.output_head;
  d["warm_started"] = r.warm_started;
  d["random"] = r.random;
  return d;
}

py::array_t<float> to_numpy(const Tensor<float>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> a(shape);
  const auto src = t.data();
  std::copy(src.begin(), src.end(), a.mutable_data());
  return a;
}

// A trained model archive plus the vocabularies it was trained with.
class TrainedModel {
 public:
  TrainedModel(const fs::path& archive_path, const fs::path& input_vocab, const fs::path& output_vocab)
      : archive_(load_archive(archive_path)),
        config_(load_model_config(archive_.metadata)),
        input_(Vocabulary::load(input_vocab)),
        output_(Vocabulary::load(output_vocab)),
        model_(config_, 1) {
    if (warm_start(model_, archive_, WarmSide::both).random_params != 0) {
      throw Error(ErrorCode::incompatible, archive_path.string() + " does not cover every model parameter");
    }
  }

  std::vector<std::pair<std::string, double>> decode(const std::vector<std::string>& sources, std::size_t beam_size,
                                                     double alpha, std::size_t max_output_length,
                                                     std::size_t max_source) const {
    DecodeParams p;
    p.beam_size = beam_size;
    p.alpha = alpha;
    p.max_output_length = max_output_length;
    p.bos = output_.bos();
    p.eos = output_.eos();
    std::vector<std::vector<TokenId>> ids;
    for (const auto& s : sources) ids.push_back(encode_source(input_, s, max_source));
    std::vector<std::pair<std::string, double>> out;
    py::gil_scoped_release release;
    const auto beams = beam_decode(model_, std::span<const std::vector<TokenId>>(ids), p, input_.pad());
    for (const auto& b : beams) out.emplace_back(output_.detokenize(b.front().tokens), b.front().score);
    return out;
  }

  py::dict config() const {
    std::map<std::string, std::string> md;
    store_model_config(config_, md);
    py::dict d;
    for (const auto& [k, v] : md) d[py::str(k)] = v;
    return d;
  }

  std::size_t parameter_count() const { return model_.parameter_count(); }

 private:
  TensorArchive archive_;
  ModelConfig config_;
  Vocabulary input_, output_;
  Seq2SeqModel<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Warm-starting encoder-decoder models from pre-trained checkpoints (toy scale)";

  static py::exception<Error> exc(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(exc, e.what());
    }
  });
  m.def("exit_code", [](const std::string& family) {
    // Enum order of ErrorCode.
    static const char* const names[] = {"dimension", "non_finite", "degenerate", "divergence", "format",
                                        "id",        "length",     "shape",      "incompatible", "selection",
                                        "rule",      "scheme",     "config",     "io"};
    for (int c = 0; c <= static_cast<int>(ErrorCode::io); ++c) {
      if (family == names[c]) return exit_code(static_cast<ErrorCode>(c));
    }
    throw py::value_error("unknown error family " + family);
  });

  using Paths = std::vector<fs::path>;
  auto command = [&m](const char* name, Paths (*fn)(const RunContext&)) {
    m.def(
        name,
        [fn](const fs::path& config, std::optional<std::uint64_t> seed, std::optional<fs::path> out) {
          auto ctx = context(config, seed, std::move(out));
          py::gil_scoped_release release;
          return fn(ctx);
        },
        py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none());
  };
  command("generate_data", &cmd_generate_data);
  command("pretrain", &cmd_pretrain);
  command("train", &cmd_train);
  command("predict", &cmd_predict);
  command("evaluate", &cmd_evaluate);
  command("convert", &cmd_convert);
  m.def(
      "count_params_table",
      [](const fs::path& config, std::optional<std::uint64_t> seed) {
        return count_params_table(context(config, seed, std::nullopt));
      },
      py::arg("config"), py::arg("seed") = py::none());

  m.def("scheme_names", [] {
    std::vector<std::string> names;
    for (const auto& s : all_schemes()) names.push_back(s.name);
    return names;
  });
  m.def(
      "count_params",
      [](const std::string& scheme, std::size_t num_layers, std::size_t hidden_size, std::size_t filter_size,
         std::size_t max_positions, std::size_t bert_vocab, std::size_t gpt_vocab) {
        ModelConfig base;
        base.num_layers = num_layers;
        base.hidden_size = hidden_size;
        base.filter_size = filter_size;
        base.num_heads = 1;
        base.max_positions = max_positions;
        const InitScheme& s = scheme_by_name(scheme);
        return param_dict(count_params(scheme_model_config(base, s, bert_vocab, gpt_vocab), s));
      },
      py::arg("scheme"), py::arg("num_layers") = 12, py::arg("hidden_size") = 768, py::arg("filter_size") = 3072,
      py::arg("max_positions") = 512, py::arg("bert_vocab") = 30522, py::arg("gpt_vocab") = 50257);

  m.def("learning_rate",
        [](double base_rate, std::size_t warmup, std::size_t hidden, std::size_t step) {
          TrainSchedule s;
          s.base_rate = base_rate;
          s.warmup_steps = warmup;
          s.hidden_size = hidden;
          return learning_rate(s, step);
        },
        py::arg("base_rate"), py::arg("warmup"), py::arg("hidden"), py::arg("step"));
  m.def("length_penalty", &length_penalty, py::arg("length"), py::arg("alpha"));

  py::class_<Vocabulary>(m, "Vocabulary")
      .def_static("load", &Vocabulary::load)
      .def_static("parse", &Vocabulary::parse)
      .def_static("synthetic", [](const std::string& style) { return synthetic_vocab(style); })
      .def("__len__", &Vocabulary::size)
      .def("tokenize", &Vocabulary::tokenize)
      .def("detokenize", [](const Vocabulary& v, const std::vector<TokenId>& ids) { return v.detokenize(ids); })
      .def("token", &Vocabulary::token)
      .def("id_of", &Vocabulary::id_of)
      .def("serialize", &Vocabulary::serialize)
      .def_property_readonly("pad", &Vocabulary::pad)
      .def_property_readonly("unk", &Vocabulary::unk)
      .def_property_readonly("bos", &Vocabulary::bos)
      .def_property_readonly("eos", &Vocabulary::eos);

  m.def("generate_task",
        [](const std::string& task, std::size_t count, std::uint64_t seed) {
          std::vector<std::pair<std::string, std::string>> out;
          for (auto& e : generate_task(parse_task(task), count, seed)) out.emplace_back(e.source, e.target);
          return out;
        },
        py::arg("task"), py::arg("count"), py::arg("seed"));

  m.def("load_archive", [](const fs::path& path) {
    const TensorArchive a = load_archive(path);
    py::dict tensors;
    for (const auto& e : a.entries) tensors[py::str(e.name)] = to_numpy(e.value);
    py::dict out;
    out["family"] = to_string(a.family);
    out["metadata"] = a.metadata;
    out["tensors"] = tensors;
    return out;
  });
  m.def("archive_names", [](const fs::path& path) { return load_archive(path).names(); });
  m.def("parse_layer_list", &parse_layer_list);
  m.def("glob_match", &glob_match);

  py::class_<TrainedModel>(m, "TrainedModel")
      .def(py::init<const fs::path&, const fs::path&, const fs::path&>(), py::arg("archive"),
           py::arg("input_vocab"), py::arg("output_vocab"))
      .def("decode", &TrainedModel::decode, py::arg("sources"), py::arg("beam_size") = 4, py::arg("alpha") = 0.6,
           py::arg("max_output_length") = 32, py::arg("max_source") = 64)
      .def("config", &TrainedModel::config)
      .def("parameter_count", &TrainedModel::parameter_count);

  m.def("compute_metric",
        [](const std::vector<std::string>& sources, const std::vector<std::string>& predictions,
           const std::vector<std::vector<std::string>>& references, const std::string& name) {
          return report_dict(compute_metric(to_examples(sources, predictions, references), name));
        },
        py::arg("sources"), py::arg("predictions"), py::arg("references"), py::arg("name"));
  m.def("sari_sentence", [](const std::string& source, const std::string& prediction,
                            const std::vector<std::string>& references) {
    const auto c = sari_sentence(source, prediction, references);
    py::dict d;
    d["add"] = c.add;
    d["keep"] = c.keep;
    d["delete"] = c.del;
    d["sari"] = c.sari;
    return d;
  });
  m.def("rouge_pair", [](const std::string& prediction, const std::string& reference, const std::string& variant) {
    const RougeVariant v = variant == "1" || variant == "rouge1"   ? RougeVariant::rouge1
                           : variant == "2" || variant == "rouge2" ? RougeVariant::rouge2
                           : variant == "L" || variant == "rougeL" ? RougeVariant::rougeL
                                                                   : throw py::value_error("variant must be 1, 2 or L");
    const auto r = rouge_pair(prediction, reference, v);
    return py::make_tuple(r.precision, r.recall, r.f1);
  });
}
