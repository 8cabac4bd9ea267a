// warmstart {generate-data|pretrain|train|predict|evaluate|convert|count-params}
//   --config <path> [--seed N] [--out <dir>]

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "warmstart/config.hpp"
#include "warmstart/error.hpp"
#include "warmstart/experiment.hpp"

namespace fs = std::filesystem;
using namespace warmstart;

namespace {

// Everything here runs on one thread; the variable is still validated so a
// typo does not pass silently.
void check_threads_env() {
  const char* env = std::getenv("WARMSTART_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw Error(ErrorCode::config, "WARMSTART_THREADS must be a positive integer");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Warm-started encoder-decoder experiments on toy data"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  struct Cmd {
    const char* name;
    const char* help;
  };
  const Cmd cmds[] = {
      {"generate-data", "write the synthetic datasets, corpus and vocabularies"},
      {"pretrain", "masked or causal toy pretraining; writes an archive"},
      {"train", "build a model for a scheme, warm-start and fine-tune"},
      {"predict", "beam-search decode the evaluation sources"},
      {"evaluate", "score a predictions file"},
      {"convert", "rewrite an archive with mapping rules and selectors"},
      {"count-params", "parameter accounting per scheme"},
  };
  for (const auto& c : cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "flat key=value config file")->required();
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(ErrorCode::config);
  }

  try {
    check_threads_env();
    const RunContext ctx =
        make_context(Config::load(config_path), seed, out ? std::optional<fs::path>(*out) : std::nullopt);
    const std::string name = app.get_subcommands().front()->get_name();
    std::vector<fs::path> written;
    if (name == "generate-data") written = cmd_generate_data(ctx);
    else if (name == "pretrain") written = cmd_pretrain(ctx);
    else if (name == "train") written = cmd_train(ctx);
    else if (name == "predict") written = cmd_predict(ctx);
    else if (name == "evaluate") written = cmd_evaluate(ctx);
    else if (name == "convert") written = cmd_convert(ctx);
    else if (name == "count-params") {
      const std::string table = count_params_table(ctx);
      std::cout << table;
      if (out) {
        fs::create_directories(*out);
        std::ofstream(fs::path(*out) / "params.txt", std::ios::binary) << table;
      }
    }
    for (const auto& p : written) std::cerr << "wrote " << p.string() << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "warmstart: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "warmstart: io: " << e.what() << "\n";
    return exit_code(ErrorCode::io);
  }
}
