#include <doctest.h>

#include "pipeline.hpp"
#include "support.hpp"
#include "warmstart/error.hpp"

using namespace warmstart;

TEST_SUITE("experiment") {
  TEST_CASE("tiny pipeline writes every artifact with a provenance header") {
    const auto dir = wstest::temp_dir("pipeline");
    const auto files = wstest::run_tiny_pipeline(dir, 3, 10);
    for (const char* name : {"data/vocab_bert.txt", "pre/pretrain.wsck", "pre/pretrain_loss.csv", "fine/model.wsck",
                             "fine/loss.csv", "fine/init_report.txt", "fine/predictions.tsv", "fine/scores.csv",
                             "fine/metrics.txt", "fine/metrics.csv"}) {
      CAPTURE(name);
      CHECK(files.count(name) == 1);
    }
    CHECK(files.at("fine/metrics.txt").starts_with("# warmstart config_hash="));
    CHECK(files.at("fine/metrics.txt").find("\nsari=") != std::string::npos);
    CHECK(files.at("fine/init_report.txt").find("random=") != std::string::npos);
    const auto archive = load_archive(dir / "fine/model.wsck");
    CHECK(archive.metadata.at("scheme") == "BERT2RND");
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("config problems map to their error families") {
    const auto dir = wstest::temp_dir("cfg");
    auto code_of = [](const std::function<void()>& fn) {
      try {
        fn();
      } catch (const Error& e) {
        return e.code();
      }
      return ErrorCode::io;
    };
    wstest::write_file(dir / "a.conf", "bogus.key=1\n");
    CHECK(code_of([&] { make_context(Config::load(dir / "a.conf")); }) == ErrorCode::config);
    wstest::write_file(dir / "b.conf", "scheme=NOPE\n");
    CHECK(code_of([&] { cmd_train(make_context(Config::load(dir / "b.conf"))); }) == ErrorCode::scheme);
    CHECK(code_of([&] { Config::load(dir / "missing.conf"); }) == ErrorCode::io);
    CHECK(exit_code(ErrorCode::config) == 2);
    CHECK(exit_code(ErrorCode::io) == 3);
    CHECK(exit_code(ErrorCode::divergence) == 8);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("seed overrides change the outputs") {
    const auto da = wstest::temp_dir("seed_a"), db = wstest::temp_dir("seed_b");
    const auto a = wstest::run_tiny_pipeline(da, 1, 5);
    const auto b = wstest::run_tiny_pipeline(db, 2, 5);
    std::filesystem::remove_all(da);
    std::filesystem::remove_all(db);
    CHECK(a.at("fine/model.wsck") != b.at("fine/model.wsck"));
    CHECK(a.at("data/corpus.txt") != b.at("data/corpus.txt"));
  }
}
