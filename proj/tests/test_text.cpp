#include <doctest.h>

#include <algorithm>
#include <set>

#include "support.hpp"
#include "warmstart/config.hpp"
#include "warmstart/dataset.hpp"
#include "warmstart/error.hpp"
#include "warmstart/synthetic.hpp"
#include "warmstart/vocab.hpp"

using namespace warmstart;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::io;
}

Vocabulary small_vocab() {
  return Vocabulary::parse("#! uncased\n[PAD]\n[UNK]\n[BOS]\n[EOS]\n[MASK]\nun\n##aff\n##able\nrun\n##s\nthe\n.\n");
}

}  // namespace

TEST_SUITE("vocab") {
  TEST_CASE("greedy longest match with continuation pieces") {
    const auto v = small_vocab();
    CHECK(v.tokenize("Unaffable") == std::vector<TokenId>{5, 6, 7});
    CHECK(v.tokenize("the runs .") == std::vector<TokenId>{10, 8, 9, 11});
    CHECK(v.tokenize("xyz") == std::vector<TokenId>{v.unk()});
    CHECK(v.tokenize("") .empty());
    CHECK(v.detokenize(v.tokenize("the runs .")) == "the runs .");
  }

  TEST_CASE("reserved tokens and header directives") {
    const auto v = Vocabulary::parse("#! warmstart config_hash=0 seed=1\n#! cased\n#! pad=<p> unk=<u> bos=<b> eos=<e> mask=<m>\n<b>\n<e>\n<p>\n<u>\nx\n");
    CHECK(v.pad() == 2);
    CHECK(v.unk() == 3);
    CHECK(v.bos() == 0);
    CHECK(!v.mask().has_value());
    CHECK(v.size() == 5);
    CHECK(Vocabulary::parse(v.serialize()).tokens() == v.tokens());
  }

  TEST_CASE("format and id errors") {
    CHECK(code_of([] { Vocabulary::parse("[PAD]\n[UNK]\n[BOS]\n[EOS]\nx\nx\n"); }) == ErrorCode::format);
    CHECK(code_of([] { Vocabulary::parse("[PAD]\n[UNK]\nx\n"); }) == ErrorCode::format);
    CHECK(code_of([] { small_vocab().token(99); }) == ErrorCode::id);
    CHECK(code_of([] { small_vocab().id_of("nope"); }) == ErrorCode::id);
  }

  TEST_CASE("synthetic vocabularies cover the generated text") {
    for (const char* style : {"bert", "gpt"}) {
      const auto v = synthetic_vocab(style);
      for (const auto& e : generate_task(SyntheticTask::fusion, 200, 4)) {
        for (auto id : v.tokenize(e.source + " " + e.target)) CHECK(id != v.unk());
      }
    }
    CHECK(synthetic_vocab("bert").tokenize("watches").size() == 2);
    CHECK(synthetic_vocab("gpt").tokenize("watches").size() == 1);
  }
}

TEST_SUITE("dataset") {
  TEST_CASE("tsv parsing skips comments and reports bad lines") {
    const auto ex = parse_tsv("# header\na b\tc\n\nd\te f\n");
    REQUIRE(ex.size() == 2);
    CHECK(ex[1].target == "e f");
    CHECK(parse_tsv(format_tsv(ex, "# h\n")) == ex);
    CHECK(code_of([] { parse_tsv("no tab here\n"); }) == ErrorCode::format);
  }

  TEST_CASE("encoding truncates and wraps targets") {
    const auto v = small_vocab();
    const auto t = encode_target(v, "the runs the runs", 4);
    CHECK(t.size() == 4);
    CHECK(t.front() == v.bos());
    CHECK(t.back() == v.eos());
    CHECK(encode_source(v, "the the the", 2).size() == 2);
  }

  TEST_CASE("subsampling is seeded, ordered and nested") {
    const auto a = subsample_indices(100, 0.1, 7);
    const auto b = subsample_indices(100, 0.3, 7);
    CHECK(a.size() == 10);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK(std::includes(b.begin(), b.end(), a.begin(), a.end()));
    CHECK(subsample_indices(100, 0.1, 7) == a);
    CHECK(subsample_indices(100, 0.1, 8) != a);
    CHECK(code_of([] { subsample_indices(10, 0.0, 1); }) == ErrorCode::config);
    CHECK(code_of([] { subsample_indices(10, 0.01, 1); }) == ErrorCode::degenerate);
  }

  TEST_CASE("batches pad on the right") {
    std::vector<EncodedExample> ex = {{{5, 6, 7}, {2, 8, 3}}, {{5}, {2, 3}}};
    const std::vector<std::size_t> idx = {0, 1};
    const auto b = make_batch(ex, idx, 0, 0);
    CHECK(b.source.length == 3);
    CHECK(b.source.mask == std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0});
    CHECK(b.target.real_length(1) == 2);
  }

  TEST_CASE("synthetic tasks follow the fusion rules") {
    for (const auto& e : generate_task(SyntheticTask::fusion, 300, 2)) {
      const bool connective = e.source.find("however") != std::string::npos;
      CHECK(connective == (e.target.find(", but") != std::string::npos));
      CHECK(e.source.find(" . ") != std::string::npos);
    }
    const auto split = generate_task(SyntheticTask::split, 5, 2);
    const auto fusion = generate_task(SyntheticTask::fusion, 5, 2);
    for (std::size_t i = 0; i < 5; ++i) CHECK(split[i].source == fusion[i].target);
    for (const auto& e : generate_task(SyntheticTask::copy, 20, 2)) CHECK(e.source == e.target);
    CHECK(generate_task(SyntheticTask::fusion, 50, 9) == generate_task(SyntheticTask::fusion, 50, 9));
  }
}

TEST_SUITE("config") {
  TEST_CASE("flat keys with comments") {
    const auto c = Config::parse("# c\nmodel.hidden_size = 32  # trailing\nscheme=BERT2RND\nflag=true\n");
    CHECK(c.get_int("model.hidden_size") == 32);
    CHECK(c.get_string("scheme") == "BERT2RND");
    CHECK(c.get_bool("flag"));
    CHECK(c.get_double("missing", 0.5) == 0.5);
    CHECK(c.unused_keys().empty());
  }

  TEST_CASE("errors carry line numbers") {
    try {
      Config::parse("a=1\nnot a pair\n", "x.conf");
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::config);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK(code_of([] { Config::parse("a=1\na=2\n"); }) == ErrorCode::config);
    CHECK(code_of([] { Config::parse("a=x\n").get_int("a"); }) == ErrorCode::config);
  }

  TEST_CASE("hash ignores order and comments") {
    CHECK(Config::parse("a=1\nb=2\n").hash() == Config::parse("# x\nb=2\na=1\n").hash());
    CHECK(Config::parse("a=1\n").hash() != Config::parse("a=2\n").hash());
  }
}
