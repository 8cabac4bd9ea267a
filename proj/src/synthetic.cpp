#include "warmstart/synthetic.hpp"

#include <algorithm>
#include <set>

#include "warmstart/error.hpp"
#include "warmstart/random.hpp"

namespace warmstart {

namespace {

struct Subject {
  const char* text;
  const char* pronoun;
};

constexpr Subject kSubjects[] = {
    {"john", "he"},     {"tom", "he"},      {"peter", "he"},   {"mark", "he"},
    {"mary", "she"},    {"anna", "she"},    {"lucy", "she"},   {"emma", "she"},
    {"the dog", "it"},  {"the cat", "it"},  {"the bird", "it"}, {"the horse", "it"},
};

struct Verb {
  const char* stem;
  const char* third;
};

constexpr Verb kVerbs[] = {
    {"walk", "walks"}, {"run", "runs"},     {"jump", "jumps"},   {"sing", "sings"},
    {"read", "reads"}, {"sleep", "sleeps"}, {"cook", "cooks"},   {"paint", "paints"},
    {"swim", "swims"}, {"laugh", "laughs"}, {"dance", "dances"}, {"smile", "smiles"},
    {"watch", "watches"}, {"wash", "washes"}, {"play", "plays"}, {"work", "works"},
};

constexpr const char* kComplements[] = {
    "in the park", "at home", "every day", "very fast", "with a friend", "in the morning", "at night", "near the river",
};

constexpr const char* kFunctionWords[] = {"and", "but", "so", "however", "therefore", ",", ".", "he", "she", "it"};

// Selectional preferences: every subject favours four verbs and every verb
// two complements. Without them all subjects (and all verbs) would be
// distributionally interchangeable, and a masked LM trained on the corpus
// would learn to blur their identities.
constexpr double kPreferred = 0.75;

std::string predicate(Rng& rng, std::size_t subject) {
  const std::size_t nv = std::size(kVerbs), nc = std::size(kComplements);
  const std::size_t v = uniform01(rng) < kPreferred ? (3 * subject + uniform_index(rng, 4)) % nv : uniform_index(rng, nv);
  std::string p = kVerbs[v].third;
  if (uniform01(rng) < 0.6) {
    const std::size_t c = uniform01(rng) < kPreferred ? (v + 3 * uniform_index(rng, 2)) % nc : uniform_index(rng, nc);
    p += ' ';
    p += kComplements[c];
  }
  return p;
}

struct Fusion {
  std::string split;
  std::string fused;
};

Fusion fusion_pair(Rng& rng) {
  const std::size_t s1 = uniform_index(rng, std::size(kSubjects));
  const std::string subj = kSubjects[s1].text;
  const std::string pron = kSubjects[s1].pronoun;
  const std::size_t form = uniform_index(rng, 4);
  std::size_t s2 = s1;
  if (form == 3) {
    s2 = uniform_index(rng, std::size(kSubjects) - 1);
    if (s2 >= s1) ++s2;
  }
  const std::string p1 = predicate(rng, s1);
  std::string p2 = predicate(rng, s2);
  while (p2 == p1) p2 = predicate(rng, s2);
  switch (form) {
    case 0:
      return {subj + " " + p1 + " . " + subj + " " + p2 + " .", subj + " " + p1 + " and " + p2 + " ."};
    case 1:
      return {subj + " " + p1 + " . however , " + subj + " " + p2 + " .",
              subj + " " + p1 + " , but " + pron + " " + p2 + " ."};
    case 2:
      return {subj + " " + p1 + " . therefore , " + subj + " " + p2 + " .",
              subj + " " + p1 + " , so " + pron + " " + p2 + " ."};
    default: {
      const std::string other = kSubjects[s2].text;
      return {subj + " " + p1 + " . " + other + " " + p2 + " .", subj + " " + p1 + " , and " + other + " " + p2 + " ."};
    }
  }
}

std::vector<std::string> lexicon_words() {
  std::set<std::string> words(std::begin(kFunctionWords), std::end(kFunctionWords));
  auto add_all = [&](std::string_view text) {
    for (auto w : split_whitespace(text)) words.emplace(w);
  };
  for (const auto& s : kSubjects) add_all(s.text);
  for (const auto* c : kComplements) add_all(c);
  return {words.begin(), words.end()};
}

}  // namespace

std::string to_string(SyntheticTask task) {
  switch (task) {
    case SyntheticTask::fusion: return "fusion-toy";
    case SyntheticTask::split: return "split-toy";
    case SyntheticTask::copy: return "copy";
  }
  return "?";
}

SyntheticTask parse_task(std::string_view text) {
  if (text == "fusion-toy" || text == "fusion") return SyntheticTask::fusion;
  if (text == "split-toy" || text == "split") return SyntheticTask::split;
  if (text == "copy") return SyntheticTask::copy;
  throw Error(ErrorCode::config, "unknown synthetic task " + std::string(text));
}

std::vector<TextExample> generate_task(SyntheticTask task, std::size_t count, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 31));
  std::vector<TextExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    switch (task) {
      case SyntheticTask::fusion: {
        auto f = fusion_pair(rng);
        out.push_back({std::move(f.split), std::move(f.fused)});
        break;
      }
      case SyntheticTask::split: {
        auto f = fusion_pair(rng);
        out.push_back({std::move(f.fused), std::move(f.split)});
        break;
      }
      case SyntheticTask::copy: {
        const std::size_t s = uniform_index(rng, std::size(kSubjects));
        std::string text = std::string(kSubjects[s].text) + " " + predicate(rng, s) + " .";
        out.push_back({text, text});
        break;
      }
    }
  }
  return out;
}

std::vector<std::string> generate_corpus(std::size_t count, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 37));
  std::vector<std::string> out;
  out.reserve(count);
  while (out.size() < count) {
    const double u = uniform01(rng);
    if (u < 0.5) {
      const std::size_t si = uniform_index(rng, std::size(kSubjects));
      const auto& s = kSubjects[si];
      const double v = uniform01(rng);
      std::string prefix = v < 0.2 ? "however , " : v < 0.4 ? "therefore , " : "";
      std::string subj = prefix.empty() || uniform01(rng) < 0.5 ? s.text : s.pronoun;
      out.push_back(prefix + subj + " " + predicate(rng, si) + " .");
    } else {
      out.push_back(fusion_pair(rng).fused);
    }
  }
  return out;
}

Vocabulary synthetic_vocab(std::string_view style) {
  std::vector<std::string> tokens;
  if (style == "bert") {
    tokens = {"[PAD]", "[UNK]", "[BOS]", "[EOS]", "[MASK]"};
    for (const auto& w : lexicon_words()) tokens.push_back(w);
    for (const auto& v : kVerbs) tokens.emplace_back(v.stem);
    tokens.emplace_back("##s");
    tokens.emplace_back("##es");
    return Vocabulary(std::move(tokens), true);
  }
  if (style == "gpt") {
    ReservedTokens reserved{"<pad>", "<unk>", "<s>", "</s>", "<mask>"};
    std::vector<std::string> words = lexicon_words();
    for (const auto& v : kVerbs) words.emplace_back(v.third);
    std::sort(words.begin(), words.end(), std::greater<>());
    tokens = {"<s>", "</s>", "<unk>", "<pad>", "<mask>"};
    tokens.insert(tokens.end(), words.begin(), words.end());
    return Vocabulary(std::move(tokens), false, reserved);
  }
  throw Error(ErrorCode::config, "unknown vocabulary style " + std::string(style) + " (expected bert or gpt)");
}

}  // namespace warmstart
