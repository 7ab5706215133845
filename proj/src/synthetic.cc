#include "distiltag/synthetic.h"

#include <array>
#include <set>
#include <string_view>

#include "distiltag/error.h"
#include "distiltag/rng.h"

namespace distiltag {
namespace {

constexpr std::array<std::string_view, 4> kTypes = {"PER", "LOC", "ORG", "MISC"};

constexpr std::array<std::string_view, 30> kSyllables = {
    "ka", "lo", "mi", "ra", "ten", "vor", "zu", "bel", "dan", "fi",
    "gor", "hal", "jin", "mar", "nu", "pel", "qua", "ros", "sil", "tam",
    "ul", "ven", "wyn", "xer", "yo", "bri", "cas", "dor", "eth", "sta"};

constexpr std::array<std::string_view, 7> kDays = {
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"};

// "{PER}" style slots name a type; "{X}" and "{Y}" take a random type;
// "{DAY}" and "{NUM}" are filler.
constexpr std::array<std::string_view, 14> kTypedTemplates = {
    "{PER} said on {DAY} that the deal was done .",
    "mr. {PER} met {PER} in {LOC} .",
    "{ORG} shares rose {NUM} percent on {DAY} .",
    "the {MISC} festival opened in {LOC} .",
    "{PER} joined {ORG} last year .",
    "flights to {LOC} were cancelled on {DAY} .",
    "{ORG} reported a profit of {NUM} million .",
    "she spoke {MISC} fluently .",
    "the mayor of {LOC} welcomed {PER} .",
    "analysts at {ORG} expect growth in {LOC} .",
    "coach {PER} praised the {MISC} team .",
    "{NUM} people live in {LOC} .",
    "a spokesman for {ORG} declined to comment .",
    "the {MISC} election is due in {NUM} weeks .",
};

constexpr std::array<std::string_view, 8> kNeutralTemplates = {
    "{X} was mentioned again .",
    "reports about {X} continued on {DAY} .",
    "officials discussed {X} and {Y} .",
    "{X} remains in the news .",
    "we heard about {X} on {DAY} .",
    "nobody expected {X} to appear .",
    "the story of {X} and {Y} spread quickly .",
    "{X} , {Y} and more were listed .",
};

std::string capitalize(std::string word) {
  if (!word.empty() && word[0] >= 'a' && word[0] <= 'z') word[0] = static_cast<char>(word[0] - 32);
  return word;
}

std::string make_word(Rng& rng) {
  std::string w;
  const auto n = 2 + rng.below(2);
  for (std::uint64_t i = 0; i < n; ++i) w += kSyllables[rng.below(kSyllables.size())];
  return capitalize(std::move(w));
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto j = text.find(' ', i);
    const auto end = j == std::string_view::npos ? text.size() : j;
    if (end > i) out.emplace_back(text.substr(i, end - i));
    i = end + 1;
  }
  return out;
}

}  // namespace

SyntheticLexicon make_lexicon(const SyntheticConfig& config) {
  if (config.names_per_type == 0) fail(ErrorKind::kConfig, "names_per_type must be positive");
  Rng rng(config.lexicon_seed);
  std::set<std::string> used;
  SyntheticLexicon lex;
  for (const auto type : kTypes) {
    auto& names = lex.names[std::string(type)];
    while (names.size() < config.names_per_type) {
      const std::size_t tokens = rng.bernoulli(config.two_token_fraction) ? 2 : 1;
      std::vector<std::string> name;
      for (std::size_t i = 0; i < tokens; ++i) name.push_back(make_word(rng));
      std::string key;
      for (const auto& t : name) key += t + " ";
      if (!used.insert(key).second) continue;
      names.push_back(std::move(name));
    }
  }
  return lex;
}

ParsedCorpus generate_corpus(const SyntheticConfig& config) {
  if (!(config.neutral_fraction >= 0 && config.neutral_fraction <= 1)) {
    fail(ErrorKind::kConfig, "neutral_fraction must lie in [0, 1]");
  }
  const auto lex = make_lexicon(config);
  std::vector<std::string> labels;
  for (const auto type : kTypes) {
    labels.push_back("B-" + std::string(type));
    labels.push_back("I-" + std::string(type));
  }
  ParsedCorpus corpus{{}, TagSet(labels)};
  const auto& tagset = corpus.tagset;

  Rng rng(config.seed);
  corpus.sentences.reserve(config.sentences);
  for (std::size_t n = 0; n < config.sentences; ++n) {
    const bool neutral = rng.bernoulli(config.neutral_fraction);
    const auto tmpl = neutral ? kNeutralTemplates[rng.below(kNeutralTemplates.size())]
                              : kTypedTemplates[rng.below(kTypedTemplates.size())];
    Sentence s;
    s.id = config.first_id + n;
    TagSequence tags;
    for (const auto& piece : split_words(tmpl)) {
      if (piece.size() < 3 || piece.front() != '{') {
        s.tokens.push_back(piece);
        tags.push_back(0);
        continue;
      }
      const auto slot = piece.substr(1, piece.size() - 2);
      if (slot == "DAY") {
        s.tokens.emplace_back(kDays[rng.below(kDays.size())]);
        tags.push_back(0);
        continue;
      }
      if (slot == "NUM") {
        s.tokens.push_back(std::to_string(1 + rng.below(99)));
        tags.push_back(0);
        continue;
      }
      const std::string type =
          (slot == "X" || slot == "Y") ? std::string(kTypes[rng.below(kTypes.size())]) : slot;
      const auto& pool = lex.names.at(type);
      const auto& name = pool[rng.below(pool.size())];
      for (std::size_t i = 0; i < name.size(); ++i) {
        s.tokens.push_back(name[i]);
        tags.push_back(tagset.id((i == 0 ? "B-" : "I-") + type));
      }
    }
    s.gold_tags = std::move(tags);
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace distiltag
