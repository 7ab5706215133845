#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "distiltag/data.h"

namespace distiltag {

// Knobs for the pattern-entity corpus. Entity names are built from one shared
// syllable pool, so spelling says little about the type; part of the
// sentences use type-neutral contexts, so the type of a name there can only be
// known by having seen that name elsewhere. This is the regime where a
// teacher that saw many names helps a student that saw few.
struct SyntheticConfig {
  std::size_t sentences = 1000;
  std::uint64_t seed = 1;           // sentence stream
  std::uint64_t lexicon_seed = 17;  // name inventory, shared across splits
  std::size_t names_per_type = 200;
  double neutral_fraction = 0.5;    // share of type-neutral templates
  double two_token_fraction = 0.3;  // names made of two tokens
  std::size_t first_id = 0;         // id of the first generated sentence
};

struct SyntheticLexicon {
  // type -> list of names, each a list of tokens
  std::map<std::string, std::vector<std::vector<std::string>>> names;
};

SyntheticLexicon make_lexicon(const SyntheticConfig& config);

// Tagged sentences with BIO2 tags over PER, LOC, ORG and MISC.
ParsedCorpus generate_corpus(const SyntheticConfig& config);

}  // namespace distiltag
