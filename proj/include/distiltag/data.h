#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace distiltag {

using TagId = int;
using TagSequence = std::vector<TagId>;

struct Sentence {
  std::size_t id = 0;
  std::vector<std::string> tokens;
  std::optional<TagSequence> gold_tags;

  std::size_t size() const { return tokens.size(); }
  bool labeled() const { return gold_tags.has_value(); }
};

// BIO2 label inventory. "O" is always index 0, the remaining labels follow in
// sorted order so ids are stable across runs and machines.
class TagSet {
 public:
  TagSet();
  // Validates and orders the labels. Duplicates are ignored.
  explicit TagSet(const std::vector<std::string>& labels);

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(TagId id) const;
  std::optional<TagId> find(std::string_view label) const;
  // Throws kLookup for unknown labels.
  TagId id(std::string_view label) const;
  std::set<std::string> entity_types() const;

  bool operator==(const TagSet& other) const { return labels_ == other.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, TagId> index_;
};

// Lookup tables for words and characters. Characters are UTF-8 code points
// stored as their encoded byte strings.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocab();
  // Rebuilds from explicit lists; entries 0 and 1 must be the specials.
  Vocab(std::vector<std::string> words, std::vector<std::string> chars);

  std::size_t word_count() const { return words_.size(); }
  std::size_t char_count() const { return chars_.size(); }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& chars() const { return chars_; }

  // Exact match, then lowercase match, then UNK.
  int word_id(std::string_view word) const;
  int char_id(std::string_view utf8_char) const;
  bool has_word(std::string_view word) const;
  std::vector<int> char_ids(std::string_view word) const;

  bool operator==(const Vocab& other) const {
    return words_ == other.words_ && chars_ == other.chars_;
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::string> chars_;
  std::unordered_map<std::string, int> word_index_;
  std::unordered_map<std::string, int> char_index_;
};

struct SplitSpec {
  std::size_t size = 0;
  std::size_t seed_index = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> labeled_ids;    // sorted
  std::vector<std::size_t> unlabeled_ids;  // sorted
};

struct EmbeddingTable {
  std::size_t dim = 0;
  std::size_t rows = 0;
  std::vector<float> vectors;  // row-major [rows, dim]
  std::size_t hit_count = 0;
  std::size_t skipped_lines = 0;

  std::span<const float> row(std::size_t i) const {
    return {vectors.data() + i * dim, dim};
  }
};

struct ParsedCorpus {
  std::vector<Sentence> sentences;
  TagSet tagset;
};

// Column index meaning "last column of each line".
inline constexpr int kLastColumn = -1;
// Column index meaning "read tokens only, ignore any other column".
inline constexpr int kTokensOnly = -2;

// Splits a UTF-8 string into code points. Invalid bytes become single-byte
// pieces so the result always concatenates back to the input.
std::vector<std::string> utf8_chars(std::string_view text);
std::string ascii_lower(std::string_view text);

std::vector<std::string> convert_iob1_to_bio2(const std::vector<std::string>& tags);

ParsedCorpus parse_conll(std::istream& in, int column = kLastColumn);
ParsedCorpus read_conll_file(const std::string& path, int column = kLastColumn);

// Writes "token tag" lines (or bare tokens when unlabeled) with blank-line
// separators. Re-parsing the output with the last column yields the same
// sentences.
void write_conll(std::ostream& out, std::span<const Sentence> sentences,
                 const TagSet& tagset);

// Union of the tagsets; every sentence's gold ids are rewritten against it.
TagSet unify_tagsets(std::span<ParsedCorpus* const> corpora);
// Rewrites gold ids from one tagset to another. Labels missing from `to`
// raise kAlignment.
void remap_tags(std::span<Sentence> sentences, const TagSet& from, const TagSet& to);

std::vector<SplitSpec> sample_splits(std::span<const Sentence> train,
                                     std::span<const std::size_t> sizes,
                                     std::size_t seeds_per_size,
                                     std::uint64_t master_seed);

void write_split_manifest(std::ostream& out, std::span<const SplitSpec> splits);
// Reads manifest records; `corpus_size` rebuilds the unlabeled complement.
std::vector<SplitSpec> read_split_manifest(std::istream& in, std::size_t corpus_size);

Vocab build_vocab(std::span<const Sentence> sentences,
                  const std::set<std::string>* pretrained_words = nullptr);

// Reads the word column of a pretrained-vector file.
std::set<std::string> read_embedding_words(const std::string& path);

EmbeddingTable load_embeddings(const std::string& path, const Vocab& vocab,
                               std::size_t dim, std::uint64_t seed);
EmbeddingTable load_embeddings(std::istream& in, const Vocab& vocab,
                               std::size_t dim, std::uint64_t seed);

// Selects sentences by id, optionally dropping gold tags.
std::vector<Sentence> select_sentences(std::span<const Sentence> corpus,
                                       std::span<const std::size_t> ids,
                                       bool keep_tags);

}  // namespace distiltag
