#include "distiltag/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "distiltag/error.h"
#include "distiltag/rng.h"
#include "json.hpp"

namespace distiltag {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

// "O", "B-X" or "I-X" with a non-empty type.
bool valid_tag(std::string_view tag) {
  if (tag == "O") return true;
  return tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-';
}

std::string_view tag_type(std::string_view tag) {
  return tag.size() > 2 ? tag.substr(2) : std::string_view{};
}

}  // namespace

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0 && lead < 0xF8) {
      len = 4;
    } else if (lead >= 0xE0) {
      len = lead < 0xF0 ? 3 : 1;
    } else if (lead >= 0xC0) {
      len = 2;
    }
    if (i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::string ascii_lower(std::string_view text) {
  std::string out(text);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

// ---------------------------------------------------------------- TagSet

TagSet::TagSet() : TagSet(std::vector<std::string>{}) {}

TagSet::TagSet(const std::vector<std::string>& labels) {
  std::set<std::string> rest;
  for (const auto& label : labels) {
    if (!valid_tag(label)) fail(ErrorKind::kParse, "invalid tag '" + label + "'");
    if (label == "O") continue;
    rest.insert(label);
    // Every I-X needs its B-X.
    if (label[0] == 'I') rest.insert("B-" + std::string(tag_type(label)));
  }
  labels_.push_back("O");
  labels_.insert(labels_.end(), rest.begin(), rest.end());
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    index_.emplace(labels_[i], static_cast<TagId>(i));
  }
}

const std::string& TagSet::label(TagId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= labels_.size()) {
    fail(ErrorKind::kIndex, "tag id " + std::to_string(id) + " outside tagset of size " +
                                std::to_string(labels_.size()));
  }
  return labels_[static_cast<std::size_t>(id)];
}

std::optional<TagId> TagSet::find(std::string_view label) const {
  const auto it = index_.find(std::string(label));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TagId TagSet::id(std::string_view label) const {
  const auto found = find(label);
  if (!found) fail(ErrorKind::kLookup, "unknown tag '" + std::string(label) + "'");
  return *found;
}

std::set<std::string> TagSet::entity_types() const {
  std::set<std::string> types;
  for (const auto& label : labels_) {
    if (label != "O") types.emplace(tag_type(label));
  }
  return types;
}

// ---------------------------------------------------------------- Vocab

Vocab::Vocab()
    : Vocab({std::string(kPadToken), std::string(kUnkToken)},
            {std::string(kPadToken), std::string(kUnkToken)}) {}

Vocab::Vocab(std::vector<std::string> words, std::vector<std::string> chars)
    : words_(std::move(words)), chars_(std::move(chars)) {
  if (words_.size() < 2 || words_[0] != kPadToken || words_[1] != kUnkToken ||
      chars_.size() < 2 || chars_[0] != kPadToken || chars_[1] != kUnkToken) {
    fail(ErrorKind::kFormat, "vocab lists must start with <pad>, <unk>");
  }
  for (std::size_t i = 2; i < words_.size(); ++i) {
    if (!word_index_.emplace(words_[i], static_cast<int>(i)).second) {
      fail(ErrorKind::kFormat, "duplicate vocab word '" + words_[i] + "'");
    }
  }
  for (std::size_t i = 2; i < chars_.size(); ++i) {
    if (!char_index_.emplace(chars_[i], static_cast<int>(i)).second) {
      fail(ErrorKind::kFormat, "duplicate vocab char '" + chars_[i] + "'");
    }
  }
}

int Vocab::word_id(std::string_view word) const {
  auto it = word_index_.find(std::string(word));
  if (it != word_index_.end()) return it->second;
  it = word_index_.find(ascii_lower(word));
  if (it != word_index_.end()) return it->second;
  return kUnk;
}

bool Vocab::has_word(std::string_view word) const {
  return word_index_.count(std::string(word)) > 0;
}

int Vocab::char_id(std::string_view utf8_char) const {
  const auto it = char_index_.find(std::string(utf8_char));
  return it == char_index_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::char_ids(std::string_view word) const {
  std::vector<int> ids;
  for (const auto& c : utf8_chars(word)) ids.push_back(char_id(c));
  return ids;
}

// ---------------------------------------------------------------- CoNLL

std::vector<std::string> convert_iob1_to_bio2(const std::vector<std::string>& tags) {
  std::vector<std::string> out(tags);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].size() < 2 || out[i][0] != 'I') continue;
    const auto type = tag_type(out[i]);
    const bool continues =
        i > 0 && out[i - 1] != "O" && tag_type(out[i - 1]) == type;
    if (!continues) out[i][0] = 'B';
  }
  return out;
}

ParsedCorpus parse_conll(std::istream& in, int column) {
  struct RawSentence {
    std::vector<std::string> tokens;
    std::vector<std::string> tags;
    bool has_tags = false;
  };
  std::vector<RawSentence> raw;
  RawSentence block;
  bool skip_block = false;
  int block_columns = -1;  // 1 = unlabeled block, 2 = tagged block

  auto flush = [&]() {
    if (!block.tokens.empty() && !skip_block) {
      block.has_tags = block_columns == 2;
      raw.push_back(std::move(block));
    }
    block = RawSentence{};
    skip_block = false;
    block_columns = -1;
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto cols = split_ws(line);
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols[0] == "-DOCSTART-") skip_block = true;
    if (skip_block) continue;

    std::string_view tag;
    int kind = 2;
    if (column == kTokensOnly) {
      kind = 1;
    } else if (column == kLastColumn) {
      if (cols.size() == 1) {
        kind = 1;
      } else {
        tag = cols.back();
      }
    } else {
      if (column < 0 || cols.size() < static_cast<std::size_t>(column) + 1) {
        fail(ErrorKind::kParse, "line " + std::to_string(line_no) + ": expected at least " +
                                    std::to_string(column + 1) + " columns, found " +
                                    std::to_string(cols.size()));
      }
      tag = cols[static_cast<std::size_t>(column)];
    }
    if (block_columns != -1 && block_columns != kind) {
      fail(ErrorKind::kParse,
           "line " + std::to_string(line_no) + ": sentence mixes tagged and untagged lines");
    }
    block_columns = kind;
    if (kind == 2 && !valid_tag(tag)) {
      fail(ErrorKind::kParse, "line " + std::to_string(line_no) + ": invalid tag '" +
                                  std::string(tag) + "'");
    }
    block.tokens.emplace_back(cols[0]);
    if (kind == 2) block.tags.emplace_back(tag);
  }
  flush();

  ParsedCorpus corpus;
  std::vector<std::string> all_labels;
  for (auto& s : raw) {
    if (s.has_tags) {
      s.tags = convert_iob1_to_bio2(s.tags);
      all_labels.insert(all_labels.end(), s.tags.begin(), s.tags.end());
    }
  }
  corpus.tagset = TagSet(all_labels);
  corpus.sentences.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    Sentence s;
    s.id = i;
    s.tokens = std::move(raw[i].tokens);
    if (raw[i].has_tags) {
      TagSequence ids;
      ids.reserve(raw[i].tags.size());
      for (const auto& t : raw[i].tags) ids.push_back(corpus.tagset.id(t));
      s.gold_tags = std::move(ids);
    }
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

ParsedCorpus read_conll_file(const std::string& path, int column) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path + "'");
  return parse_conll(in, column);
}

void write_conll(std::ostream& out, std::span<const Sentence> sentences,
                 const TagSet& tagset) {
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      out << s.tokens[i];
      if (s.gold_tags) out << ' ' << tagset.label((*s.gold_tags)[i]);
      out << '\n';
    }
    out << '\n';
  }
}

void remap_tags(std::span<Sentence> sentences, const TagSet& from, const TagSet& to) {
  std::vector<TagId> table(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    const auto& label = from.labels()[i];
    const auto found = to.find(label);
    if (!found) fail(ErrorKind::kAlignment, "tag '" + label + "' missing from target tagset");
    table[i] = *found;
  }
  for (auto& s : sentences) {
    if (!s.gold_tags) continue;
    for (auto& t : *s.gold_tags) t = table.at(static_cast<std::size_t>(t));
  }
}

TagSet unify_tagsets(std::span<ParsedCorpus* const> corpora) {
  std::vector<std::string> labels;
  for (const auto* c : corpora) {
    labels.insert(labels.end(), c->tagset.labels().begin(), c->tagset.labels().end());
  }
  TagSet unified(labels);
  for (auto* c : corpora) {
    remap_tags(c->sentences, c->tagset, unified);
    c->tagset = unified;
  }
  return unified;
}

// ---------------------------------------------------------------- splits

std::vector<SplitSpec> sample_splits(std::span<const Sentence> train,
                                     std::span<const std::size_t> sizes,
                                     std::size_t seeds_per_size,
                                     std::uint64_t master_seed) {
  if (seeds_per_size < 1) fail(ErrorKind::kRange, "seeds_per_size must be >= 1");
  for (const auto size : sizes) {
    if (size > train.size()) {
      fail(ErrorKind::kRange, "split size " + std::to_string(size) + " exceeds corpus of " +
                                  std::to_string(train.size()) + " sentences");
    }
  }
  std::vector<SplitSpec> splits;
  splits.reserve(sizes.size() * seeds_per_size);
  std::vector<std::size_t> pool(train.size());
  for (const auto size : sizes) {
    for (std::size_t k = 0; k < seeds_per_size; ++k) {
      SplitSpec spec;
      spec.size = size;
      spec.seed_index = k;
      spec.seed = derive_seed(master_seed, size, k);
      for (std::size_t i = 0; i < train.size(); ++i) pool[i] = train[i].id;
      // Partial Fisher-Yates: the first `size` slots are the sample.
      Rng rng(spec.seed);
      for (std::size_t i = 0; i < size; ++i) {
        const auto j = i + rng.below(pool.size() - i);
        std::swap(pool[i], pool[j]);
      }
      spec.labeled_ids.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(size));
      spec.unlabeled_ids.assign(pool.begin() + static_cast<std::ptrdiff_t>(size), pool.end());
      std::sort(spec.labeled_ids.begin(), spec.labeled_ids.end());
      std::sort(spec.unlabeled_ids.begin(), spec.unlabeled_ids.end());
      splits.push_back(std::move(spec));
    }
  }
  return splits;
}

void write_split_manifest(std::ostream& out, std::span<const SplitSpec> splits) {
  for (const auto& s : splits) {
    nlohmann::ordered_json record;
    record["size"] = s.size;
    record["seed_index"] = s.seed_index;
    record["seed"] = s.seed;
    record["labeled_ids"] = s.labeled_ids;
    out << record.dump() << '\n';
  }
}

std::vector<SplitSpec> read_split_manifest(std::istream& in, std::size_t corpus_size) {
  std::vector<SplitSpec> splits;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_ws(line).empty()) continue;
    SplitSpec spec;
    try {
      const auto record = nlohmann::json::parse(line);
      spec.size = record.at("size").get<std::size_t>();
      spec.seed_index = record.at("seed_index").get<std::size_t>();
      spec.seed = record.at("seed").get<std::uint64_t>();
      spec.labeled_ids = record.at("labeled_ids").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    std::sort(spec.labeled_ids.begin(), spec.labeled_ids.end());
    std::vector<bool> taken(corpus_size, false);
    for (const auto id : spec.labeled_ids) {
      if (id >= corpus_size) {
        fail(ErrorKind::kRange, "manifest line " + std::to_string(line_no) + ": id " +
                                    std::to_string(id) + " outside corpus");
      }
      taken[id] = true;
    }
    for (std::size_t i = 0; i < corpus_size; ++i) {
      if (!taken[i]) spec.unlabeled_ids.push_back(i);
    }
    splits.push_back(std::move(spec));
  }
  return splits;
}

std::vector<Sentence> select_sentences(std::span<const Sentence> corpus,
                                       std::span<const std::size_t> ids, bool keep_tags) {
  std::unordered_map<std::size_t, const Sentence*> by_id;
  for (const auto& s : corpus) by_id.emplace(s.id, &s);
  std::vector<Sentence> out;
  out.reserve(ids.size());
  for (const auto id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) fail(ErrorKind::kRange, "sentence id " + std::to_string(id) + " not in corpus");
    Sentence s = *it->second;
    if (!keep_tags) s.gold_tags.reset();
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- vocab

Vocab build_vocab(std::span<const Sentence> sentences,
                  const std::set<std::string>* pretrained_words) {
  std::set<std::string> words;
  std::set<std::string> chars;
  for (const auto& s : sentences) {
    for (const auto& tok : s.tokens) {
      words.insert(tok);
      for (auto& c : utf8_chars(tok)) chars.insert(std::move(c));
    }
  }
  if (pretrained_words) words.insert(pretrained_words->begin(), pretrained_words->end());
  for (const auto special : {Vocab::kPadToken, Vocab::kUnkToken}) {
    words.erase(std::string(special));
    chars.erase(std::string(special));
  }
  std::vector<std::string> word_list{std::string(Vocab::kPadToken), std::string(Vocab::kUnkToken)};
  std::vector<std::string> char_list = word_list;
  word_list.insert(word_list.end(), words.begin(), words.end());
  char_list.insert(char_list.end(), chars.begin(), chars.end());
  return Vocab(std::move(word_list), std::move(char_list));
}

std::set<std::string> read_embedding_words(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path + "'");
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    const auto cols = split_ws(line);
    if (cols.size() >= 2) words.emplace(cols[0]);
  }
  return words;
}

EmbeddingTable load_embeddings(std::istream& in, const Vocab& vocab, std::size_t dim,
                               std::uint64_t seed) {
  if (dim == 0) fail(ErrorKind::kParameter, "embedding dim must be positive");
  EmbeddingTable table;
  table.dim = dim;
  table.rows = vocab.word_count();
  table.vectors.assign(table.rows * dim, 0.0f);

  std::unordered_map<std::string, std::vector<int>> by_lower;
  for (std::size_t i = 2; i < vocab.word_count(); ++i) {
    by_lower[ascii_lower(vocab.words()[i])].push_back(static_cast<int>(i));
  }
  // 2 = exact hit, 1 = lowercase fallback hit, 0 = none.
  std::vector<int> source(table.rows, 0);

  std::string line;
  std::vector<float> values(dim);
  while (std::getline(in, line)) {
    const auto cols = split_ws(line);
    if (cols.empty()) continue;
    if (cols.size() != dim + 1) {
      ++table.skipped_lines;
      continue;
    }
    bool ok = true;
    for (std::size_t k = 0; k < dim && ok; ++k) {
      const auto tok = cols[k + 1];
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), values[k]);
      ok = res.ec == std::errc{} && res.ptr == tok.data() + tok.size() && std::isfinite(values[k]);
    }
    if (!ok) {
      ++table.skipped_lines;
      continue;
    }
    const std::string word(cols[0]);
    auto copy_into = [&](int row, int level) {
      if (source[static_cast<std::size_t>(row)] >= level) return;
      source[static_cast<std::size_t>(row)] = level;
      std::copy(values.begin(), values.end(),
                table.vectors.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(row) * dim));
    };
    if (vocab.has_word(word)) copy_into(vocab.word_id(word), 2);
    if (word == ascii_lower(word)) {
      const auto it = by_lower.find(word);
      if (it != by_lower.end()) {
        for (const int row : it->second) copy_into(row, 1);
      }
    }
  }
  if (in.bad()) fail(ErrorKind::kIo, "read error while loading embeddings");

  Rng rng(seed);
  const double bound = std::sqrt(3.0 / static_cast<double>(dim));
  for (std::size_t r = 0; r < table.rows; ++r) {
    if (source[r] > 0) {
      ++table.hit_count;
      continue;
    }
    if (r == static_cast<std::size_t>(Vocab::kPad)) continue;
    for (std::size_t k = 0; k < dim; ++k) {
      table.vectors[r * dim + k] = static_cast<float>(rng.uniform(-bound, bound));
    }
  }
  return table;
}

EmbeddingTable load_embeddings(const std::string& path, const Vocab& vocab, std::size_t dim,
                               std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open embeddings file '" + path + "'");
  return load_embeddings(in, vocab, dim, seed);
}

}  // namespace distiltag
