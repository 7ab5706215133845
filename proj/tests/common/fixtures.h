#pragma once

// Small shared setups for tests: a tiny synthetic corpus with a vocab and a
// hand-built teacher store.

#include <cstddef>
#include <string>
#include <vector>

#include "distiltag/data.h"
#include "distiltag/distill.h"
#include "distiltag/rng.h"
#include "distiltag/synthetic.h"
#include "distiltag/tagger.h"
#include "distiltag/teacher_logits.h"

namespace distiltag::testing {

struct TinyTask {
  ParsedCorpus corpus;
  Vocab vocab;
  TaggerConfig tagger;
};

inline TaggerConfig tiny_tagger(Classifier classifier = Classifier::kSoftmax) {
  TaggerConfig c;
  c.word_dim = 8;
  c.char_dim = 4;
  c.char_filters = 4;
  c.char_window = 3;
  c.lstm_hidden = 8;
  c.classifier = classifier;
  c.dropout_rate = 0.0;
  return c;
}

inline TinyTask tiny_task(std::size_t sentences, std::uint64_t seed,
                          Classifier classifier = Classifier::kSoftmax) {
  TinyTask task;
  SyntheticConfig sc;
  sc.sentences = sentences;
  sc.seed = seed;
  sc.names_per_type = 20;
  task.corpus = generate_corpus(sc);
  task.vocab = build_vocab(task.corpus.sentences);
  task.tagger = tiny_tagger(classifier);
  task.tagger.word_vocab_size = task.vocab.word_count();
  task.tagger.char_vocab_size = task.vocab.char_count();
  task.tagger.num_tags = task.corpus.tagset.size();
  return task;
}

// Random teacher rows for every sentence, in `tagset` order.
inline TeacherLogitsStore random_teacher(std::span<const Sentence> sentences,
                                         const TagSet& tagset, std::uint64_t seed,
                                         double scale = 3.0) {
  TeacherLogitsStore store(tagset.labels(), "random fixture");
  Rng rng(seed);
  for (const auto& s : sentences) {
    TeacherLogits t{s.id, s.size(), tagset.size(), {}};
    t.values.resize(t.rows * t.cols);
    for (auto& v : t.values) v = static_cast<float>(rng.uniform(-scale, scale));
    store.add(std::move(t));
  }
  return store;
}

inline std::vector<const Sentence*> pointers(std::span<const Sentence> sentences) {
  std::vector<const Sentence*> out;
  for (const auto& s : sentences) out.push_back(&s);
  return out;
}

}  // namespace distiltag::testing
