#include <algorithm>
#include <cmath>

#include "distiltag/error.h"
#include "distiltag/tagger.h"
#include "doctest.h"
#include "fixtures.h"

using namespace distiltag;
using distiltag::testing::pointers;
using distiltag::testing::tiny_task;

TEST_CASE("parameter count: closed form equals the tensors") {
  for (const auto classifier : {Classifier::kSoftmax, Classifier::kCrf}) {
    auto task = tiny_task(20, 1, classifier);
    const auto params = TaggerParams<float>::init(task.tagger, 1);
    std::size_t sum = 0;
    for (const auto& [name, t] : params.named()) sum += t.size();
    CHECK(sum == count_params(task.tagger));
    CHECK(params.count() == sum);
  }
  TaggerConfig c;
  c.word_vocab_size = 25000;
  c.char_vocab_size = 100;
  c.num_tags = 9;
  const auto n = count_params(c);
  CHECK(n >= 2800000);
  CHECK(n <= 3600000);
  c.classifier = Classifier::kCrf;
  CHECK(count_params(c) == n + 11 * 11);
}

TEST_CASE("initialization is seeded and keeps PAD rows at zero") {
  auto task = tiny_task(20, 1);
  const auto a = TaggerParams<float>::init(task.tagger, 7);
  const auto b = TaggerParams<float>::init(task.tagger, 7);
  const auto c = TaggerParams<float>::init(task.tagger, 8);
  const auto na = a.named(), nb = b.named(), nc = c.named();
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(std::equal(na[i].second.values().begin(), na[i].second.values().end(),
                     nb[i].second.values().begin()));
    any_diff |= !std::equal(na[i].second.values().begin(), na[i].second.values().end(),
                            nc[i].second.values().begin());
  }
  CHECK(any_diff);
  for (std::size_t k = 0; k < task.tagger.word_dim; ++k) CHECK(a.word_embedding.at(0, k) == 0.0f);
  for (std::size_t k = 0; k < task.tagger.char_dim; ++k) CHECK(a.char_embedding.at(0, k) == 0.0f);
  // Forget-gate bias starts at one.
  const std::size_t h = task.tagger.lstm_hidden;
  CHECK(a.lstm_forward.bias.values()[h] == 1.0f);
  CHECK(a.lstm_forward.bias.values()[0] == 0.0f);
  const float bound = std::sqrt(3.0f / static_cast<float>(task.tagger.word_dim));
  for (const float v : a.word_embedding.values()) CHECK(std::abs(v) <= bound);
  // clone is deep
  auto copy = a.clone();
  copy.emission_bias.values()[0] += 1.0f;
  CHECK(copy.emission_bias.values()[0] != a.emission_bias.values()[0]);
}

TEST_CASE("encode_batch layout is time-major with PAD fill") {
  Vocab vocab({"<pad>", "<unk>", "ab", "c"}, {"<pad>", "<unk>", "a", "b", "c"});
  Sentence s1, s2;
  s1.tokens = {"ab", "c"};
  s2.tokens = {"c"};
  const std::vector<const Sentence*> ptrs{&s1, &s2};
  const auto e = encode_batch(vocab, ptrs, 3);
  CHECK(e.batch == 2);
  CHECK(e.steps == 2);
  CHECK(e.char_steps == 4);
  CHECK(e.lengths == std::vector<std::size_t>{2, 1});
  CHECK(e.word_ids[0] == vocab.word_id("ab"));   // t0 b0
  CHECK(e.word_ids[1] == vocab.word_id("c"));    // t0 b1
  CHECK(e.word_ids[3] == Vocab::kPad);           // t1 b1
  CHECK(e.word_char_counts == std::vector<std::size_t>{2, 1, 1, 0});
  // "ab" sits one slot in from the left edge
  CHECK(e.char_ids[0] == Vocab::kPad);
  CHECK(e.char_ids[1] == vocab.char_ids("a")[0]);
  CHECK(e.char_ids[2] == vocab.char_ids("b")[0]);
  Sentence empty;
  const std::vector<const Sentence*> bad{&empty};
  CHECK_THROWS_AS(encode_batch(vocab, bad, 3), Error);
}

TEST_CASE("emissions do not depend on batch companions") {
  for (const auto classifier : {Classifier::kSoftmax, Classifier::kCrf}) {
    auto task = tiny_task(12, 3, classifier);
    const Model<double> model{task.tagger, TaggerParams<double>::init(task.tagger, 2), task.vocab,
                              task.corpus.tagset};
    const auto& all = task.corpus.sentences;
    const auto batched = emission_rows(model, std::span<const Sentence>(all), 12);
    for (std::size_t i = 0; i < all.size(); ++i) {
      const auto alone = emission_rows(model, std::span<const Sentence>(all).subspan(i, 1), 1);
      REQUIRE(alone[0].size() == batched[i].size());
      for (std::size_t j = 0; j < alone[0].size(); ++j) {
        CHECK(alone[0][j] == doctest::Approx(batched[i][j]).epsilon(1e-10));
      }
    }
    CHECK(predict(model, std::span<const Sentence>(all), 5) ==
          predict(model, std::span<const Sentence>(all), 1));
  }
}

TEST_CASE("dropout only acts in training mode") {
  auto task = tiny_task(6, 4);
  task.tagger.dropout_rate = 0.5;
  const auto params = TaggerParams<double>::init(task.tagger, 3);
  const auto ptrs = pointers(task.corpus.sentences);
  const auto enc = encode_batch(task.vocab, ptrs, task.tagger.char_window);
  Graph<double> g(false);
  Rng r1(1), r2(2);
  const auto e1 = forward(g, params, task.tagger, enc, false, r1);
  const auto e2 = forward(g, params, task.tagger, enc, false, r2);
  CHECK(std::equal(e1.logits.values().begin(), e1.logits.values().end(), e2.logits.values().begin()));
  const auto t1 = forward(g, params, task.tagger, enc, true, r1);
  CHECK_FALSE(std::equal(e1.logits.values().begin(), e1.logits.values().end(),
                         t1.logits.values().begin()));
  CHECK(e1.logits.shape() == Shape{6, e1.steps, task.tagger.num_tags});
}

TEST_CASE("decode ties and heads") {
  TaggerConfig c;
  c.num_tags = 3;
  TaggerParams<double> p;
  const std::vector<double> em{1, 1, 0, 0, 2, 2};
  CHECK(decode<double>(c, p, em, 2) == TagSequence{0, 1});
  c.classifier = Classifier::kCrf;
  p.transitions = Tensor<double>({5, 5});
  CHECK(decode<double>(c, p, em, 2) == TagSequence{0, 1});
  // A prohibitive 0 -> 1 transition moves the CRF path but not the softmax one.
  p.transitions.at(0, 1) = -100;
  CHECK(decode<double>(c, p, em, 2) == TagSequence{1, 1});
  CHECK(parse_classifier("crf") == Classifier::kCrf);
  CHECK(classifier_name(Classifier::kSoftmax) == "softmax");
  CHECK_THROWS_AS(parse_classifier("svm"), Error);
}

TEST_CASE("config validation") {
  TaggerConfig c;
  CHECK_THROWS_AS(c.validate(), Error);  // vocab sizes unset
  c.word_vocab_size = 10;
  c.char_vocab_size = 10;
  c.num_tags = 3;
  CHECK_NOTHROW(c.validate());
  c.char_window = 2;
  CHECK_THROWS_AS(c.validate(), Error);
}
