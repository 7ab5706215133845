#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "distiltag/checkpoint.h"
#include "distiltag/data.h"
#include "distiltag/distill.h"
#include "distiltag/error.h"
#include "distiltag/teacher_logits.h"
#include "doctest.h"
#include "fixtures.h"

using namespace distiltag;
using distiltag::testing::tiny_task;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::kUsage;
}

std::string data_path(const std::string& name) { return std::string(DISTILTAG_TEST_DATA) + "/" + name; }

Model<float> small_model(Classifier classifier) {
  auto task = tiny_task(15, 2, classifier);
  auto params = TaggerParams<float>::init(task.tagger, 9);
  if (params.transitions.defined()) {
    Rng rng(3);
    for (auto& v : params.transitions.values()) v = static_cast<float>(rng.uniform(-1, 1));
  }
  return {task.tagger, params, task.vocab, task.corpus.tagset};
}

std::string serialize(const Model<float>& m, const nlohmann::json& provenance = nlohmann::json::object()) {
  std::ostringstream out;
  write_checkpoint(out, m, provenance);
  return out.str();
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-identical") {
  for (const auto classifier : {Classifier::kSoftmax, Classifier::kCrf}) {
    const auto model = small_model(classifier);
    const auto bytes = serialize(model, {{"command", "test"}});
    std::istringstream in(bytes);
    const auto back = read_checkpoint(in);
    CHECK(back.config == model.config);
    CHECK(back.vocab.words() == model.vocab.words());
    CHECK(back.tagset.labels() == model.tagset.labels());
    const auto a = model.params.named(), b = back.params.named();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(a[i].second.shape() == b[i].second.shape());
      CHECK(std::memcmp(a[i].second.data(), b[i].second.data(), a[i].second.size() * sizeof(float)) == 0);
    }
    // Writing the loaded model reproduces the same bytes.
    CHECK(serialize(back, {{"command", "test"}}) == bytes);
    const auto& sentences = distiltag::testing::tiny_task(15, 2).corpus.sentences;
    CHECK(predict(back, std::span<const Sentence>(sentences)) ==
          predict(model, std::span<const Sentence>(sentences)));
  }
}

TEST_CASE("checkpoint file round trip") {
  const auto model = small_model(Classifier::kCrf);
  const auto path = (std::filesystem::temp_directory_path() / "io_test.ckpt").string();
  save_checkpoint(model, path);
  const auto back = load_checkpoint(path);
  CHECK(serialize(back) == serialize(model));
  std::filesystem::remove(path);
  CHECK(kind_of([&] { load_checkpoint(path); }) == ErrorKind::kIo);
}

TEST_CASE("damaged checkpoints are rejected") {
  const auto bytes = serialize(small_model(Classifier::kSoftmax));
  auto read = [](const std::string& b) {
    std::istringstream in(b);
    read_checkpoint(in);
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of([&] { read(bad_magic); }) == ErrorKind::kFormat);
  CHECK(kind_of([&] { read(bytes.substr(0, bytes.size() - 5)); }) == ErrorKind::kCorruption);
  CHECK(kind_of([&] { read(bytes.substr(0, 6)); }) == ErrorKind::kCorruption);
  CHECK(kind_of([&] { read(bytes.substr(0, 40)); }) == ErrorKind::kCorruption);
  CHECK(kind_of([&] { read(""); }) == ErrorKind::kFormat);
}

TEST_CASE("teacher logits fixture parses and covers its corpus") {
  const auto corpus = read_conll_file(data_path("teacher_fixture.conll"));
  const auto store = TeacherLogitsStore::load(data_path("teacher_fixture.jsonl"));
  CHECK(store.size() == 3);
  CHECK(store.num_tags() == 5);
  CHECK(store.teacher() == "fixture teacher");
  CHECK_NOTHROW(store.check_alignment(corpus.tagset));
  CHECK_NOTHROW(store.check_coverage(corpus.sentences));
  CHECK(store.at(0).row(1)[1] == 0.1f);
  // The fixture's argmax reproduces the gold tags.
  for (const auto& s : corpus.sentences) CHECK(pseudo_labels(store.at(s.id)) == *s.gold_tags);
  std::vector<std::size_t> wanted{0, 1, 2, 3, 9};
  CHECK(store.missing(wanted) == std::vector<std::size_t>{3, 9});
}

TEST_CASE("teacher logits errors") {
  const auto corpus = read_conll_file(data_path("teacher_fixture.conll"));
  auto store = TeacherLogitsStore::load(data_path("teacher_fixture.jsonl"));
  auto extra = corpus.sentences;
  extra.push_back(extra[0]);
  extra.back().id = 17;
  try {
    store.check_coverage(extra);
    FAIL("expected coverage error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCoverage);
    CHECK(std::string(e.what()).find("17") != std::string::npos);
  }
  auto shorter = corpus.sentences;
  shorter[1].tokens.pop_back();
  shorter[1].gold_tags->pop_back();
  CHECK(kind_of([&] { store.check_coverage(shorter); }) == ErrorKind::kAlignment);
  const TagSet reordered({"O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG"});
  CHECK(kind_of([&] { store.check_alignment(reordered); }) == ErrorKind::kAlignment);
  CHECK(kind_of([&] { store.add({5, 1, 4, {0, 0, 0, 0}}); }) == ErrorKind::kDimension);
  CHECK(kind_of([&] {
    store.add({5, 1, 5, {0, 0, std::numeric_limits<float>::quiet_NaN(), 0, 0}});
  }) == ErrorKind::kDomain);
  CHECK(kind_of([&] { store.at(42); }) == ErrorKind::kCoverage);

  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return TeacherLogitsStore::read(in);
  };
  CHECK(kind_of([&] { parse(""); }) == ErrorKind::kFormat);
  CHECK(kind_of([&] { parse("{\"format\": \"other\", \"version\": 1, \"tagset\": [], \"K\": 0}\n"); }) ==
        ErrorKind::kFormat);
  const std::string header =
      "{\"format\": \"teacher-logits\", \"version\": 1, \"tagset\": [\"O\", \"B-X\"], \"K\": 2}\n";
  CHECK(kind_of([&] { parse(header + "{\"sentence_id\": 0, \"token_count\": 2, \"rows\": [[1, 2]]}\n"); }) ==
        ErrorKind::kFormat);
  CHECK(kind_of([&] { parse(header + "{\"sentence_id\": 0, \"token_count\": 1, \"rows\": [[1]]}\n"); }) ==
        ErrorKind::kFormat);
  CHECK(kind_of([&] { parse(header + "not json\n"); }) == ErrorKind::kFormat);
}

TEST_CASE("teacher logits keep full single precision") {
  TeacherLogitsStore store({"O", "B-X", "I-X"}, "rt");
  Rng rng(5);
  for (std::size_t id = 0; id < 20; ++id) {
    TeacherLogits t{id, 1 + id % 4, 3, {}};
    for (std::size_t i = 0; i < t.rows * 3; ++i) {
      t.values.push_back(static_cast<float>(rng.uniform(-50, 50)) * (i % 2 ? 1e-7f : 1.0f));
    }
    store.add(t);
  }
  std::stringstream buf;
  store.write(buf);
  const auto back = TeacherLogitsStore::read(buf);
  CHECK(back.tagset() == store.tagset());
  CHECK(back.ids() == store.ids());
  for (const auto id : store.ids()) CHECK(back.at(id).values == store.at(id).values);
}
