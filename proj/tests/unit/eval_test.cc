#include <fstream>
#include <sstream>

#include "distiltag/error.h"
#include "distiltag/eval.h"
#include "distiltag/rng.h"
#include "doctest.h"

using namespace distiltag;

namespace {

using Tags = std::vector<std::string>;

SpanSet spans(const Tags& tags) { return extract_spans(std::span<const std::string>(tags)); }

// token gold predicted, blank-line separated; tags kept verbatim (no scheme
// conversion) so repairs stay visible.
void read_golden(const std::string& path, std::vector<Tags>& gold, std::vector<Tags>& pred) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  Tags g, p;
  auto flush = [&] {
    if (!g.empty()) {
      gold.push_back(g);
      pred.push_back(p);
    }
    g.clear();
    p.clear();
  };
  while (std::getline(in, line)) {
    std::istringstream cols(line);
    std::string tok, gt, pt;
    if (!(cols >> tok >> gt >> pt)) {
      flush();
      continue;
    }
    g.push_back(gt);
    p.push_back(pt);
  }
  flush();
}

}  // namespace

TEST_CASE("extract_spans examples") {
  const auto s = spans({"B-PER", "I-PER", "O", "B-LOC"});
  CHECK(s.spans == std::vector<Span>{{"PER", 0, 1}, {"LOC", 3, 3}});
  CHECK(s.repairs == 0);
  CHECK(spans({"O", "O"}).spans.empty());
  const auto r = spans({"I-PER"});
  CHECK(r.spans == std::vector<Span>{{"PER", 0, 0}});
  CHECK(r.repairs == 1);
  const auto mixed = spans({"B-PER", "I-LOC", "I-LOC"});
  CHECK(mixed.spans == std::vector<Span>{{"PER", 0, 0}, {"LOC", 1, 2}});
  CHECK(mixed.repairs == 1);
}

TEST_CASE("span_f1 hand-enumerated fixture") {
  const std::vector<SpanSet> gold{spans({"B-PER", "I-PER", "O", "B-LOC"})};
  const std::vector<SpanSet> pred{spans({"B-PER", "I-PER", "O", "B-ORG"})};
  const auto r = span_f1(gold, pred);
  CHECK(r.precision == 50.0);
  CHECK(r.recall == 50.0);
  CHECK(r.f1 == 50.0);
  CHECK(span_f1(gold, gold).f1 == 100.0);
  const std::vector<SpanSet> none{spans({"O", "O", "O", "O"})};
  const auto z = span_f1(gold, none);
  CHECK(z.precision == 0.0);
  CHECK(z.recall == 0.0);
  CHECK(z.f1 == 0.0);
  try {
    span_f1(gold, std::vector<SpanSet>{});
    FAIL("expected a contract error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kContract);
  }
}

TEST_CASE("golden file scored by hand") {
  std::vector<Tags> gold_tags, pred_tags;
  read_golden(std::string(DISTILTAG_TEST_DATA) + "/golden_20.txt", gold_tags, pred_tags);
  REQUIRE(gold_tags.size() == 20);
  std::vector<SpanSet> gold, pred;
  for (std::size_t i = 0; i < gold_tags.size(); ++i) {
    gold.push_back(spans(gold_tags[i]));
    pred.push_back(spans(pred_tags[i]));
  }
  const auto r = span_f1(gold, pred);
  // Tallied sentence by sentence from the file.
  CHECK(r.gold == 23);
  CHECK(r.predicted == 22);
  CHECK(r.correct == 12);
  CHECK(r.repairs == 2);
  CHECK(r.precision == doctest::Approx(100.0 * 12 / 22));
  CHECK(r.recall == doctest::Approx(100.0 * 12 / 23));
  CHECK(r.f1 == doctest::Approx(100.0 * 24 / 45));
  const auto& per = r.per_type;
  CHECK(per.at("PER").gold == 6);
  CHECK(per.at("PER").predicted == 5);
  CHECK(per.at("PER").correct == 4);
  CHECK(per.at("LOC").gold == 7);
  CHECK(per.at("LOC").predicted == 6);
  CHECK(per.at("LOC").correct == 2);
  CHECK(per.at("ORG").gold == 6);
  CHECK(per.at("ORG").predicted == 6);
  CHECK(per.at("ORG").correct == 3);
  CHECK(per.at("MISC").gold == 4);
  CHECK(per.at("MISC").predicted == 5);
  CHECK(per.at("MISC").correct == 3);
  CHECK(per.at("ORG").f1 == doctest::Approx(50.0));
  CHECK(per.at("MISC").f1 == doctest::Approx(100.0 * 6 / 9));
  const auto text = format_report(r);
  CHECK(text.find("23 gold") != std::string::npos);
}

TEST_CASE("scorer properties on random tag sequences") {
  const Tags labels{"O", "B-PER", "I-PER", "B-LOC", "I-LOC"};
  Rng rng(21);
  for (int n = 0; n < 200; ++n) {
    std::vector<SpanSet> g, p;
    for (int s = 0; s < 5; ++s) {
      const std::size_t len = 1 + rng.below(8);
      Tags a(len), b(len);
      for (auto& t : a) t = labels[rng.below(labels.size())];
      for (auto& t : b) t = labels[rng.below(labels.size())];
      g.push_back(spans(a));
      p.push_back(spans(b));
      // spans -> tags -> spans is the identity
      const auto back = tags_from_spans(g.back().spans, len);
      CHECK(spans(back).spans == g.back().spans);
      CHECK(spans(back).repairs == 0);
    }
    const auto r = span_f1(g, p);
    const auto swapped = span_f1(p, g);
    CHECK(r.precision == doctest::Approx(swapped.recall));
    CHECK(r.recall == doctest::Approx(swapped.precision));
    CHECK(r.f1 >= 0.0);
    CHECK(r.f1 <= 100.0);
    CHECK(r.correct <= std::min(r.gold, r.predicted));
    if (r.precision + r.recall > 0) {
      CHECK(r.f1 == doctest::Approx(2 * r.precision * r.recall / (r.precision + r.recall)));
    }
    const bool identical = [&] {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i].spans != p[i].spans) return false;
      }
      return true;
    }();
    // F1 = 100 exactly when the span sets agree (empty sets score 0 by rule).
    if (r.gold > 0) CHECK((r.f1 == 100.0) == identical);
  }
}

TEST_CASE("evaluate_tags uses the tagset") {
  const TagSet tagset({"B-PER", "I-PER"});
  Sentence s;
  s.tokens = {"a", "b"};
  s.gold_tags = TagSequence{tagset.id("B-PER"), tagset.id("I-PER")};
  const std::vector<Sentence> sentences{s};
  const std::vector<TagSequence> same{*s.gold_tags};
  CHECK(evaluate_tags(sentences, same, tagset).f1 == 100.0);
  const std::vector<TagSequence> short_pred{{0}};
  CHECK_THROWS_AS(evaluate_tags(sentences, short_pred, tagset), Error);
  const auto j = to_json(evaluate_tags(sentences, same, tagset));
  CHECK(j.at("f1").get<double>() == 100.0);
}
