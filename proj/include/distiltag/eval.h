#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "distiltag/data.h"
#include "distiltag/tagger.h"
#include "json.hpp"

namespace distiltag {

// Entity span with inclusive end.
struct Span {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;

  auto operator<=>(const Span&) const = default;
};

struct SpanSet {
  std::vector<Span> spans;  // sorted by start
  std::size_t repairs = 0;  // I-X tags that had to open a new span
};

// Each maximal B-X (I-X)* run becomes one span. An I-X that does not continue
// a span of the same type starts a new one and is counted as a repair.
SpanSet extract_spans(std::span<const std::string> tags);
SpanSet extract_spans(std::span<const TagId> tags, const TagSet& tagset);

// Inverse of extract_spans for non-overlapping spans.
std::vector<std::string> tags_from_spans(std::span<const Span> spans, std::size_t length);

struct TypeScore {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t correct = 0;
};

// Percentages, micro-averaged over exact (type, start, end) matches.
struct EvalReport {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t correct = 0;
  std::size_t repairs = 0;
  std::map<std::string, TypeScore> per_type;
};

EvalReport span_f1(std::span<const SpanSet> gold, std::span<const SpanSet> predicted);

// Scores predicted tag ids against the sentences' gold tags.
EvalReport evaluate_tags(std::span<const Sentence> sentences,
                         std::span<const TagSequence> predicted, const TagSet& tagset);

template <typename T>
EvalReport evaluate(const Model<T>& model, std::span<const Sentence> sentences,
                    std::size_t batch_size = 32) {
  const auto predicted = predict(model, sentences, batch_size);
  return evaluate_tags(sentences, predicted, model.tagset);
}

nlohmann::ordered_json to_json(const EvalReport& report);
// conlleval-style text block.
std::string format_report(const EvalReport& report);

}  // namespace distiltag
