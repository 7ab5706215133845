#include "distiltag/eval.h"

#include <algorithm>
#include <cstdio>
#include <set>

#include "distiltag/error.h"

namespace distiltag {

namespace {

void score(TypeScore& s) {
  s.precision = s.predicted ? 100.0 * static_cast<double>(s.correct) / static_cast<double>(s.predicted) : 0.0;
  s.recall = s.gold ? 100.0 * static_cast<double>(s.correct) / static_cast<double>(s.gold) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
}

}  // namespace

SpanSet extract_spans(std::span<const std::string> tags) {
  SpanSet out;
  bool open = false;
  Span current;
  auto close = [&]() {
    if (open) out.spans.push_back(current);
    open = false;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& tag = tags[i];
    if (tag == "O" || tag.size() < 3) {
      close();
      continue;
    }
    const std::string type = tag.substr(2);
    if (tag[0] == 'I' && open && current.type == type) {
      current.end = i;
      continue;
    }
    if (tag[0] == 'I') ++out.repairs;
    close();
    current = Span{type, i, i};
    open = true;
  }
  close();
  return out;
}

SpanSet extract_spans(std::span<const TagId> tags, const TagSet& tagset) {
  std::vector<std::string> labels;
  labels.reserve(tags.size());
  for (const auto t : tags) labels.push_back(tagset.label(t));
  return extract_spans(labels);
}

std::vector<std::string> tags_from_spans(std::span<const Span> spans, std::size_t length) {
  std::vector<std::string> tags(length, "O");
  for (const auto& s : spans) {
    if (s.start > s.end || s.end >= length) {
      fail(ErrorKind::kRange, "span [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                                  "] outside sentence of " + std::to_string(length));
    }
    for (std::size_t i = s.start; i <= s.end; ++i) {
      if (tags[i] != "O") fail(ErrorKind::kRange, "overlapping spans");
      tags[i] = (i == s.start ? "B-" : "I-") + s.type;
    }
  }
  return tags;
}

EvalReport span_f1(std::span<const SpanSet> gold, std::span<const SpanSet> predicted) {
  if (gold.size() != predicted.size()) {
    fail(ErrorKind::kContract, "span_f1: " + std::to_string(gold.size()) +
                                   " gold sentences vs " + std::to_string(predicted.size()) +
                                   " predicted");
  }
  EvalReport report;
  TypeScore total;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    report.repairs += predicted[i].repairs;
    const std::set<Span> g(gold[i].spans.begin(), gold[i].spans.end());
    const std::set<Span> p(predicted[i].spans.begin(), predicted[i].spans.end());
    for (const auto& s : g) {
      ++total.gold;
      ++report.per_type[s.type].gold;
    }
    for (const auto& s : p) {
      ++total.predicted;
      auto& per = report.per_type[s.type];
      ++per.predicted;
      if (g.count(s)) {
        ++total.correct;
        ++per.correct;
      }
    }
  }
  score(total);
  for (auto& [type, s] : report.per_type) score(s);
  report.precision = total.precision;
  report.recall = total.recall;
  report.f1 = total.f1;
  report.gold = total.gold;
  report.predicted = total.predicted;
  report.correct = total.correct;
  return report;
}

EvalReport evaluate_tags(std::span<const Sentence> sentences,
                         std::span<const TagSequence> predicted, const TagSet& tagset) {
  if (sentences.size() != predicted.size()) {
    fail(ErrorKind::kContract, "evaluate: prediction count differs from sentence count");
  }
  std::vector<SpanSet> gold_spans;
  std::vector<SpanSet> pred_spans;
  gold_spans.reserve(sentences.size());
  pred_spans.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto& s = sentences[i];
    if (!s.gold_tags) {
      fail(ErrorKind::kContract, "sentence " + std::to_string(s.id) + " has no gold tags");
    }
    if (predicted[i].size() != s.size()) {
      fail(ErrorKind::kContract, "prediction length differs for sentence " + std::to_string(s.id));
    }
    gold_spans.push_back(extract_spans(*s.gold_tags, tagset));
    pred_spans.push_back(extract_spans(predicted[i], tagset));
  }
  return span_f1(gold_spans, pred_spans);
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["gold"] = r.gold;
  j["predicted"] = r.predicted;
  j["correct"] = r.correct;
  j["repairs"] = r.repairs;
  auto types = nlohmann::ordered_json::object();
  for (const auto& [type, s] : r.per_type) {
    types[type] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
                   {"gold", s.gold},           {"predicted", s.predicted}, {"correct", s.correct}};
  }
  j["per_type"] = types;
  return j;
}

std::string format_report(const EvalReport& r) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "phrases: %zu gold, %zu predicted, %zu correct\n", r.gold,
                r.predicted, r.correct);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s precision: %6.2f%%; recall: %6.2f%%; FB1: %6.2f\n", "overall",
                r.precision, r.recall, r.f1);
  out += buf;
  for (const auto& [type, s] : r.per_type) {
    std::snprintf(buf, sizeof buf, "%-10s precision: %6.2f%%; recall: %6.2f%%; FB1: %6.2f  %zu\n",
                  type.c_str(), s.precision, s.recall, s.f1, s.predicted);
    out += buf;
  }
  return out;
}

}  // namespace distiltag
