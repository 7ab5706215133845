#include "distiltag/grid.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <thread>

#include "distiltag/error.h"
#include "distiltag/eval.h"
#include "distiltag/rng.h"

namespace distiltag {

std::vector<Variant> default_variants() {
  return {{"baseline-softmax", Classifier::kSoftmax, false},
          {"baseline-crf", Classifier::kCrf, false},
          {"distilled-softmax", Classifier::kSoftmax, true},
          {"distilled-crf", Classifier::kCrf, true}};
}

Variant parse_variant(const std::string& name) {
  for (auto v : default_variants()) {
    if (v.name == name) return v;
  }
  fail(ErrorKind::kConfig, "unknown variant '" + name +
                               "' (expected baseline-softmax, baseline-crf, distilled-softmax "
                               "or distilled-crf)");
}

std::vector<GridSummary> summarize(std::span<const GridCell> cells) {
  std::vector<GridSummary> out;
  std::vector<std::vector<double>> values;
  for (const auto& c : cells) {
    auto it = std::find_if(out.begin(), out.end(), [&](const GridSummary& s) {
      return s.size == c.size && s.variant == c.variant;
    });
    if (it == out.end()) {
      out.push_back({c.size, c.variant});
      values.emplace_back();
      it = out.end() - 1;
    }
    const auto k = static_cast<std::size_t>(it - out.begin());
    if (c.ok) {
      values[k].push_back(c.test_f1);
    } else {
      ++it->failures;
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto& v = values[k];
    auto& s = out[k];
    s.cells = v.size();
    if (v.empty()) continue;
    double sum = 0;
    for (const double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    double ss = 0;
    for (const double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stddev = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
  }
  return out;
}

GridReport run_experiment_grid(std::span<const Sentence> train, std::span<const SplitSpec> splits,
                               std::span<const Variant> variants,
                               const TeacherLogitsStore* teacher,
                               std::span<const Sentence> dev, std::span<const Sentence> test,
                               const Vocab& vocab, const TagSet& tagset,
                               const GridConfig& config) {
  if (splits.empty() || variants.empty()) fail(ErrorKind::kConfig, "grid needs splits and variants");
  if (config.workers == 0) fail(ErrorKind::kConfig, "grid needs at least one worker");
  config.distill.validate();
  const bool any_distilled =
      std::any_of(variants.begin(), variants.end(), [](const Variant& v) { return v.distilled; });
  if (any_distilled) {
    if (!teacher) fail(ErrorKind::kConfig, "distilled variants need teacher logits");
    teacher->check_alignment(tagset);
    teacher->check_coverage(train);
  }
  if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);

  GridReport report;
  report.cells.resize(splits.size() * variants.size());
  auto run_cell = [&](std::size_t index) {
    const auto& split = splits[index / variants.size()];
    const auto& variant = variants[index % variants.size()];
    GridCell& cell = report.cells[index];
    cell.size = split.size;
    cell.seed_index = split.seed_index;
    cell.split_seed = split.seed;
    cell.variant = variant.name;
    try {
      const auto labeled = select_sentences(train, split.labeled_ids, true);
      DistillConfig dc = config.distill;
      // Same seed for every variant of a split so curves are paired.
      dc.seed = derive_seed(config.distill.seed, split.size, split.seed_index);
      TaggerConfig tc = config.tagger;
      tc.classifier = variant.classifier;
      TrainOptions options;
      options.embeddings = config.embeddings;
      if (!config.checkpoint_dir.empty()) {
        options.checkpoint_path = (std::filesystem::path(config.checkpoint_dir) /
                                   (variant.name + "-" + std::to_string(split.size) + "-" +
                                    std::to_string(split.seed_index) + ".cdt"))
                                      .string();
        options.provenance = {{"size", split.size},
                              {"seed_index", split.seed_index},
                              {"variant", variant.name}};
      }
      TrainResult result;
      if (variant.distilled) {
        const auto unlabeled = select_sentences(train, split.unlabeled_ids, false);
        result = train_distilled(labeled, unlabeled, teacher, dev, vocab, tagset, dc, tc, options);
      } else {
        result = train_baseline(labeled, dev, vocab, tagset, dc, tc, options);
      }
      cell.dev_f1 = result.report.best_dev_f1;
      cell.best_epoch = result.report.best_epoch;
      cell.checkpoint = result.report.checkpoint_path;
      cell.test_f1 = evaluate(result.model, test).f1;
      cell.ok = true;
    } catch (const Error& e) {
      cell.error = std::string(error_kind_name(e.kind())) + ": " + e.what();
    } catch (const std::exception& e) {
      cell.error = std::string("internal: ") + e.what();
    }
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < report.cells.size(); i = next++) run_cell(i);
  };
  const auto n = std::min(config.workers, report.cells.size());
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  report.partial = std::any_of(report.cells.begin(), report.cells.end(),
                               [](const GridCell& c) { return !c.ok; });
  report.summary = summarize(report.cells);
  return report;
}

nlohmann::ordered_json to_json(const GridCell& c) {
  nlohmann::ordered_json j;
  j["size"] = c.size;
  j["seed"] = c.seed_index;
  j["split_seed"] = c.split_seed;
  j["variant"] = c.variant;
  j["ok"] = c.ok;
  j["dev_f1"] = c.dev_f1;
  j["test_f1"] = c.test_f1;
  j["best_epoch"] = c.best_epoch;
  j["checkpoint"] = c.checkpoint;
  if (!c.ok) j["error"] = c.error;
  return j;
}

void write_grid_jsonl(std::ostream& out, const GridReport& report) {
  for (const auto& c : report.cells) out << to_json(c).dump() << '\n';
  for (const auto& s : report.summary) {
    nlohmann::ordered_json j;
    j["size"] = s.size;
    j["variant"] = s.variant;
    j["cells"] = s.cells;
    j["failures"] = s.failures;
    j["mean_test_f1"] = s.mean;
    j["std_test_f1"] = s.stddev;
    j["min_test_f1"] = s.min;
    j["max_test_f1"] = s.max;
    out << nlohmann::ordered_json{{"summary", j}}.dump() << '\n';
  }
}

std::string format_grid_table(const GridReport& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %-20s %6s %8s %8s %8s %8s\n", "size", "variant", "cells",
                "mean", "std", "min", "max");
  out += line;
  for (const auto& s : report.summary) {
    std::snprintf(line, sizeof line, "%-8zu %-20s %6zu %8.2f %8.2f %8.2f %8.2f%s\n", s.size,
                  s.variant.c_str(), s.cells, s.mean, s.stddev, s.min, s.max,
                  s.failures ? "  (partial)" : "");
    out += line;
  }
  return out;
}

}  // namespace distiltag
