#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "distiltag/data.h"
#include "distiltag/distill.h"
#include "distiltag/tagger.h"
#include "distiltag/teacher_logits.h"
#include "json.hpp"

namespace distiltag {

// One training recipe of the grid.
struct Variant {
  std::string name;
  Classifier classifier = Classifier::kSoftmax;
  bool distilled = false;
};

// baseline-softmax, baseline-crf, distilled-softmax, distilled-crf.
std::vector<Variant> default_variants();
Variant parse_variant(const std::string& name);

struct GridConfig {
  DistillConfig distill;
  TaggerConfig tagger;
  std::size_t workers = 1;
  std::string checkpoint_dir;  // empty: no checkpoints written
  const EmbeddingTable* embeddings = nullptr;
};

struct GridCell {
  std::size_t size = 0;
  std::size_t seed_index = 0;
  std::uint64_t split_seed = 0;
  std::string variant;
  double dev_f1 = 0;
  double test_f1 = 0;
  std::size_t best_epoch = 0;
  std::string checkpoint;
  bool ok = false;
  std::string error;  // "category: message" when !ok
};

struct GridSummary {
  std::size_t size = 0;
  std::string variant;
  std::size_t cells = 0;     // successful cells
  std::size_t failures = 0;
  double mean = 0;
  double stddev = 0;  // sample standard deviation, 0 for fewer than two cells
  double min = 0;
  double max = 0;
};

struct GridReport {
  std::vector<GridCell> cells;  // split-major, then variant order
  std::vector<GridSummary> summary;
  bool partial = false;  // some cell failed
};

// Aggregates test F1 per (size, variant), in order of first appearance.
std::vector<GridSummary> summarize(std::span<const GridCell> cells);

// Trains every split x variant cell, selects on dev and scores on test. A
// failing cell is recorded and the grid continues. Cells run on a bounded
// pool of `workers` threads; results do not depend on the worker count.
GridReport run_experiment_grid(std::span<const Sentence> train, std::span<const SplitSpec> splits,
                               std::span<const Variant> variants,
                               const TeacherLogitsStore* teacher,
                               std::span<const Sentence> dev, std::span<const Sentence> test,
                               const Vocab& vocab, const TagSet& tagset,
                               const GridConfig& config);

nlohmann::ordered_json to_json(const GridCell& cell);
// One record per cell, then one {"summary": ...} record per (size, variant).
void write_grid_jsonl(std::ostream& out, const GridReport& report);
std::string format_grid_table(const GridReport& report);

}  // namespace distiltag
