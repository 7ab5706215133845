#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "distiltag/data.h"
#include "distiltag/tagger.h"
#include "json.hpp"

namespace distiltag {

enum class ThreadMode { kSingle, kPooled };

struct BenchConfig {
  std::vector<std::size_t> batch_sizes = {1, 32, 64, 128};
  std::size_t warmup_passes = 1;
  std::size_t measured_passes = 3;
  ThreadMode thread_mode = ThreadMode::kSingle;
  std::size_t workers = 2;  // pooled mode only

  void validate() const;
};

struct BenchRow {
  std::size_t batch_size = 0;
  double seconds = 0;  // median of the measured passes
  double sentences_per_second = 0;
  std::vector<double> pass_seconds;
};

// Timings of one model over one dataset.
struct BenchResult {
  std::string model;
  std::size_t sentences = 0;
  std::vector<BenchRow> rows;  // config batch-size order

  const BenchRow& row(std::size_t batch_size) const;  // kLookup if absent
};

struct BenchSubject {
  std::string label;
  const Model<float>* model = nullptr;
};

// Full inference passes (forward + argmax or Viterbi decoding) over the
// dataset. With several subjects the passes are interleaved per batch size
// so slow drift of the host hits every model alike. Throws kAlignment when
// the dataset's labels are unknown to a model or no dataset word is in its
// vocabulary.
std::vector<BenchResult> bench_models(std::span<const BenchSubject> subjects,
                                      std::span<const Sentence> dataset,
                                      const TagSet* dataset_tags, const BenchConfig& config);

BenchResult bench_model(const Model<float>& model, const std::string& label,
                        std::span<const Sentence> dataset, const TagSet* dataset_tags,
                        const BenchConfig& config);

// time(b) / time(a) at one batch size.
double speedup(const BenchResult& a, const BenchResult& b, std::size_t batch_size);

struct SpeedupTable {
  std::vector<std::size_t> batch_sizes;
  std::vector<std::string> baselines;  // per column
  std::vector<std::string> variants;   // per column
  std::vector<std::vector<double>> ratios;  // [row][column] = speedup(variant, baseline)
};

// Columns are every (baseline, other model) pair, baselines in the given
// order; a baseline with no other model gets a self column. Throws kLookup
// for an unknown baseline and kAlignment when batch sizes differ.
SpeedupTable speedup_table(std::span<const BenchResult> results,
                           std::span<const std::string> baselines);
SpeedupTable speedup_table(std::span<const BenchResult> results, const std::string& baseline);

// Fixed-width text with "N.N×" cells.
std::string format_speedup_table(const SpeedupTable& table);
std::string format_bench_table(std::span<const BenchResult> results);

// One {"model", "batch_size", "seconds", "sentences_per_second"} record per
// row.
void write_bench_jsonl(std::ostream& out, std::span<const BenchResult> results);
// Timings measured elsewhere: {"model", "batch_size", "seconds"} per line,
// optional "sentences".
std::vector<BenchResult> read_external_timings(std::istream& in);

}  // namespace distiltag
