#include "distiltag/bench.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <thread>

#include "distiltag/error.h"

namespace distiltag {
namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void check_alignment(const Model<float>& model, const std::string& label,
                     std::span<const Sentence> dataset, const TagSet* dataset_tags) {
  if (dataset_tags) {
    for (const auto& l : dataset_tags->labels()) {
      if (!model.tagset.find(l)) {
        fail(ErrorKind::kAlignment, "dataset label " + l + " is unknown to model " + label);
      }
    }
  }
  for (const auto& s : dataset) {
    for (const auto& tok : s.tokens) {
      if (model.vocab.word_id(tok) != Vocab::kUnk) return;
    }
  }
  fail(ErrorKind::kAlignment, "no dataset word is in the vocabulary of model " + label);
}

// One full pass; returns wall-clock seconds.
double timed_pass(const Model<float>& model, std::span<const Sentence> dataset,
                  std::size_t batch_size, const BenchConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  if (config.thread_mode == ThreadMode::kSingle || config.workers <= 1) {
    const auto tags = predict(model, dataset, batch_size);
    (void)tags;
  } else {
    // Workers take whole batches round-robin; the model is shared read-only.
    const std::size_t batches = (dataset.size() + batch_size - 1) / batch_size;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < config.workers; ++w) {
      pool.emplace_back([&, w]() {
        for (std::size_t b = w; b < batches; b += config.workers) {
          const auto begin = b * batch_size;
          const auto n = std::min(batch_size, dataset.size() - begin);
          const auto tags = predict(model, dataset.subspan(begin, n), batch_size);
          (void)tags;
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

void BenchConfig::validate() const {
  if (batch_sizes.empty()) fail(ErrorKind::kConfig, "bench needs at least one batch size");
  for (const auto b : batch_sizes) {
    if (b == 0) fail(ErrorKind::kConfig, "batch sizes must be positive");
  }
  if (measured_passes == 0) fail(ErrorKind::kConfig, "measured_passes must be at least 1");
  if (thread_mode == ThreadMode::kPooled && workers == 0) {
    fail(ErrorKind::kConfig, "pooled mode needs at least one worker");
  }
}

const BenchRow& BenchResult::row(std::size_t batch_size) const {
  for (const auto& r : rows) {
    if (r.batch_size == batch_size) return r;
  }
  fail(ErrorKind::kLookup, "model " + model + " has no timing for batch size " +
                               std::to_string(batch_size));
}

std::vector<BenchResult> bench_models(std::span<const BenchSubject> subjects,
                                      std::span<const Sentence> dataset,
                                      const TagSet* dataset_tags, const BenchConfig& config) {
  config.validate();
  if (dataset.empty()) fail(ErrorKind::kConfig, "bench dataset is empty");
  std::vector<BenchResult> results;
  for (const auto& s : subjects) {
    if (!s.model) fail(ErrorKind::kConfig, "bench subject " + s.label + " has no model");
    check_alignment(*s.model, s.label, dataset, dataset_tags);
    results.push_back({s.label, dataset.size(), {}});
  }
  for (const auto batch : config.batch_sizes) {
    for (std::size_t i = 0; i < config.warmup_passes; ++i) {
      for (const auto& s : subjects) timed_pass(*s.model, dataset, batch, config);
    }
    std::vector<std::vector<double>> passes(subjects.size());
    for (std::size_t i = 0; i < config.measured_passes; ++i) {
      // Alternate the order so neither model always runs first.
      for (std::size_t j = 0; j < subjects.size(); ++j) {
        const auto k = i % 2 ? subjects.size() - 1 - j : j;
        passes[k].push_back(timed_pass(*subjects[k].model, dataset, batch, config));
      }
    }
    for (std::size_t k = 0; k < subjects.size(); ++k) {
      BenchRow row;
      row.batch_size = batch;
      row.pass_seconds = passes[k];
      row.seconds = median(passes[k]);
      row.sentences_per_second = static_cast<double>(dataset.size()) / row.seconds;
      results[k].rows.push_back(std::move(row));
    }
  }
  return results;
}

BenchResult bench_model(const Model<float>& model, const std::string& label,
                        std::span<const Sentence> dataset, const TagSet* dataset_tags,
                        const BenchConfig& config) {
  const BenchSubject subject{label, &model};
  return bench_models({&subject, 1}, dataset, dataset_tags, config).front();
}

double speedup(const BenchResult& a, const BenchResult& b, std::size_t batch_size) {
  return b.row(batch_size).seconds / a.row(batch_size).seconds;
}

SpeedupTable speedup_table(std::span<const BenchResult> results,
                           std::span<const std::string> baselines) {
  auto find = [&](const std::string& name) -> const BenchResult& {
    for (const auto& r : results) {
      if (r.model == name) return r;
    }
    fail(ErrorKind::kLookup, "baseline model '" + name + "' is not in the bench results");
  };
  SpeedupTable table;
  if (results.empty()) return table;
  for (const auto& r : results.front().rows) table.batch_sizes.push_back(r.batch_size);
  for (const auto& r : results) {
    std::vector<std::size_t> sizes;
    for (const auto& row : r.rows) sizes.push_back(row.batch_size);
    if (sizes != table.batch_sizes) {
      fail(ErrorKind::kAlignment, "model " + r.model + " was timed on different batch sizes");
    }
  }
  for (const auto& base : baselines) {
    find(base);
    bool any = false;
    for (const auto& r : results) {
      if (std::find(baselines.begin(), baselines.end(), r.model) != baselines.end()) continue;
      table.baselines.push_back(base);
      table.variants.push_back(r.model);
      any = true;
    }
    if (!any) {
      table.baselines.push_back(base);
      table.variants.push_back(base);
    }
  }
  for (const auto batch : table.batch_sizes) {
    std::vector<double> row;
    for (std::size_t c = 0; c < table.variants.size(); ++c) {
      row.push_back(speedup(find(table.variants[c]), find(table.baselines[c]), batch));
    }
    table.ratios.push_back(std::move(row));
  }
  return table;
}

SpeedupTable speedup_table(std::span<const BenchResult> results, const std::string& baseline) {
  return speedup_table(results, std::span<const std::string>(&baseline, 1));
}

std::string format_speedup_table(const SpeedupTable& table) {
  std::string out;
  char cell[128];
  std::size_t width = 8;
  for (std::size_t c = 0; c < table.variants.size(); ++c) {
    width = std::max(width, table.variants[c].size() + 1);
    width = std::max(width, table.baselines[c].size() + 1);
  }
  auto pad = [&](const std::string& s) { return std::string(width - std::min(width, s.size()), ' ') + s; };
  out += "Batch size";
  for (const auto& b : table.baselines) out += pad(b);
  out += "\n          ";
  for (const auto& v : table.variants) out += pad(v);
  out += '\n';
  for (std::size_t r = 0; r < table.batch_sizes.size(); ++r) {
    std::snprintf(cell, sizeof cell, "%10zu", table.batch_sizes[r]);
    out += cell;
    for (const double x : table.ratios[r]) {
      std::snprintf(cell, sizeof cell, "%.1f", x);
      // "×" is two bytes but one column wide.
      out += std::string(width - std::min(width, std::string(cell).size() + 1), ' ') + cell + "×";
    }
    out += '\n';
  }
  return out;
}

std::string format_bench_table(std::span<const BenchResult> results) {
  std::string out;
  char line[200];
  std::snprintf(line, sizeof line, "%-24s %10s %12s %14s\n", "model", "batch", "seconds",
                "sentences/s");
  out += line;
  for (const auto& r : results) {
    for (const auto& row : r.rows) {
      std::snprintf(line, sizeof line, "%-24s %10zu %12.4f %14.1f\n", r.model.c_str(),
                    row.batch_size, row.seconds, row.sentences_per_second);
      out += line;
    }
  }
  return out;
}

void write_bench_jsonl(std::ostream& out, std::span<const BenchResult> results) {
  for (const auto& r : results) {
    for (const auto& row : r.rows) {
      nlohmann::ordered_json j;
      j["model"] = r.model;
      j["batch_size"] = row.batch_size;
      j["seconds"] = row.seconds;
      j["sentences_per_second"] = row.sentences_per_second;
      j["sentences"] = r.sentences;
      j["passes"] = row.pass_seconds;
      out << j.dump() << '\n';
    }
  }
}

std::vector<BenchResult> read_external_timings(std::istream& in) {
  std::vector<BenchResult> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, "timings line " + std::to_string(n) + ": " + e.what());
    }
    if (!j.contains("model") || !j.contains("batch_size") || !j.contains("seconds")) {
      fail(ErrorKind::kFormat, "timings line " + std::to_string(n) +
                                   " needs model, batch_size and seconds");
    }
    const auto model = j.at("model").get<std::string>();
    BenchRow row;
    row.batch_size = j.at("batch_size").get<std::size_t>();
    row.seconds = j.at("seconds").get<double>();
    if (!(row.seconds > 0)) {
      fail(ErrorKind::kRange, "timings line " + std::to_string(n) + ": seconds must be positive");
    }
    row.pass_seconds = {row.seconds};
    const auto sentences = j.value("sentences", std::size_t{0});
    if (sentences) row.sentences_per_second = static_cast<double>(sentences) / row.seconds;
    auto it = std::find_if(out.begin(), out.end(), [&](const BenchResult& r) { return r.model == model; });
    if (it == out.end()) {
      out.push_back({model, sentences, {}});
      it = out.end() - 1;
    }
    it->rows.push_back(std::move(row));
  }
  for (auto& r : out) {
    std::sort(r.rows.begin(), r.rows.end(),
              [](const BenchRow& a, const BenchRow& b) { return a.batch_size < b.batch_size; });
  }
  return out;
}

}  // namespace distiltag
