// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failing criteria.
//
//   acceptance            run everything
//   acceptance 7 10       run selected criteria

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "distiltag/bench.h"
#include "distiltag/checkpoint.h"
#include "distiltag/crf.h"
#include "distiltag/data.h"
#include "distiltag/distill.h"
#include "distiltag/error.h"
#include "distiltag/eval.h"
#include "distiltag/grid.h"
#include "distiltag/synthetic.h"
#include "distiltag/teacher_logits.h"
#include "fixtures.h"
#include "gradient_cases.h"
#include "oracles.h"

using namespace distiltag;
namespace dt = distiltag::testing;

namespace {

// Tolerances and budgets, fixed here rather than derived at run time.
constexpr double kPartitionTol = 1e-8;
constexpr double kPrimitiveGradTol = 1e-6;
constexpr double kModelGradTol = 1e-4;
constexpr double kHandValueTol = 1e-3;
constexpr double kCompositionTol = 1e-6;
constexpr double kKlNegativeTol = 1e-12;
constexpr double kKlEqualTol = 1e-12;
constexpr double kKlHotLimit = 1e-8;
constexpr double kScoreTol = 1e-9;
constexpr double kBudget1 = 10, kBudget2 = 60, kBudget6 = 120, kBudget7 = 600, kBudget10 = 300;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1
Outcome crf_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst = 0;
  int viterbi_mismatch = 0;
  for (int n = 0; n < 200; ++n) {
    const std::size_t length = 1 + rng.below(5);
    const std::size_t k = 1 + rng.below(4);
    std::vector<double> em(length * k), trans((k + 2) * (k + 2));
    for (auto& v : em) v = rng.uniform(-3, 3);
    for (auto& v : trans) v = rng.uniform(-3, 3);
    const double got = crf_log_partition<double>(em, length, k, trans);
    worst = std::max(worst, std::abs(got - dt::brute_log_partition(em, length, k, trans)));
    if (viterbi_decode<double>(em, length, k, trans) != dt::brute_best_path(em, length, k, trans)) {
      ++viterbi_mismatch;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < kPartitionTol && viterbi_mismatch == 0 && secs < kBudget1,
          "max |logZ - brute| " + fmt("%.2e", worst) + ", viterbi mismatches " +
              std::to_string(viterbi_mismatch) + ", " + fmt("%.2f", secs) + " s"};
}

// ---------------------------------------------------------------- 2
Outcome gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  double prim = 0;
  std::string worst_name;
  for (const auto& c : dt::primitive_gradient_errors()) {
    if (c.error >= prim) {
      prim = c.error;
      worst_name = c.name;
    }
  }
  const double softmax = dt::model_gradient_error(Classifier::kSoftmax);
  const double crf = dt::model_gradient_error(Classifier::kCrf);
  const double secs = seconds_since(t0);
  return {prim < kPrimitiveGradTol && softmax < kModelGradTol && crf < kModelGradTol && secs < kBudget2,
          "primitives " + fmt("%.2e", prim) + " (worst " + worst_name + "), softmax model " +
              fmt("%.2e", softmax) + ", crf model " + fmt("%.2e", crf) + ", " + fmt("%.2f", secs) + " s"};
}

// ---------------------------------------------------------------- 3
EmissionBatch<double> one_sentence(std::vector<double> logits, std::size_t length, std::size_t k) {
  EmissionBatch<double> b;
  b.logits = Tensor<double>({length, k}, std::move(logits));
  b.mask.assign(length, 1);
  b.lengths = {length};
  b.batch = 1;
  b.steps = length;
  return b;
}

Outcome loss_formulas() {
  std::vector<std::string> bad;
  auto expect = [&](const std::string& what, double got, double want, double tol) {
    if (!(std::abs(got - want) <= tol)) bad.push_back(what + "=" + fmt("%.6g", got));
  };
  Graph<double> g(false);
  const Tensor<double> none;
  DistillConfig plain;
  plain.temperature = 1;
  plain.scale_by_t2 = false;

  // task loss
  const std::vector<TaskTarget> three{{TargetSource::kGold, {0, 4, 8}}};
  expect("uniform K=9",
         task_loss(g, one_sentence(std::vector<double>(27, 0.0), 3, 9), three, Classifier::kSoftmax, none).item(),
         std::log(9.0), kHandValueTol);
  const std::vector<TaskTarget> fit{{TargetSource::kGold, {0, 1}}};
  const std::vector<TaskTarget> agree{{TargetSource::kPseudo, {0, 1}}};
  const auto sharp = one_sentence({30, 0, 0, 0, 30, 0}, 2, 3);
  expect("perfect fit", task_loss(g, sharp, fit, Classifier::kSoftmax, none).item(), 0, kHandValueTol);
  expect("pseudo agreement", task_loss(g, sharp, agree, Classifier::kSoftmax, none).item(), 0, kHandValueTol);

  // distillation loss
  const auto student = one_sentence({0.0, std::log(3.0)}, 1, 2);
  const TeacherLogits swapped{0, 1, 2, {static_cast<float>(std::log(3.0)), 0.0f}};
  const TeacherLogits same{0, 1, 2, {0.0f, static_cast<float>(std::log(3.0))}};
  const std::vector<const TeacherLogits*> t_swapped{&swapped}, t_same{&same};
  expect("KL example", distillation_loss(g, student, t_swapped, plain).item(), 0.5493, kHandValueTol);
  for (const double temp : {0.5, 1.0, 2.0, 8.0}) {
    DistillConfig c = plain;
    c.temperature = temp;
    expect("identity T=" + fmt("%g", temp), distillation_loss(g, student, t_same, c).item(), 0, kHandValueTol);
  }
  DistillConfig hot = plain;
  hot.temperature = 1e6;
  const double hot_kl = distillation_loss(g, student, t_swapped, hot).item();
  if (!(hot_kl < kKlHotLimit)) bad.push_back("T=1e6 KL " + fmt("%.3g", hot_kl));

  // composition: task 0.5, distill 0.25 -> 0.75
  const double a = -std::log(std::exp(0.5) - 1.0);
  auto kl_for = [&](double b) {
    const auto p = dt::direct_softmax(std::vector<double>{0.0, a}, 1.0);
    const auto q = dt::direct_softmax(std::vector<double>{0.0, b}, 1.0);
    return dt::direct_kl(p, q);
  };
  double lo = a, hi = a + 20;
  for (int i = 0; i < 200; ++i) ((kl_for(0.5 * (lo + hi)) < 0.25) ? lo : hi) = 0.5 * (lo + hi);
  Sentence s;
  s.id = 0;
  s.tokens = {"x"};
  s.gold_tags = TagSequence{1};
  const TeacherLogits tuned{0, 1, 2, {0.0f, static_cast<float>(0.5 * (lo + hi))}};
  const std::vector<TrainingExample> ex{{&s, true, &tuned}};
  const auto combined = combined_loss(g, one_sentence({0.0, a}, 1, 2), ex, TaggerConfig{},
                                      TaggerParams<double>{}, [&] {
                                        DistillConfig c = plain;
                                        c.task_weight = c.distill_weight = 1;
                                        return c;
                                      }());
  expect("0.5 + 0.25", combined.breakdown.total, 0.75, kHandValueTol);

  // weighted-sum identity over an instrumented two-epoch run
  auto task = dt::tiny_task(60, 31);
  const auto& all = task.corpus.sentences;
  const std::vector<Sentence> labeled(all.begin(), all.begin() + 15);
  const std::vector<Sentence> unlabeled(all.begin() + 15, all.begin() + 45);
  const std::vector<Sentence> dev(all.begin() + 45, all.end());
  const auto teacher = dt::random_teacher(all, task.corpus.tagset, 8);
  DistillConfig dc;
  dc.epochs = 2;
  dc.batch_size = 8;
  dc.task_weight = 0.6;
  dc.distill_weight = 1.7;
  std::size_t batches = 0;
  double worst = 0;
  TrainOptions options;
  options.observer = [&](std::size_t, std::size_t, const LossBreakdown& l) {
    ++batches;
    worst = std::max(worst, std::abs(l.total - (dc.task_weight * l.task_component +
                                                dc.distill_weight * l.distill_component)));
  };
  train_distilled(labeled, unlabeled, &teacher, dev, task.vocab, task.corpus.tagset, dc, task.tagger,
                  options);
  if (!(worst < kCompositionTol)) bad.push_back("composition " + fmt("%.2e", worst));

  std::string detail = "ln9/0.5493/T=1e6/0.75 checks, composition max err " + fmt("%.2e", worst) +
                       " over " + std::to_string(batches) + " batches";
  for (const auto& b : bad) detail += "; bad " + b;
  return {bad.empty(), detail};
}

// ---------------------------------------------------------------- 4
Outcome kl_properties() {
  Rng rng(77);
  double most_negative = 0, worst_equal = 0, worst_hot = 0;
  for (int n = 0; n < 1000; ++n) {
    const std::size_t k = 2 + rng.below(8);
    const std::size_t rows = 1 + rng.below(3);
    Tensor<double> zs({rows, k}), zt({rows, k});
    for (auto& v : zs.values()) v = rng.uniform(-6, 6);
    for (auto& v : zt.values()) v = rng.uniform(-6, 6);
    const std::vector<std::uint8_t> mask(rows, 1);
    const double temperature = std::exp(rng.uniform(std::log(0.25), std::log(8.0)));
    Graph<double> g(false);
    for (const auto dir : {KlDirection::kStudentTeacher, KlDirection::kTeacherStudent}) {
      most_negative = std::min(most_negative, g.kl_from_logits(zs, zt, temperature, mask, dir).item());
      worst_equal = std::max(worst_equal, std::abs(g.kl_from_logits(zs, zs, temperature, mask, dir).item()));
      worst_hot = std::max(worst_hot, g.kl_from_logits(zs, zt, 1e6, mask, dir).item());
    }
  }
  return {most_negative >= -kKlNegativeTol && worst_equal <= kKlEqualTol && worst_hot < kKlHotLimit,
          "min KL " + fmt("%.2e", most_negative) + ", max |KL(z,z)| " + fmt("%.2e", worst_equal) +
              ", max KL at T=1e6 " + fmt("%.2e", worst_hot)};
}

// ---------------------------------------------------------------- 5
Outcome scorer() {
  auto spans = [](const std::vector<std::string>& t) { return extract_spans(std::span<const std::string>(t)); };
  const std::vector<SpanSet> gold{spans({"B-PER", "I-PER", "O", "B-LOC"})};
  const std::vector<SpanSet> pred{spans({"B-PER", "I-PER", "O", "B-ORG"})};
  const auto f = span_f1(gold, pred);
  const bool fixture = f.precision == 50.0 && f.recall == 50.0 && f.f1 == 50.0;

  // token gold predicted; tags read verbatim
  std::ifstream in(std::string(DISTILTAG_TEST_DATA) + "/golden_20.txt");
  std::vector<SpanSet> g20, p20;
  std::vector<std::string> gt, pt;
  auto flush = [&] {
    if (!gt.empty()) {
      g20.push_back(spans(gt));
      p20.push_back(spans(pt));
    }
    gt.clear();
    pt.clear();
  };
  for (std::string line; std::getline(in, line);) {
    std::istringstream cols(line);
    std::string tok, a, b;
    if (!(cols >> tok >> a >> b)) {
      flush();
      continue;
    }
    gt.push_back(a);
    pt.push_back(b);
  }
  flush();
  const auto r = span_f1(g20, p20);
  // Hand tally of the file.
  const bool golden = g20.size() == 20 && r.gold == 23 && r.predicted == 22 && r.correct == 12 &&
                      r.repairs == 2 && std::abs(r.precision - 1200.0 / 22) < kScoreTol &&
                      std::abs(r.recall - 1200.0 / 23) < kScoreTol &&
                      std::abs(r.f1 - 2400.0 / 45) < kScoreTol && r.per_type.at("PER").correct == 4 &&
                      r.per_type.at("LOC").correct == 2 && r.per_type.at("ORG").correct == 3 &&
                      r.per_type.at("MISC").correct == 3;
  return {fixture && golden, "fixture P/R/F1 " + fmt("%.1f", f.precision) + "/" + fmt("%.1f", f.recall) +
                                 "/" + fmt("%.1f", f.f1) + ", golden F1 " + fmt("%.4f", r.f1) +
                                 " (hand 53.3333) " + (golden ? "match" : "MISMATCH")};
}

// ---------------------------------------------------------------- 6
Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticConfig sc;
  sc.sentences = 50;
  sc.seed = 606;
  const auto corpus = generate_corpus(sc);
  const auto vocab = build_vocab(corpus.sentences);
  const DistillConfig dc;  // 20 epochs, batch 32, lr 0.001, dropout 0.5
  // Dev set = training set, so the per-epoch dev F1 is the training-set F1.
  const auto r = train_baseline(corpus.sentences, corpus.sentences, vocab, corpus.tagset, dc, TaggerConfig{});
  const double secs = seconds_since(t0);
  return {r.report.best_dev_f1 == 100.0 && secs < kBudget6,
          "best training-set F1 " + fmt("%.2f", r.report.best_dev_f1) + " (epoch " +
              std::to_string(r.report.best_epoch) + ") after " + std::to_string(dc.epochs) + " epochs, " +
              fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------- 7
TaggerConfig desk_student() {
  TaggerConfig c;
  c.word_dim = 50;
  c.char_dim = 16;
  c.char_filters = 16;
  c.lstm_hidden = 50;
  return c;
}

Outcome distillation_efficacy() {
  const auto t0 = std::chrono::steady_clock::now();
  auto corpus_of = [](std::size_t n, std::uint64_t seed) {
    SyntheticConfig sc;
    sc.sentences = n;
    sc.seed = seed;
    return generate_corpus(sc);
  };
  auto pool = corpus_of(2000, 701);
  auto dev = corpus_of(500, 702);
  auto test = corpus_of(1000, 703);
  std::vector<ParsedCorpus*> all{&pool, &dev, &test};
  const auto tagset = unify_tagsets(all);
  const auto vocab = build_vocab(pool.sentences);

  // Teacher: the default (teacher-sized) tagger on all 2000 labeled sentences.
  DistillConfig teacher_cfg;
  teacher_cfg.seed = 70;
  const auto teacher_model =
      train_baseline(pool.sentences, dev.sentences, vocab, tagset, teacher_cfg, TaggerConfig{}).model;
  const double teacher_f1 = evaluate(teacher_model, std::span<const Sentence>(test.sentences)).f1;
  const auto logits = export_teacher_logits(teacher_model, pool.sentences, "teacher-sized student");
  const double teacher_secs = seconds_since(t0);

  const std::vector<std::size_t> sizes{100};
  const auto splits = sample_splits(pool.sentences, sizes, 5, 71);
  const std::vector<Variant> variants{parse_variant("baseline-softmax"), parse_variant("distilled-softmax")};
  GridConfig config;
  config.tagger = desk_student();
  config.distill.seed = 72;
  const auto report = run_experiment_grid(pool.sentences, splits, variants, &logits, dev.sentences,
                                          test.sentences, vocab, tagset, config);
  double baseline = 0, distilled = 0;
  for (const auto& s : report.summary) (s.variant == "baseline-softmax" ? baseline : distilled) = s.mean;
  const double secs = seconds_since(t0);
  return {!report.partial && distilled > baseline && secs < kBudget7,
          "mean test F1 over 5 seeds: distilled " + fmt("%.2f", distilled) + " vs baseline " +
              fmt("%.2f", baseline) + " (teacher " + fmt("%.2f", teacher_f1) + ", trained in " +
              fmt("%.0f", teacher_secs) + " s), " + fmt("%.0f", secs) + " s total"};
}

// ---------------------------------------------------------------- 8
Outcome protocol() {
  SyntheticConfig sc;
  sc.sentences = 14987;
  const auto corpus = generate_corpus(sc);
  const std::vector<std::size_t> sizes{150, 300, 750, 1500, 3000};
  const auto splits = sample_splits(corpus.sentences, sizes, 20, 42);
  const auto again = sample_splits(corpus.sentences, sizes, 20, 42);
  bool partitions = splits.size() == 100;
  std::set<std::vector<std::size_t>> distinct;
  for (const auto& s : splits) {
    std::vector<char> seen(corpus.sentences.size(), 0);
    for (const auto i : s.labeled_ids) seen[i]++;
    for (const auto i : s.unlabeled_ids) seen[i]++;
    partitions &= s.labeled_ids.size() == s.size &&
                  std::all_of(seen.begin(), seen.end(), [](char c) { return c == 1; });
    distinct.insert(s.labeled_ids);
  }
  std::ostringstream m1, m2;
  write_split_manifest(m1, splits);
  write_split_manifest(m2, again);
  const bool deterministic = m1.str() == m2.str();
  return {partitions && distinct.size() == 100 && deterministic,
          std::to_string(splits.size()) + " splits, partitions " + (partitions ? "ok" : "BROKEN") +
              ", distinct labeled sets " + std::to_string(distinct.size()) + ", re-run " +
              (deterministic ? "identical" : "DIFFERS")};
}

// ---------------------------------------------------------------- 9
Outcome parameter_budget() {
  TaggerConfig c;
  c.word_vocab_size = 25000;
  c.char_vocab_size = 100;
  c.num_tags = 9;
  const auto n = count_params(c);
  const auto actual = TaggerParams<float>::init(c, 1).count();
  c.classifier = Classifier::kCrf;
  const auto n_crf = count_params(c);
  return {n >= 2800000 && n <= 3600000 && n_crf <= 3600000 && actual == n,
          "softmax " + std::to_string(n) + ", crf " + std::to_string(n_crf) + " (tensors " +
              std::to_string(actual) + ")"};
}

// ---------------------------------------------------------------- 10
Outcome benchmark() {
  const auto t0 = std::chrono::steady_clock::now();
  SyntheticConfig sc;
  sc.sentences = 3000;
  sc.seed = 1001;
  const auto corpus = generate_corpus(sc);
  TaggerConfig c;
  const auto vocab = build_vocab(corpus.sentences);
  c.word_vocab_size = vocab.word_count();
  c.char_vocab_size = vocab.char_count();
  c.num_tags = corpus.tagset.size();
  Model<float> softmax{c, TaggerParams<float>::init(c, 5), vocab, corpus.tagset};
  // Same body with a CRF output layer.
  TaggerConfig crf_cfg = c;
  crf_cfg.classifier = Classifier::kCrf;
  Model<float> crf{crf_cfg, softmax.params.clone(), vocab, corpus.tagset};
  crf.params.transitions = TaggerParams<float>::init(crf_cfg, 5).transitions;

  BenchConfig config;  // batch sizes 1, 32, 64, 128
  config.warmup_passes = 1;
  config.measured_passes = 5;
  const std::vector<BenchSubject> subjects{{"softmax", &softmax}, {"crf", &crf}};
  const auto results = bench_models(subjects, corpus.sentences, &corpus.tagset, config);
  const auto& s = results[0];
  const auto& r = results[1];
  bool batching = s.row(128).sentences_per_second >= s.row(1).sentences_per_second &&
                  r.row(128).sentences_per_second >= r.row(1).sentences_per_second;
  bool ordering = true;
  std::string ratios;
  for (const auto bs : config.batch_sizes) {
    ordering &= s.row(bs).seconds <= r.row(bs).seconds;
    ratios += (ratios.empty() ? "" : " ") + std::to_string(bs) + ":" + fmt("%.3f", speedup(s, r, bs));
  }
  const std::vector<BenchResult> self{s};
  const auto table = speedup_table(self, "softmax");
  bool reflexive = format_speedup_table(table).find("1.0×") != std::string::npos;
  for (const auto& row : table.ratios) reflexive &= row == std::vector<double>{1.0};
  const double secs = seconds_since(t0);
  return {batching && ordering && reflexive && secs < kBudget10,
          "sent/s softmax b1 " + fmt("%.0f", s.row(1).sentences_per_second) + " b128 " +
              fmt("%.0f", s.row(128).sentences_per_second) + "; crf/softmax time ratio " + ratios +
              "; self ratio " + (reflexive ? "1.0x" : "WRONG") + ", " + fmt("%.0f", secs) + " s"};
}

// ---------------------------------------------------------------- 11
Outcome persistence() {
  auto task = dt::tiny_task(20, 11, Classifier::kCrf);
  Model<float> model{task.tagger, TaggerParams<float>::init(task.tagger, 4), task.vocab, task.corpus.tagset};
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = (dir / "acceptance_roundtrip.cdt").string();
  save_checkpoint(model, path);
  const auto loaded = load_checkpoint(path);
  bool identical = loaded.config == model.config;
  const auto a = model.params.named(), b = loaded.params.named();
  identical &= a.size() == b.size();
  for (std::size_t i = 0; identical && i < a.size(); ++i) {
    identical &= a[i].second.size() == b[i].second.size() &&
                 std::memcmp(a[i].second.data(), b[i].second.data(), a[i].second.size() * sizeof(float)) == 0;
  }
  const auto path2 = (dir / "acceptance_roundtrip2.cdt").string();
  save_checkpoint(loaded, path2);
  auto bytes = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  identical &= bytes(path) == bytes(path2);

  bool fixture = true;
  try {
    const auto corpus = read_conll_file(std::string(DISTILTAG_TEST_DATA) + "/teacher_fixture.conll");
    const auto store = TeacherLogitsStore::load(std::string(DISTILTAG_TEST_DATA) + "/teacher_fixture.jsonl");
    store.check_alignment(corpus.tagset);
    store.check_coverage(corpus.sentences);
  } catch (const Error&) {
    fixture = false;
  }

  bool rejected = false;
  auto corrupt = bytes(path);
  corrupt[1] = '?';
  {
    std::ofstream out(path, std::ios::binary);
    out << corrupt;
  }
  try {
    load_checkpoint(path);
  } catch (const Error& e) {
    rejected = e.kind() == ErrorKind::kFormat;
  }
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
  return {identical && fixture && rejected,
          std::string("round trip ") + (identical ? "bit-identical" : "DIFFERS") + ", fixture coverage " +
              (fixture ? "ok" : "FAILED") + ", bad magic " + (rejected ? "rejected" : "ACCEPTED")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"CRF oracle equivalence", crf_oracle},
      {"gradient fidelity", gradient_fidelity},
      {"loss-formula conformance", loss_formulas},
      {"KL/temperature properties", kl_properties},
      {"scorer conformance", scorer},
      {"overfit check", overfit},
      {"distillation efficacy", distillation_efficacy},
      {"protocol conformance", protocol},
      {"parameter budget", parameter_budget},
      {"benchmark properties", benchmark},
      {"persistence", persistence},
  };
  std::set<std::size_t> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(static_cast<std::size_t>(std::stoul(argv[i])));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!wanted.empty() && !wanted.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("criterion %2zu %s  %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
