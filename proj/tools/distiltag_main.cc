// Command-line entry point: sample-splits, train, distill, eval, predict,
// bench, grid, plus synth and export-logits helpers.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "distiltag/bench.h"
#include "distiltag/checkpoint.h"
#include "distiltag/data.h"
#include "distiltag/distill.h"
#include "distiltag/error.h"
#include "distiltag/eval.h"
#include "distiltag/grid.h"
#include "distiltag/synthetic.h"
#include "distiltag/teacher_logits.h"
#include "json.hpp"

namespace {

using namespace distiltag;

// Flags shared by the training subcommands.
struct TrainFlags {
  std::string labeled;
  std::string unlabeled;
  std::string train;
  std::string manifest;
  std::size_t split = 0;
  std::string dev;
  std::string teacher_logits;
  std::string embeddings;
  std::string out;
  std::string report;
  int column = kLastColumn;
  std::string classifier = "softmax";
  std::string kl_direction = "student-teacher";
  std::string mixing = "pool";
  bool no_t2_scale = false;
  TaggerConfig tagger;
  DistillConfig distill;
};

void add_tagger_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--word-dim", f.tagger.word_dim, "Word embedding size")->capture_default_str();
  cmd->add_option("--char-dim", f.tagger.char_dim, "Character embedding size")->capture_default_str();
  cmd->add_option("--char-filters", f.tagger.char_filters, "Character CNN filters")
      ->capture_default_str();
  cmd->add_option("--char-window", f.tagger.char_window, "Character CNN window (odd)")
      ->capture_default_str();
  cmd->add_option("--lstm-hidden", f.tagger.lstm_hidden, "LSTM units per direction")
      ->capture_default_str();
  cmd->add_option("--classifier", f.classifier, "Token classifier: softmax or crf")
      ->check(CLI::IsMember({"softmax", "crf"}))
      ->capture_default_str();
}

void add_optimizer_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--epochs", f.distill.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch-size", f.distill.batch_size, "Sentences per batch")->capture_default_str();
  cmd->add_option("--lr", f.distill.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--dropout", f.distill.dropout, "Dropout rate")->capture_default_str();
  cmd->add_option("--seed", f.distill.seed, "Seed for initialization, shuffling and dropout")
      ->capture_default_str();
  cmd->add_option("--embeddings", f.embeddings, "Pretrained word vectors (word v1 ... vD)");
  cmd->add_option("--column", f.column, "Tag column (0-based, -1 = last)")->capture_default_str();
}

void add_distill_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--temperature", f.distill.temperature, "Softmax temperature T")
      ->capture_default_str();
  cmd->add_option("--task-weight", f.distill.task_weight, "Weight of the task loss")
      ->capture_default_str();
  cmd->add_option("--distill-weight", f.distill.distill_weight, "Weight of the distillation loss")
      ->capture_default_str();
  cmd->add_flag("--no-t2-scale", f.no_t2_scale, "Do not multiply the distillation loss by T^2");
  cmd->add_option("--kl-direction", f.kl_direction, "student-teacher or teacher-student")
      ->check(CLI::IsMember({"student-teacher", "teacher-student"}))
      ->capture_default_str();
  cmd->add_option("--mixing", f.mixing, "Batch mixing: pool or fixed-ratio")
      ->check(CLI::IsMember({"pool", "fixed-ratio"}))
      ->capture_default_str();
  cmd->add_option("--labeled-fraction", f.distill.labeled_fraction,
                  "Labeled share of each batch with fixed-ratio mixing")
      ->capture_default_str();
}

void resolve(TrainFlags& f) {
  f.tagger.classifier = parse_classifier(f.classifier);
  f.distill.kl_direction = f.kl_direction == "teacher-student" ? KlDirection::kTeacherStudent
                                                               : KlDirection::kStudentTeacher;
  f.distill.mixing = f.mixing == "fixed-ratio" ? BatchMixing::kFixedRatio : BatchMixing::kPool;
  f.distill.scale_by_t2 = !f.no_t2_scale;
}

// Everything a training run reads from disk, aligned to one tagset.
struct TrainingData {
  std::vector<Sentence> labeled;
  std::vector<Sentence> unlabeled;
  std::vector<Sentence> dev;
  TagSet tagset;
  Vocab vocab;
  std::optional<EmbeddingTable> embeddings;
  std::optional<TeacherLogitsStore> teacher;
};

std::vector<std::string> merged_labels(const TagSet& a, const std::vector<std::string>& b) {
  std::vector<std::string> labels = a.labels();
  labels.insert(labels.end(), b.begin(), b.end());
  return labels;
}

TrainingData load_training(const TrainFlags& f, bool distilling) {
  TrainingData d;
  ParsedCorpus labeled;
  ParsedCorpus unlabeled;
  if (!f.manifest.empty()) {
    if (f.train.empty()) fail(ErrorKind::kUsage, "--manifest needs --train (the full training file)");
    if (!f.labeled.empty() || !f.unlabeled.empty()) {
      fail(ErrorKind::kUsage, "use either --train/--manifest or --labeled/--unlabeled, not both");
    }
    auto full = read_conll_file(f.train, f.column);
    std::ifstream in(f.manifest);
    if (!in) fail(ErrorKind::kIo, "cannot open manifest " + f.manifest);
    const auto splits = read_split_manifest(in, full.sentences.size());
    if (f.split >= splits.size()) {
      fail(ErrorKind::kRange, "--split " + std::to_string(f.split) + " but the manifest has " +
                                  std::to_string(splits.size()) + " records");
    }
    const auto& s = splits[f.split];
    labeled = {select_sentences(full.sentences, s.labeled_ids, true), full.tagset};
    if (distilling) unlabeled.sentences = select_sentences(full.sentences, s.unlabeled_ids, false);
  } else {
    if (f.labeled.empty()) fail(ErrorKind::kUsage, "--labeled (or --train with --manifest) is required");
    labeled = read_conll_file(f.labeled, f.column);
    if (distilling && !f.unlabeled.empty()) {
      unlabeled = read_conll_file(f.unlabeled, kTokensOnly);
      // Unlabeled ids continue after the labeled file, matching export-logits
      // run over the two files in the same order.
      for (auto& s : unlabeled.sentences) {
        s.id += labeled.sentences.size();
        s.gold_tags.reset();
      }
    }
  }
  for (const auto& s : labeled.sentences) {
    if (!s.gold_tags) fail(ErrorKind::kFormat, "labeled sentence " + std::to_string(s.id) + " has no tags");
  }
  if (f.dev.empty()) fail(ErrorKind::kUsage, "--dev is required for model selection");
  auto dev = read_conll_file(f.dev, f.column);

  std::vector<ParsedCorpus*> corpora{&labeled, &dev};
  TagSet tagset = unify_tagsets(corpora);
  if (distilling) {
    if (f.teacher_logits.empty()) {
      fail(ErrorKind::kUsage, "distill needs --teacher-logits (see export-logits)");
    }
    d.teacher = TeacherLogitsStore::load(f.teacher_logits);
    const TagSet merged(merged_labels(tagset, d.teacher->tagset()));
    remap_tags(labeled.sentences, tagset, merged);
    remap_tags(dev.sentences, tagset, merged);
    tagset = merged;
  }
  d.tagset = tagset;
  d.labeled = std::move(labeled.sentences);
  d.unlabeled = std::move(unlabeled.sentences);
  d.dev = std::move(dev.sentences);

  std::vector<Sentence> all = d.labeled;
  all.insert(all.end(), d.unlabeled.begin(), d.unlabeled.end());
  if (!f.embeddings.empty()) {
    const auto words = read_embedding_words(f.embeddings);
    d.vocab = build_vocab(all, &words);
    d.embeddings = load_embeddings(f.embeddings, d.vocab, f.tagger.word_dim,
                                   derive_seed(f.distill.seed, 11));
  } else {
    d.vocab = build_vocab(all);
  }
  return d;
}

// Option values of the subcommand that ran, in config-file syntax.
std::string resolved_config(const CLI::App& app) {
  const auto subs = app.get_subcommands();
  return subs.empty() ? app.config_to_str(true, false) : subs.front()->config_to_str(true, false);
}

nlohmann::json provenance(const CLI::App& app, const std::string& command) {
  return {{"command", command}, {"config", resolved_config(app)}};
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path);
  out << text;
}

int run_training(const CLI::App& app, TrainFlags& f, bool distilling, const std::string& command) {
  resolve(f);
  if (!distilling) f.distill.distill_weight = 0;
  f.distill.validate();
  const auto data = load_training(f, distilling);
  TrainOptions options;
  options.embeddings = data.embeddings ? &*data.embeddings : nullptr;
  options.checkpoint_path = f.out;
  options.provenance = provenance(app, command);
  options.observer = [](std::size_t epoch, std::size_t batch, const LossBreakdown& loss) {
    if (batch == 0) {
      std::cerr << "epoch " << epoch << " first batch loss " << loss.total << '\n';
    }
  };
  const auto result =
      distilling ? train_distilled(data.labeled, data.unlabeled, &*data.teacher, data.dev,
                                   data.vocab, data.tagset, f.distill, f.tagger, options)
                 : train_baseline(data.labeled, data.dev, data.vocab, data.tagset, f.distill,
                                  f.tagger, options);
  auto report = to_json(result.report);
  report["resolved_config"] = resolved_config(app);
  for (const auto& e : result.report.epochs) {
    std::cerr << "epoch " << e.epoch << " dev F1 " << e.dev_f1 << '\n';
  }
  std::cerr << "best epoch " << result.report.best_epoch << " dev F1 " << result.report.best_dev_f1
            << '\n';
  write_text(f.report, report.dump(2) + "\n");
  return 0;
}

std::vector<Sentence> read_concatenated(const std::vector<std::string>& paths, int column,
                                        TagSet* tagset_out = nullptr) {
  std::vector<Sentence> all;
  std::vector<ParsedCorpus> corpora;
  for (const auto& p : paths) corpora.push_back(read_conll_file(p, column));
  std::vector<ParsedCorpus*> ptrs;
  for (auto& c : corpora) ptrs.push_back(&c);
  const auto tagset = unify_tagsets(ptrs);
  for (auto& c : corpora) {
    const std::size_t offset = all.size();
    for (auto& s : c.sentences) {
      s.id += offset;
      all.push_back(std::move(s));
    }
  }
  if (tagset_out) *tagset_out = tagset;
  return all;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(item, &used);
      if (used != item.size() || v == 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      fail(ErrorKind::kUsage, "expected a comma-separated list of positive integers, got '" +
                                  text + "'");
    }
  }
  if (out.empty()) fail(ErrorKind::kUsage, "empty size list");
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Compact sequence taggers trained with distillation and pseudo-labels"};
  app.set_config("--config", "", "TOML/INI file with option values (flags override it)");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // sample-splits
  std::string ss_train, ss_sizes = "150,300,750,1500,3000", ss_out;
  std::size_t ss_seeds = 20;
  std::uint64_t ss_seed = 1;
  int ss_column = kLastColumn;
  auto* ss = app.add_subcommand("sample-splits", "Draw labeled/unlabeled splits of a training file");
  ss->add_option("--train", ss_train, "Full training corpus (CoNLL)")->required();
  ss->add_option("--sizes", ss_sizes, "Comma-separated labeled set sizes")->capture_default_str();
  ss->add_option("--seeds", ss_seeds, "Splits per size")->capture_default_str();
  ss->add_option("--seed", ss_seed, "Master seed")->capture_default_str();
  ss->add_option("--column", ss_column, "Tag column (0-based, -1 = last)")->capture_default_str();
  ss->add_option("--out", ss_out, "Manifest path (default stdout)");

  // train
  TrainFlags tf;
  auto* tr = app.add_subcommand("train", "Train a baseline tagger on labeled data only");
  tr->add_option("--labeled", tf.labeled, "Labeled training file (CoNLL)");
  tr->add_option("--train", tf.train, "Full training file, used with --manifest");
  tr->add_option("--manifest", tf.manifest, "Split manifest from sample-splits");
  tr->add_option("--split", tf.split, "Manifest record to use (0-based)")->capture_default_str();
  tr->add_option("--dev", tf.dev, "Development file for model selection")->required();
  tr->add_option("--out", tf.out, "Checkpoint path")->required();
  tr->add_option("--report", tf.report, "Training report path (default stdout)");
  add_tagger_flags(tr, tf);
  add_optimizer_flags(tr, tf);

  // distill
  TrainFlags df;
  auto* di = app.add_subcommand("distill", "Train with teacher distillation and pseudo-labels");
  di->add_option("--labeled", df.labeled, "Labeled training file (CoNLL)");
  di->add_option("--unlabeled", df.unlabeled, "Unlabeled file; tags, if any, are ignored");
  di->add_option("--train", df.train, "Full training file, used with --manifest");
  di->add_option("--manifest", df.manifest, "Split manifest from sample-splits");
  di->add_option("--split", df.split, "Manifest record to use (0-based)")->capture_default_str();
  di->add_option("--dev", df.dev, "Development file for model selection")->required();
  di->add_option("--teacher-logits", df.teacher_logits, "Teacher logits (JSONL)")->required();
  di->add_option("--out", df.out, "Checkpoint path")->required();
  di->add_option("--report", df.report, "Training report path (default stdout)");
  add_tagger_flags(di, df);
  add_optimizer_flags(di, df);
  add_distill_flags(di, df);

  // eval
  std::string ev_model, ev_data, ev_json;
  std::size_t ev_batch = 32;
  int ev_column = kLastColumn;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a tagged file");
  ev->add_option("--model", ev_model, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "Tagged file (CoNLL)")->required();
  ev->add_option("--json", ev_json, "Also write the report as JSON here");
  ev->add_option("--batch-size", ev_batch, "Inference batch size")->capture_default_str();
  ev->add_option("--column", ev_column, "Tag column (0-based, -1 = last)")->capture_default_str();

  // predict
  std::string pr_model, pr_data, pr_out;
  std::size_t pr_batch = 32;
  auto* pr = app.add_subcommand("predict", "Tag a file with a checkpoint");
  pr->add_option("--model", pr_model, "Checkpoint")->required();
  pr->add_option("--data", pr_data, "Input file: one token per line (extra columns ignored)")
      ->required();
  pr->add_option("--out", pr_out, "Output CoNLL path (default stdout)");
  pr->add_option("--batch-size", pr_batch, "Inference batch size")->capture_default_str();

  // bench
  std::vector<std::string> bn_models, bn_data, bn_baselines;
  std::string bn_sizes = "1,32,64,128", bn_threads = "single", bn_external, bn_out;
  std::size_t bn_warmup = 1, bn_passes = 3, bn_workers = 2;
  auto* bn = app.add_subcommand("bench", "Time full inference passes per batch size");
  bn->add_option("--model", bn_models, "Checkpoint, optionally LABEL=PATH (repeatable)")->required();
  bn->add_option("--data", bn_data, "Dataset files, concatenated (repeatable)")->required();
  bn->add_option("--batch-sizes", bn_sizes, "Comma-separated batch sizes")->capture_default_str();
  bn->add_option("--warmup", bn_warmup, "Unmeasured passes per batch size")->capture_default_str();
  bn->add_option("--passes", bn_passes, "Measured passes per batch size (median reported)")
      ->capture_default_str();
  bn->add_option("--threads", bn_threads, "single or pooled")
      ->check(CLI::IsMember({"single", "pooled"}))
      ->capture_default_str();
  bn->add_option("--workers", bn_workers, "Worker threads in pooled mode")->capture_default_str();
  bn->add_option("--baseline", bn_baselines, "Model label(s) to compute speedups against");
  bn->add_option("--external", bn_external, "Externally measured timings (JSONL)");
  bn->add_option("--out", bn_out, "Write per-row JSONL records here");

  // grid
  TrainFlags gf;
  std::string gr_test, gr_variants = "baseline-softmax,baseline-crf,distilled-softmax,distilled-crf";
  std::string gr_out, gr_checkpoints;
  std::size_t gr_workers = 1;
  auto* gr = app.add_subcommand("grid", "Train and score every split x variant cell");
  gr->add_option("--train", gf.train, "Full training file (CoNLL)")->required();
  gr->add_option("--manifest", gf.manifest, "Split manifest from sample-splits")->required();
  gr->add_option("--dev", gf.dev, "Development file")->required();
  gr->add_option("--test", gr_test, "Test file")->required();
  gr->add_option("--teacher-logits", gf.teacher_logits, "Teacher logits covering --train");
  gr->add_option("--variants", gr_variants, "Comma-separated variants")->capture_default_str();
  gr->add_option("--workers", gr_workers, "Cells trained in parallel")->capture_default_str();
  gr->add_option("--checkpoint-dir", gr_checkpoints, "Write one checkpoint per cell here");
  gr->add_option("--out", gr_out, "Per-cell JSONL report (default stdout)");
  add_tagger_flags(gr, gf);
  add_optimizer_flags(gr, gf);
  add_distill_flags(gr, gf);

  // synth
  SyntheticConfig sy_config;
  std::string sy_out;
  auto* sy = app.add_subcommand("synth", "Write a synthetic pattern-entity corpus");
  sy->add_option("--sentences", sy_config.sentences, "Number of sentences")->capture_default_str();
  sy->add_option("--seed", sy_config.seed, "Sentence seed")->capture_default_str();
  sy->add_option("--lexicon-seed", sy_config.lexicon_seed, "Name inventory seed")
      ->capture_default_str();
  sy->add_option("--names-per-type", sy_config.names_per_type, "Names per entity type")
      ->capture_default_str();
  sy->add_option("--neutral-fraction", sy_config.neutral_fraction,
                 "Share of sentences whose context does not reveal the type")
      ->capture_default_str();
  sy->add_option("--out", sy_out, "Output path (default stdout)");

  // export-logits
  std::string ex_model, ex_out, ex_description;
  std::vector<std::string> ex_data;
  std::size_t ex_batch = 32;
  auto* ex = app.add_subcommand("export-logits", "Write a checkpoint's emission logits as teacher logits");
  ex->add_option("--model", ex_model, "Teacher checkpoint")->required();
  ex->add_option("--data", ex_data, "Input files; ids continue across files (repeatable)")->required();
  ex->add_option("--out", ex_out, "Teacher-logits path")->required();
  ex->add_option("--description", ex_description, "Teacher description for the header");
  ex->add_option("--batch-size", ex_batch, "Inference batch size")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << " (run with --help for the flag list)\n";
    return 2;
  }

  if (ss->parsed()) {
    const auto corpus = read_conll_file(ss_train, ss_column);
    const auto sizes = parse_sizes(ss_sizes);
    const auto splits = sample_splits(corpus.sentences, sizes, ss_seeds, ss_seed);
    std::ostringstream out;
    write_split_manifest(out, splits);
    write_text(ss_out, out.str());
    std::cerr << splits.size() << " splits over " << corpus.sentences.size() << " sentences\n";
    return 0;
  }
  if (tr->parsed()) return run_training(app, tf, false, "train");
  if (di->parsed()) return run_training(app, df, true, "distill");

  if (ev->parsed()) {
    const auto model = load_checkpoint(ev_model);
    auto corpus = read_conll_file(ev_data, ev_column);
    for (const auto& s : corpus.sentences) {
      if (!s.gold_tags) fail(ErrorKind::kFormat, "eval data sentence " + std::to_string(s.id) + " has no tags");
    }
    remap_tags(corpus.sentences, corpus.tagset, model.tagset);
    const auto report = evaluate(model, corpus.sentences, ev_batch);
    std::cout << format_report(report);
    if (!ev_json.empty()) {
      auto j = to_json(report);
      j["resolved_config"] = resolved_config(app);
      write_text(ev_json, j.dump(2) + "\n");
    }
    return 0;
  }

  if (pr->parsed()) {
    const auto model = load_checkpoint(pr_model);
    // The input may or may not carry tags; only tokens are read.
    auto corpus = read_conll_file(pr_data, kTokensOnly);
    const auto tags = predict(model, corpus.sentences, pr_batch);
    for (std::size_t i = 0; i < tags.size(); ++i) corpus.sentences[i].gold_tags = tags[i];
    std::ostringstream out;
    write_conll(out, corpus.sentences, model.tagset);
    write_text(pr_out, out.str());
    return 0;
  }

  if (bn->parsed()) {
    BenchConfig config;
    config.batch_sizes = parse_sizes(bn_sizes);
    config.warmup_passes = bn_warmup;
    config.measured_passes = bn_passes;
    config.thread_mode = bn_threads == "pooled" ? ThreadMode::kPooled : ThreadMode::kSingle;
    config.workers = bn_workers;
    TagSet tags;
    const auto data = read_concatenated(bn_data, kLastColumn, &tags);
    std::vector<Model<float>> models;
    std::vector<std::string> labels;
    for (const auto& spec : bn_models) {
      const auto eq = spec.find('=');
      const auto path = eq == std::string::npos ? spec : spec.substr(eq + 1);
      labels.push_back(eq == std::string::npos ? std::filesystem::path(path).stem().string()
                                               : spec.substr(0, eq));
      models.push_back(load_checkpoint(path));
    }
    std::vector<BenchSubject> subjects;
    for (std::size_t i = 0; i < models.size(); ++i) subjects.push_back({labels[i], &models[i]});
    auto results = bench_models(subjects, data, &tags, config);
    if (!bn_out.empty()) {
      std::ofstream out(bn_out);
      if (!out) fail(ErrorKind::kIo, "cannot write " + bn_out);
      write_bench_jsonl(out, results);
    }
    std::cout << format_bench_table(results);
    if (!bn_external.empty()) {
      std::ifstream in(bn_external);
      if (!in) fail(ErrorKind::kIo, "cannot open " + bn_external);
      for (auto& r : read_external_timings(in)) results.push_back(std::move(r));
    }
    if (!bn_baselines.empty()) {
      std::cout << '\n' << format_speedup_table(speedup_table(results, bn_baselines));
    }
    return 0;
  }

  if (gr->parsed()) {
    resolve(gf);
    gf.distill.validate();
    auto train = read_conll_file(gf.train, gf.column);
    auto dev = read_conll_file(gf.dev, gf.column);
    auto test = read_conll_file(gr_test, gf.column);
    std::vector<ParsedCorpus*> corpora{&train, &dev, &test};
    TagSet tagset = unify_tagsets(corpora);
    std::optional<TeacherLogitsStore> teacher;
    if (!gf.teacher_logits.empty()) {
      teacher = TeacherLogitsStore::load(gf.teacher_logits);
      const TagSet merged(merged_labels(tagset, teacher->tagset()));
      for (auto* c : corpora) remap_tags(c->sentences, tagset, merged);
      tagset = merged;
    }
    std::vector<Variant> variants;
    std::stringstream vs(gr_variants);
    for (std::string v; std::getline(vs, v, ',');) variants.push_back(parse_variant(v));
    for (const auto& v : variants) {
      if (v.distilled && !teacher) {
        fail(ErrorKind::kUsage, "variant " + v.name + " needs --teacher-logits");
      }
    }
    std::ifstream in(gf.manifest);
    if (!in) fail(ErrorKind::kIo, "cannot open manifest " + gf.manifest);
    const auto splits = read_split_manifest(in, train.sentences.size());

    std::optional<EmbeddingTable> embeddings;
    Vocab vocab;
    if (!gf.embeddings.empty()) {
      const auto words = read_embedding_words(gf.embeddings);
      vocab = build_vocab(train.sentences, &words);
      embeddings = load_embeddings(gf.embeddings, vocab, gf.tagger.word_dim,
                                   derive_seed(gf.distill.seed, 11));
    } else {
      vocab = build_vocab(train.sentences);
    }
    GridConfig config;
    config.distill = gf.distill;
    config.tagger = gf.tagger;
    config.workers = gr_workers;
    config.checkpoint_dir = gr_checkpoints;
    config.embeddings = embeddings ? &*embeddings : nullptr;
    const auto report =
        run_experiment_grid(train.sentences, splits, variants, teacher ? &*teacher : nullptr,
                            dev.sentences, test.sentences, vocab, tagset, config);
    std::ostringstream out;
    out << nlohmann::ordered_json{{"resolved_config", resolved_config(app)}}.dump() << '\n';
    write_grid_jsonl(out, report);
    write_text(gr_out, out.str());
    if (!gr_out.empty() && gr_out != "-") std::cout << format_grid_table(report);
    else std::cerr << format_grid_table(report);
    for (const auto& c : report.cells) {
      if (!c.ok) std::cerr << "cell " << c.variant << " size " << c.size << " seed " << c.seed_index
                           << " failed: " << c.error << '\n';
    }
    return report.partial ? 1 : 0;
  }

  if (sy->parsed()) {
    const auto corpus = generate_corpus(sy_config);
    std::ostringstream out;
    write_conll(out, corpus.sentences, corpus.tagset);
    write_text(sy_out, out.str());
    return 0;
  }

  if (ex->parsed()) {
    const auto model = load_checkpoint(ex_model);
    const auto data = read_concatenated(ex_data, kTokensOnly);
    const auto store = export_teacher_logits(
        model, data, ex_description.empty() ? ex_model : ex_description);
    store.save(ex_out);
    std::cerr << store.size() << " records written to " << ex_out << '\n';
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const distiltag::Error& e) {
    std::cerr << "error: " << distiltag::error_kind_name(e.kind()) << ": " << e.what() << '\n';
    return e.kind() == distiltag::ErrorKind::kUsage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
}
