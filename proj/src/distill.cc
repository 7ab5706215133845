#include "distiltag/distill.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "distiltag/checkpoint.h"
#include "distiltag/error.h"
#include "distiltag/eval.h"
#include "distiltag/optim.h"

namespace distiltag {

void DistillConfig::validate() const {
  if (!(temperature > 0)) fail(ErrorKind::kConfig, "temperature must be positive");
  if (task_weight < 0 || distill_weight < 0) fail(ErrorKind::kConfig, "loss weights must be >= 0");
  if (task_weight == 0 && distill_weight == 0) {
    fail(ErrorKind::kConfig, "task and distillation weights cannot both be zero");
  }
  if (epochs == 0) fail(ErrorKind::kConfig, "epochs must be positive");
  if (batch_size == 0) fail(ErrorKind::kConfig, "batch size must be positive");
  if (!(lr > 0)) fail(ErrorKind::kConfig, "learning rate must be positive");
  if (!(dropout >= 0 && dropout < 1)) fail(ErrorKind::kConfig, "dropout must lie in [0, 1)");
  if (!(labeled_fraction > 0 && labeled_fraction < 1)) {
    fail(ErrorKind::kConfig, "labeled fraction must lie in (0, 1)");
  }
}

nlohmann::ordered_json to_json(const DistillConfig& c) {
  nlohmann::ordered_json j;
  j["temperature"] = c.temperature;
  j["task_weight"] = c.task_weight;
  j["distill_weight"] = c.distill_weight;
  j["scale_by_t2"] = c.scale_by_t2;
  j["kl_direction"] = c.kl_direction == KlDirection::kStudentTeacher ? "student-teacher"
                                                                     : "teacher-student";
  j["mixing"] = c.mixing == BatchMixing::kPool ? "pool" : "fixed-ratio";
  j["labeled_fraction"] = c.labeled_fraction;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["dropout"] = c.dropout;
  j["seed"] = c.seed;
  return j;
}

TagSequence pseudo_labels(const TeacherLogits& teacher) {
  TagSequence tags(teacher.rows);
  for (std::size_t t = 0; t < teacher.rows; ++t) {
    const auto row = teacher.row(t);
    tags[t] = static_cast<TagId>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return tags;
}

TaskTarget make_task_target(const std::optional<TagSequence>& gold,
                            const std::optional<TagSequence>& pseudo) {
  if (gold.has_value() == pseudo.has_value()) {
    fail(ErrorKind::kContract, gold ? "both gold and pseudo targets supplied"
                                    : "neither gold nor pseudo target supplied");
  }
  if (gold) return {TargetSource::kGold, *gold};
  return {TargetSource::kPseudo, *pseudo};
}

TaskTarget select_task_target(const TrainingExample& ex) {
  if (ex.labeled) {
    if (!ex.sentence->gold_tags) {
      fail(ErrorKind::kContract, "labeled sentence " + std::to_string(ex.sentence->id) +
                                     " has no gold tags");
    }
    return make_task_target(ex.sentence->gold_tags, std::nullopt);
  }
  if (!ex.teacher) {
    fail(ErrorKind::kCoverage, "unlabeled sentence " + std::to_string(ex.sentence->id) +
                                   " has no teacher logits");
  }
  return make_task_target(std::nullopt, pseudo_labels(*ex.teacher));
}

template <typename T>
Tensor<T> task_loss(Graph<T>& g, const EmissionBatch<T>& student,
                    std::span<const TaskTarget> targets, Classifier classifier,
                    const Tensor<T>& transitions) {
  if (targets.size() != student.batch) {
    fail(ErrorKind::kContract, "task_loss: " + std::to_string(targets.size()) +
                                   " targets for a batch of " + std::to_string(student.batch));
  }
  for (std::size_t b = 0; b < student.batch; ++b) {
    if (targets[b].tags.size() != student.lengths[b]) {
      fail(ErrorKind::kDimension, "task_loss: target length differs from sentence length");
    }
  }
  if (classifier == Classifier::kCrf) {
    std::vector<SequenceTarget> seqs;
    seqs.reserve(student.batch);
    for (std::size_t b = 0; b < student.batch; ++b) {
      seqs.push_back({student.row(b, 0), student.lengths[b], targets[b].tags});
    }
    return g.crf_nll(student.logits, transitions, seqs);
  }
  std::vector<int> flat(student.batch * student.steps, 0);
  for (std::size_t b = 0; b < student.batch; ++b) {
    for (std::size_t t = 0; t < student.lengths[b]; ++t) flat[student.row(b, t)] = targets[b].tags[t];
  }
  return g.cross_entropy(student.logits, flat, student.mask);
}

template <typename T>
Tensor<T> distillation_loss(Graph<T>& g, const EmissionBatch<T>& student,
                            std::span<const TeacherLogits* const> teacher,
                            const DistillConfig& config) {
  const std::size_t k = student.num_tags();
  if (teacher.size() != student.batch) {
    fail(ErrorKind::kContract, "distillation_loss: teacher batch size differs");
  }
  Tensor<T> teacher_rows(student.logits.shape());
  for (std::size_t b = 0; b < student.batch; ++b) {
    const auto* tl = teacher[b];
    if (!tl) fail(ErrorKind::kCoverage, "distillation_loss: missing teacher logits");
    if (tl->cols != k) {
      fail(ErrorKind::kAlignment, "teacher logits have " + std::to_string(tl->cols) +
                                      " classes, student has " + std::to_string(k));
    }
    if (tl->rows != student.lengths[b]) {
      fail(ErrorKind::kAlignment, "teacher logits for sentence " + std::to_string(tl->sentence_id) +
                                      " have " + std::to_string(tl->rows) + " rows for " +
                                      std::to_string(student.lengths[b]) + " tokens");
    }
    for (std::size_t t = 0; t < tl->rows; ++t) {
      for (std::size_t i = 0; i < k; ++i) {
        teacher_rows.at(student.row(b, t), i) = static_cast<T>(tl->values[t * k + i]);
      }
    }
  }
  const T temperature = static_cast<T>(config.temperature);
  auto kl = g.kl_from_logits(student.logits, teacher_rows, temperature, student.mask,
                             config.kl_direction);
  if (config.scale_by_t2) kl = g.scale(kl, temperature * temperature);
  return kl;
}

template <typename T>
CombinedLoss<T> combined_loss(Graph<T>& g, const EmissionBatch<T>& student,
                              std::span<const TrainingExample> examples,
                              const TaggerConfig& tagger, const TaggerParams<T>& params,
                              const DistillConfig& config) {
  config.validate();
  if (examples.size() != student.batch) {
    fail(ErrorKind::kContract, "combined_loss: example count differs from batch size");
  }
  CombinedLoss<T> out;
  std::vector<std::size_t> missing;
  for (const auto& ex : examples) {
    (ex.labeled ? out.breakdown.labeled_count : out.breakdown.unlabeled_count)++;
    const bool needs_teacher = config.distill_weight > 0 || (!ex.labeled && config.task_weight > 0);
    if (needs_teacher && !ex.teacher) missing.push_back(ex.sentence->id);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) list += (i ? "," : "") + std::to_string(missing[i]);
    fail(ErrorKind::kCoverage, "missing teacher logits for sentences " + list);
  }

  std::vector<std::pair<T, Tensor<T>>> terms;
  if (config.task_weight > 0) {
    std::vector<TaskTarget> targets;
    targets.reserve(examples.size());
    for (const auto& ex : examples) targets.push_back(select_task_target(ex));
    auto task = task_loss(g, student, targets, tagger.classifier, params.transitions);
    out.breakdown.task_component = static_cast<double>(task.item());
    terms.emplace_back(static_cast<T>(config.task_weight), task);
  }
  if (config.distill_weight > 0) {
    std::vector<const TeacherLogits*> teacher;
    teacher.reserve(examples.size());
    for (const auto& ex : examples) teacher.push_back(ex.teacher);
    auto distill = distillation_loss(g, student, teacher, config);
    out.breakdown.distill_component = static_cast<double>(distill.item());
    terms.emplace_back(static_cast<T>(config.distill_weight), distill);
  }
  out.total = g.weighted_sum(terms);
  out.breakdown.total = static_cast<double>(out.total.item());
  return out;
}

std::vector<double> TrainReport::dev_f1() const {
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(e.dev_f1);
  return out;
}

nlohmann::ordered_json to_json(const TrainReport& r) {
  nlohmann::ordered_json j;
  j["best_epoch"] = r.best_epoch;
  j["best_dev_f1"] = r.best_dev_f1;
  j["checkpoint"] = r.checkpoint_path;
  auto epochs = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"dev_f1", e.dev_f1},
                      {"mean_total", e.mean_total},
                      {"mean_task", e.mean_task},
                      {"mean_distill", e.mean_distill},
                      {"batches", e.batches}});
  }
  j["epochs"] = epochs;
  j["config"] = r.config;
  return j;
}

namespace {

// Batches of example indices for one epoch.
std::vector<std::vector<std::size_t>> plan_epoch(std::size_t labeled, std::size_t unlabeled,
                                                 const DistillConfig& config, Rng& rng) {
  std::vector<std::vector<std::size_t>> batches;
  const std::size_t total = labeled + unlabeled;
  if (config.mixing == BatchMixing::kPool || unlabeled == 0) {
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    for (std::size_t i = 0; i < total; i += config.batch_size) {
      const auto end = std::min(total, i + config.batch_size);
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                           order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
  }
  // Fixed ratio: one pass over the unlabeled pool, labeled examples cycle.
  const auto per_labeled = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(config.labeled_fraction * static_cast<double>(config.batch_size))),
      1, std::max<std::size_t>(1, config.batch_size - 1));
  const std::size_t per_unlabeled = std::max<std::size_t>(1, config.batch_size - per_labeled);
  std::vector<std::size_t> lab(labeled), unl(unlabeled);
  std::iota(lab.begin(), lab.end(), std::size_t{0});
  std::iota(unl.begin(), unl.end(), labeled);
  rng.shuffle(unl.begin(), unl.end());
  rng.shuffle(lab.begin(), lab.end());
  std::size_t next_lab = 0;
  for (std::size_t i = 0; i < unl.size(); i += per_unlabeled) {
    std::vector<std::size_t> batch;
    for (std::size_t k = 0; k < per_labeled; ++k) {
      if (next_lab == lab.size()) {
        rng.shuffle(lab.begin(), lab.end());
        next_lab = 0;
      }
      batch.push_back(lab[next_lab++]);
    }
    const auto end = std::min(unl.size(), i + per_unlabeled);
    batch.insert(batch.end(), unl.begin() + static_cast<std::ptrdiff_t>(i),
                 unl.begin() + static_cast<std::ptrdiff_t>(end));
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace

TrainResult train_distilled(std::span<const Sentence> labeled,
                            std::span<const Sentence> unlabeled,
                            const TeacherLogitsStore* teacher, std::span<const Sentence> dev,
                            const Vocab& vocab, const TagSet& tagset,
                            const DistillConfig& config, const TaggerConfig& base,
                            const TrainOptions& options) {
  config.validate();
  if (labeled.empty()) fail(ErrorKind::kConfig, "training needs at least one labeled sentence");
  if (dev.empty()) fail(ErrorKind::kConfig, "training needs a non-empty dev set");
  for (const auto& s : labeled) {
    if (!s.gold_tags) {
      fail(ErrorKind::kContract, "labeled sentence " + std::to_string(s.id) + " has no gold tags");
    }
  }
  const bool needs_teacher =
      config.distill_weight > 0 || (!unlabeled.empty() && config.task_weight > 0);
  if (needs_teacher) {
    if (!teacher) fail(ErrorKind::kConfig, "distillation or unlabeled data requires teacher logits");
    teacher->check_alignment(tagset);
    teacher->check_coverage(labeled);
    teacher->check_coverage(unlabeled);
  }

  TaggerConfig tagger = base;
  tagger.word_vocab_size = vocab.word_count();
  tagger.char_vocab_size = vocab.char_count();
  tagger.num_tags = tagset.size();
  tagger.dropout_rate = config.dropout;
  tagger.validate();

  const Rng root(config.seed);
  Model<float> model{tagger, TaggerParams<float>::init(tagger, root.fork(1).seed()), vocab, tagset};
  if (options.embeddings) load_word_vectors(model.params, *options.embeddings);

  std::vector<TrainingExample> examples;
  examples.reserve(labeled.size() + unlabeled.size());
  for (const auto& s : labeled) {
    examples.push_back({&s, true, teacher ? teacher->find(s.id) : nullptr});
  }
  for (const auto& s : unlabeled) {
    examples.push_back({&s, false, teacher ? teacher->find(s.id) : nullptr});
  }

  AdamState adam;
  adam.lr = config.lr;
  Rng shuffle_rng = root.fork(2);
  Rng dropout_rng = root.fork(3);
  auto params = model.params.list();

  TrainResult result;
  result.report.config = {{"distill", to_json(config)}, {"tagger", config_to_json(tagger)}};
  double best = -1;
  TaggerParams<float> best_params;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    const auto plan = plan_epoch(labeled.size(), unlabeled.size(), config, shuffle_rng);
    for (const auto& batch_idx : plan) {
      std::vector<TrainingExample> batch;
      std::vector<const Sentence*> sentences;
      for (const auto i : batch_idx) {
        batch.push_back(examples[i]);
        sentences.push_back(examples[i].sentence);
      }
      model.params.zero_grad();
      Graph<float> g(true);
      const auto encoded = encode_batch(vocab, sentences, tagger.char_window);
      const auto emissions = forward(g, model.params, tagger, encoded, true, dropout_rng);
      const auto loss = combined_loss(g, emissions, batch, tagger, model.params, config);
      g.backward(loss.total);
      adam_step<float>(params, adam);
      if (options.observer) options.observer(epoch, record.batches, loss.breakdown);
      record.mean_total += loss.breakdown.total;
      record.mean_task += loss.breakdown.task_component;
      record.mean_distill += loss.breakdown.distill_component;
      ++record.batches;
    }
    if (record.batches) {
      const auto n = static_cast<double>(record.batches);
      record.mean_total /= n;
      record.mean_task /= n;
      record.mean_distill /= n;
    }
    record.dev_f1 = evaluate(model, dev).f1;
    if (record.dev_f1 > best) {
      best = record.dev_f1;
      best_params = model.params.clone();
      result.report.best_epoch = epoch;
      result.report.best_dev_f1 = record.dev_f1;
    }
    result.report.epochs.push_back(record);
  }
  model.params = std::move(best_params);
  result.model = std::move(model);
  if (!options.checkpoint_path.empty()) {
    nlohmann::json provenance = options.provenance;
    provenance["train_report"] = to_json(result.report);
    save_checkpoint(result.model, options.checkpoint_path, provenance);
    result.report.checkpoint_path = options.checkpoint_path;
  }
  return result;
}

TrainResult train_baseline(std::span<const Sentence> labeled, std::span<const Sentence> dev,
                           const Vocab& vocab, const TagSet& tagset, const DistillConfig& config,
                           const TaggerConfig& tagger, const TrainOptions& options) {
  DistillConfig baseline = config;
  baseline.distill_weight = 0;
  if (baseline.task_weight == 0) baseline.task_weight = 1;
  return train_distilled(labeled, {}, nullptr, dev, vocab, tagset, baseline, tagger, options);
}

TeacherLogitsStore export_teacher_logits(const Model<float>& teacher,
                                         std::span<const Sentence> sentences,
                                         const std::string& description) {
  TeacherLogitsStore store(teacher.tagset.labels(), description);
  const auto rows = emission_rows(teacher, sentences);
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    store.add({sentences[i].id, sentences[i].size(), teacher.config.num_tags, rows[i]});
  }
  return store;
}

#define DISTILTAG_INSTANTIATE_DISTILL(T)                                                      \
  template Tensor<T> task_loss<T>(Graph<T>&, const EmissionBatch<T>&,                        \
                                  std::span<const TaskTarget>, Classifier, const Tensor<T>&); \
  template Tensor<T> distillation_loss<T>(Graph<T>&, const EmissionBatch<T>&,                \
                                          std::span<const TeacherLogits* const>,              \
                                          const DistillConfig&);                              \
  template CombinedLoss<T> combined_loss<T>(Graph<T>&, const EmissionBatch<T>&,              \
                                            std::span<const TrainingExample>,                 \
                                            const TaggerConfig&, const TaggerParams<T>&,      \
                                            const DistillConfig&);

DISTILTAG_INSTANTIATE_DISTILL(float)
DISTILTAG_INSTANTIATE_DISTILL(double)

#undef DISTILTAG_INSTANTIATE_DISTILL

}  // namespace distiltag
