#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distiltag/data.h"
#include "distiltag/graph.h"
#include "distiltag/tagger.h"
#include "distiltag/teacher_logits.h"
#include "json.hpp"

namespace distiltag {

enum class BatchMixing {
  kPool,        // one shuffled pool of labeled + unlabeled examples
  kFixedRatio,  // every batch holds labeled_fraction labeled examples
};

struct DistillConfig {
  double temperature = 2.0;
  double task_weight = 1.0;
  double distill_weight = 1.0;
  bool scale_by_t2 = true;
  KlDirection kl_direction = KlDirection::kStudentTeacher;
  BatchMixing mixing = BatchMixing::kPool;
  double labeled_fraction = 0.5;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double lr = 0.001;
  double dropout = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::ordered_json to_json(const DistillConfig& config);

struct LossBreakdown {
  double task_component = 0;
  double distill_component = 0;
  double total = 0;
  std::size_t labeled_count = 0;
  std::size_t unlabeled_count = 0;
};

// Argmax per token row, ties to the lower index.
TagSequence pseudo_labels(const TeacherLogits& teacher);

enum class TargetSource { kGold, kPseudo };

struct TaskTarget {
  TargetSource source = TargetSource::kGold;
  TagSequence tags;
};

// Exactly one of the two must be present (kContract otherwise).
TaskTarget make_task_target(const std::optional<TagSequence>& gold,
                            const std::optional<TagSequence>& pseudo);

struct TrainingExample {
  const Sentence* sentence = nullptr;
  bool labeled = false;
  const TeacherLogits* teacher = nullptr;  // may be null when not distilling
};

// Gold tags for labeled examples, teacher pseudo-labels for unlabeled ones.
TaskTarget select_task_target(const TrainingExample& example);

// Token-level cross-entropy (softmax head, mean over real tokens) or CRF
// negative log-likelihood (mean over sentences), against targets[b] for
// sentence b of the batch.
template <typename T>
Tensor<T> task_loss(Graph<T>& g, const EmissionBatch<T>& student,
                    std::span<const TaskTarget> targets, Classifier classifier,
                    const Tensor<T>& transitions);

// Temperature-softened KL between student and teacher token distributions,
// mean over real tokens, times T^2 when scale_by_t2 is set. The teacher is a
// constant.
template <typename T>
Tensor<T> distillation_loss(Graph<T>& g, const EmissionBatch<T>& student,
                            std::span<const TeacherLogits* const> teacher,
                            const DistillConfig& config);

template <typename T>
struct CombinedLoss {
  Tensor<T> total;
  LossBreakdown breakdown;
};

// total = task_weight * task + distill_weight * distill. A term whose weight
// is zero is not evaluated and reports 0.
template <typename T>
CombinedLoss<T> combined_loss(Graph<T>& g, const EmissionBatch<T>& student,
                              std::span<const TrainingExample> examples,
                              const TaggerConfig& tagger, const TaggerParams<T>& params,
                              const DistillConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double dev_f1 = 0;
  double mean_total = 0;
  double mean_task = 0;
  double mean_distill = 0;
  std::size_t batches = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_dev_f1 = 0;
  std::string checkpoint_path;
  nlohmann::ordered_json config;

  std::vector<double> dev_f1() const;
};

nlohmann::ordered_json to_json(const TrainReport& report);

struct TrainResult {
  TrainReport report;
  Model<float> model;  // parameters from the best dev epoch
};

using BatchObserver =
    std::function<void(std::size_t epoch, std::size_t batch, const LossBreakdown& loss)>;

struct TrainOptions {
  const EmbeddingTable* embeddings = nullptr;
  BatchObserver observer;
  std::string checkpoint_path;  // written with the best model when set
  nlohmann::json provenance = nlohmann::json::object();
};

// Mixed labeled/unlabeled training with per-epoch dev selection.
TrainResult train_distilled(std::span<const Sentence> labeled,
                            std::span<const Sentence> unlabeled,
                            const TeacherLogitsStore* teacher, std::span<const Sentence> dev,
                            const Vocab& vocab, const TagSet& tagset,
                            const DistillConfig& config, const TaggerConfig& tagger,
                            const TrainOptions& options = {});

// Same loop with distill_weight = 0 and no unlabeled data.
TrainResult train_baseline(std::span<const Sentence> labeled, std::span<const Sentence> dev,
                           const Vocab& vocab, const TagSet& tagset,
                           const DistillConfig& config, const TaggerConfig& tagger,
                           const TrainOptions& options = {});

// Teacher logits for each sentence from a trained tagger's emission layer.
TeacherLogitsStore export_teacher_logits(const Model<float>& teacher,
                                         std::span<const Sentence> sentences,
                                         const std::string& description);

}  // namespace distiltag
