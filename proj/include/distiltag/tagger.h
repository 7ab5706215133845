#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "distiltag/data.h"
#include "distiltag/graph.h"
#include "distiltag/rng.h"
#include "distiltag/tensor.h"

namespace distiltag {

enum class Classifier { kSoftmax, kCrf };

std::string classifier_name(Classifier c);
Classifier parse_classifier(const std::string& name);

// Topology of the compact tagger: character CNN + word lookup + BiLSTM +
// softmax or CRF output layer.
struct TaggerConfig {
  std::size_t word_dim = 100;
  std::size_t char_dim = 30;
  std::size_t char_filters = 30;
  std::size_t char_window = 3;
  std::size_t lstm_hidden = 200;  // per direction
  Classifier classifier = Classifier::kSoftmax;
  double dropout_rate = 0.5;
  std::size_t word_vocab_size = 0;
  std::size_t char_vocab_size = 0;
  std::size_t num_tags = 0;

  void validate() const;
  bool operator==(const TaggerConfig&) const = default;
};

// Closed-form parameter count for a configuration.
std::size_t count_params(const TaggerConfig& config);

template <typename T>
struct TaggerParams {
  Tensor<T> word_embedding;  // [V_w, word_dim]
  Tensor<T> char_embedding;  // [V_c, char_dim]
  Tensor<T> conv_kernel;     // [window * char_dim, filters]
  Tensor<T> conv_bias;       // [filters]
  LstmParams<T> lstm_forward;
  LstmParams<T> lstm_backward;
  Tensor<T> emission_weight;  // [2H, K]
  Tensor<T> emission_bias;    // [K]
  Tensor<T> transitions;      // [K + 2, K + 2], CRF only

  // Random initialization. Embeddings are uniform in +-sqrt(3 / dim) with the
  // PAD rows zeroed; dense weights are uniform in +-1/sqrt(fan_in); the LSTM
  // forget-gate bias starts at 1.
  static TaggerParams init(const TaggerConfig& config, std::uint64_t seed);

  // Stable (name, tensor) listing; also the checkpoint array order.
  std::vector<std::pair<std::string, Tensor<T>>> named() const;
  std::vector<Tensor<T>> list() const;
  std::size_t count() const;
  TaggerParams clone() const;
  void zero_grad();
};

template <typename To, typename From>
TaggerParams<To> convert_params(const TaggerParams<From>& src);

// Replaces word-embedding rows with pretrained vectors (PAD stays zero).
template <typename T>
void load_word_vectors(TaggerParams<T>& params, const EmbeddingTable& table);

// Token and character ids for a padded batch, time-major: entry t * batch + b
// belongs to step t of sentence b.
struct EncodedBatch {
  std::size_t batch = 0;
  std::size_t steps = 0;       // longest sentence
  std::size_t char_steps = 0;  // longest word + window - 1
  std::vector<std::size_t> lengths;
  std::vector<int> word_ids;
  std::vector<int> char_ids;                 // [steps * batch * char_steps]
  std::vector<std::size_t> word_char_counts;  // characters per token slot
};

EncodedBatch encode_batch(const Vocab& vocab, std::span<const Sentence* const> sentences,
                          std::size_t char_window);

// Emission logits in batch-major layout: row b * steps + t.
template <typename T>
struct EmissionBatch {
  Tensor<T> logits;  // [batch, steps, K]
  std::vector<std::uint8_t> mask;  // [batch * steps]
  std::vector<std::size_t> lengths;
  std::size_t batch = 0;
  std::size_t steps = 0;

  std::size_t num_tags() const { return logits.cols(); }
  std::size_t row(std::size_t b, std::size_t t) const { return b * steps + t; }
};

template <typename T>
EmissionBatch<T> forward(Graph<T>& g, const TaggerParams<T>& params, const TaggerConfig& config,
                         const EncodedBatch& batch, bool train, Rng& rng);

// Decodes one sentence's emission rows: argmax per token (softmax head) or
// Viterbi (CRF head). Ties go to the lower tag index.
template <typename T>
TagSequence decode(const TaggerConfig& config, const TaggerParams<T>& params,
                   std::span<const T> emissions, std::size_t length);

// A trained tagger with everything needed to run it on raw tokens.
template <typename T>
struct Model {
  TaggerConfig config;
  TaggerParams<T> params;
  Vocab vocab;
  TagSet tagset;
};

template <typename T>
std::vector<TagSequence> predict(const Model<T>& model, std::span<const Sentence> sentences,
                                 std::size_t batch_size = 32);

// Per-sentence emission rows [L, K] from an inference pass.
template <typename T>
std::vector<std::vector<T>> emission_rows(const Model<T>& model,
                                          std::span<const Sentence> sentences,
                                          std::size_t batch_size = 32);

}  // namespace distiltag
