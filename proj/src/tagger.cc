#include "distiltag/tagger.h"

#include <algorithm>
#include <cmath>

#include "distiltag/crf.h"
#include "distiltag/error.h"

namespace distiltag {

std::string classifier_name(Classifier c) {
  return c == Classifier::kCrf ? "crf" : "softmax";
}

Classifier parse_classifier(const std::string& name) {
  if (name == "softmax") return Classifier::kSoftmax;
  if (name == "crf") return Classifier::kCrf;
  fail(ErrorKind::kConfig, "unknown classifier '" + name + "' (expected softmax or crf)");
}

void TaggerConfig::validate() const {
  if (word_dim == 0 || char_dim == 0 || char_filters == 0 || char_window == 0 ||
      lstm_hidden == 0) {
    fail(ErrorKind::kConfig, "tagger dimensions must be positive");
  }
  if (char_window % 2 == 0) fail(ErrorKind::kConfig, "char_window must be odd");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    fail(ErrorKind::kConfig, "dropout rate must lie in [0, 1)");
  }
  if (word_vocab_size < 2 || char_vocab_size < 2) {
    fail(ErrorKind::kConfig, "vocab sizes must include the PAD and UNK entries");
  }
  if (num_tags == 0) fail(ErrorKind::kConfig, "tagset is empty");
}

std::size_t count_params(const TaggerConfig& c) {
  const std::size_t input = c.word_dim + c.char_filters;
  const std::size_t h = c.lstm_hidden;
  const std::size_t lstm = input * 4 * h + h * 4 * h + 4 * h;
  std::size_t total = c.word_vocab_size * c.word_dim + c.char_vocab_size * c.char_dim +
                      c.char_window * c.char_dim * c.char_filters + c.char_filters + 2 * lstm +
                      2 * h * c.num_tags + c.num_tags;
  if (c.classifier == Classifier::kCrf) total += (c.num_tags + 2) * (c.num_tags + 2);
  return total;
}

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng rng) {
  Tensor<T> t(std::move(shape), true);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
Tensor<T> zero_tensor(Shape shape) {
  return Tensor<T>(std::move(shape), true);
}

template <typename T>
LstmParams<T> init_lstm(std::size_t input, std::size_t hidden, const Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmParams<T> p;
  p.w_input = uniform_tensor<T>({input, 4 * hidden}, bound, rng.fork(1));
  p.w_hidden = uniform_tensor<T>({hidden, 4 * hidden}, bound, rng.fork(2));
  p.bias = zero_tensor<T>({4 * hidden});
  for (std::size_t k = hidden; k < 2 * hidden; ++k) p.bias.values()[k] = T{1};
  return p;
}

template <typename T>
LstmParams<T> clone_lstm(const LstmParams<T>& p) {
  return {p.w_input.clone(), p.w_hidden.clone(), p.bias.clone()};
}

template <typename To, typename From>
LstmParams<To> convert_lstm(const LstmParams<From>& p) {
  return {convert<To>(p.w_input), convert<To>(p.w_hidden), convert<To>(p.bias)};
}

}  // namespace

template <typename T>
TaggerParams<T> TaggerParams<T>::init(const TaggerConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng root(seed);
  TaggerParams p;
  const double word_bound = std::sqrt(3.0 / static_cast<double>(config.word_dim));
  const double char_bound = std::sqrt(3.0 / static_cast<double>(config.char_dim));
  p.word_embedding =
      uniform_tensor<T>({config.word_vocab_size, config.word_dim}, word_bound, root.fork(1));
  p.char_embedding =
      uniform_tensor<T>({config.char_vocab_size, config.char_dim}, char_bound, root.fork(2));
  for (std::size_t k = 0; k < config.word_dim; ++k) p.word_embedding.at(Vocab::kPad, k) = T{0};
  for (std::size_t k = 0; k < config.char_dim; ++k) p.char_embedding.at(Vocab::kPad, k) = T{0};

  const std::size_t conv_in = config.char_window * config.char_dim;
  p.conv_kernel = uniform_tensor<T>({conv_in, config.char_filters},
                                    1.0 / std::sqrt(static_cast<double>(conv_in)), root.fork(3));
  p.conv_bias = zero_tensor<T>({config.char_filters});

  const std::size_t input = config.word_dim + config.char_filters;
  p.lstm_forward = init_lstm<T>(input, config.lstm_hidden, root.fork(4));
  p.lstm_backward = init_lstm<T>(input, config.lstm_hidden, root.fork(5));

  const std::size_t features = 2 * config.lstm_hidden;
  p.emission_weight = uniform_tensor<T>({features, config.num_tags},
                                        1.0 / std::sqrt(static_cast<double>(features)),
                                        root.fork(6));
  p.emission_bias = zero_tensor<T>({config.num_tags});
  if (config.classifier == Classifier::kCrf) {
    p.transitions = zero_tensor<T>({config.num_tags + 2, config.num_tags + 2});
  }
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> TaggerParams<T>::named() const {
  std::vector<std::pair<std::string, Tensor<T>>> out{
      {"word_embedding", word_embedding},
      {"char_embedding", char_embedding},
      {"conv_kernel", conv_kernel},
      {"conv_bias", conv_bias},
      {"lstm_forward_input", lstm_forward.w_input},
      {"lstm_forward_hidden", lstm_forward.w_hidden},
      {"lstm_forward_bias", lstm_forward.bias},
      {"lstm_backward_input", lstm_backward.w_input},
      {"lstm_backward_hidden", lstm_backward.w_hidden},
      {"lstm_backward_bias", lstm_backward.bias},
      {"emission_weight", emission_weight},
      {"emission_bias", emission_bias},
  };
  if (transitions.defined()) out.emplace_back("transitions", transitions);
  return out;
}

template <typename T>
std::vector<Tensor<T>> TaggerParams<T>::list() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

template <typename T>
std::size_t TaggerParams<T>::count() const {
  std::size_t n = 0;
  for (const auto& t : list()) n += t.size();
  return n;
}

template <typename T>
TaggerParams<T> TaggerParams<T>::clone() const {
  TaggerParams p;
  p.word_embedding = word_embedding.clone();
  p.char_embedding = char_embedding.clone();
  p.conv_kernel = conv_kernel.clone();
  p.conv_bias = conv_bias.clone();
  p.lstm_forward = clone_lstm(lstm_forward);
  p.lstm_backward = clone_lstm(lstm_backward);
  p.emission_weight = emission_weight.clone();
  p.emission_bias = emission_bias.clone();
  if (transitions.defined()) p.transitions = transitions.clone();
  return p;
}

template <typename T>
void TaggerParams<T>::zero_grad() {
  for (auto& t : list()) t.zero_grad();
}

template <typename To, typename From>
TaggerParams<To> convert_params(const TaggerParams<From>& src) {
  TaggerParams<To> p;
  p.word_embedding = convert<To>(src.word_embedding);
  p.char_embedding = convert<To>(src.char_embedding);
  p.conv_kernel = convert<To>(src.conv_kernel);
  p.conv_bias = convert<To>(src.conv_bias);
  p.lstm_forward = convert_lstm<To>(src.lstm_forward);
  p.lstm_backward = convert_lstm<To>(src.lstm_backward);
  p.emission_weight = convert<To>(src.emission_weight);
  p.emission_bias = convert<To>(src.emission_bias);
  if (src.transitions.defined()) p.transitions = convert<To>(src.transitions);
  return p;
}

template <typename T>
void load_word_vectors(TaggerParams<T>& params, const EmbeddingTable& table) {
  auto& emb = params.word_embedding;
  if (table.rows != emb.rows() || table.dim != emb.cols()) {
    fail(ErrorKind::kDimension, "embedding table [" + std::to_string(table.rows) + ", " +
                                    std::to_string(table.dim) + "] does not match " +
                                    shape_string(emb.shape()));
  }
  for (std::size_t r = 0; r < table.rows; ++r) {
    const auto row = table.row(r);
    for (std::size_t k = 0; k < table.dim; ++k) emb.at(r, k) = static_cast<T>(row[k]);
  }
}

EncodedBatch encode_batch(const Vocab& vocab, std::span<const Sentence* const> sentences,
                          std::size_t char_window) {
  EncodedBatch out;
  out.batch = sentences.size();
  std::vector<std::vector<std::vector<int>>> chars(out.batch);
  std::size_t longest_word = 1;
  for (std::size_t b = 0; b < out.batch; ++b) {
    const auto& s = *sentences[b];
    if (s.tokens.empty()) {
      fail(ErrorKind::kEmptySequence, "sentence " + std::to_string(s.id) + " has no tokens");
    }
    out.lengths.push_back(s.size());
    out.steps = std::max(out.steps, s.size());
    for (const auto& tok : s.tokens) {
      chars[b].push_back(vocab.char_ids(tok));
      longest_word = std::max(longest_word, chars[b].back().size());
    }
  }
  const std::size_t pad_left = (char_window - 1) / 2;
  out.char_steps = longest_word + char_window - 1;
  const std::size_t slots = out.steps * out.batch;
  out.word_ids.assign(slots, Vocab::kPad);
  out.char_ids.assign(slots * out.char_steps, Vocab::kPad);
  out.word_char_counts.assign(slots, 0);
  for (std::size_t b = 0; b < out.batch; ++b) {
    const auto& s = *sentences[b];
    for (std::size_t t = 0; t < s.size(); ++t) {
      const std::size_t slot = t * out.batch + b;
      out.word_ids[slot] = vocab.word_id(s.tokens[t]);
      const auto& ids = chars[b][t];
      std::copy(ids.begin(), ids.end(),
                out.char_ids.begin() + static_cast<std::ptrdiff_t>(slot * out.char_steps + pad_left));
      out.word_char_counts[slot] = ids.size();
    }
  }
  return out;
}

template <typename T>
EmissionBatch<T> forward(Graph<T>& g, const TaggerParams<T>& params, const TaggerConfig& config,
                         const EncodedBatch& batch, bool train, Rng& rng) {
  const std::size_t slots = batch.steps * batch.batch;
  const auto words = g.embedding_gather(params.word_embedding, batch.word_ids, Vocab::kPad);
  const auto chars = g.embedding_gather(params.char_embedding, batch.char_ids, Vocab::kPad);
  const auto conv = g.conv1d_over_time(chars, batch.char_steps, params.conv_kernel, params.conv_bias);
  const std::size_t positions = batch.char_steps - config.char_window + 1;
  const auto pooled = g.max_pool_over_time(conv, positions, batch.word_char_counts);
  const std::vector<Tensor<T>> parts{words, pooled};
  auto x = g.dropout(g.concat_cols(parts), config.dropout_rate, rng, train);
  auto h = bilstm(g, x, batch.batch, batch.lengths, params.lstm_forward, params.lstm_backward);
  h = g.dropout(h, config.dropout_rate, rng, train);
  const auto logits_tm = g.linear(h, params.emission_weight, params.emission_bias);

  EmissionBatch<T> out;
  out.batch = batch.batch;
  out.steps = batch.steps;
  out.lengths = batch.lengths;
  std::vector<std::size_t> order(slots);
  out.mask.assign(slots, 0);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t t = 0; t < batch.steps; ++t) {
      order[b * batch.steps + t] = t * batch.batch + b;
      out.mask[b * batch.steps + t] = t < batch.lengths[b] ? 1 : 0;
    }
  }
  out.logits = g.reshape(g.gather_rows(logits_tm, order),
                         {batch.batch, batch.steps, config.num_tags});
  return out;
}

template <typename T>
TagSequence decode(const TaggerConfig& config, const TaggerParams<T>& params,
                   std::span<const T> emissions, std::size_t length) {
  const std::size_t k = config.num_tags;
  if (config.classifier == Classifier::kCrf) {
    return viterbi_decode<T>(emissions, length, k, params.transitions.values());
  }
  TagSequence tags(length);
  for (std::size_t t = 0; t < length; ++t) {
    const T* row = emissions.data() + t * k;
    tags[t] = static_cast<TagId>(std::max_element(row, row + k) - row);
  }
  return tags;
}

template <typename T>
std::vector<std::vector<T>> emission_rows(const Model<T>& model,
                                          std::span<const Sentence> sentences,
                                          std::size_t batch_size) {
  if (batch_size == 0) fail(ErrorKind::kConfig, "batch size must be positive");
  std::vector<std::vector<T>> out;
  out.reserve(sentences.size());
  Rng unused(0);
  const std::size_t k = model.config.num_tags;
  for (std::size_t begin = 0; begin < sentences.size(); begin += batch_size) {
    const std::size_t end = std::min(sentences.size(), begin + batch_size);
    std::vector<const Sentence*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&sentences[i]);
    const auto encoded = encode_batch(model.vocab, ptrs, model.config.char_window);
    Graph<T> g(false);
    const auto em = forward(g, model.params, model.config, encoded, false, unused);
    for (std::size_t b = 0; b < em.batch; ++b) {
      const T* src = em.logits.data() + em.row(b, 0) * k;
      out.emplace_back(src, src + em.lengths[b] * k);
    }
  }
  return out;
}

template <typename T>
std::vector<TagSequence> predict(const Model<T>& model, std::span<const Sentence> sentences,
                                 std::size_t batch_size) {
  if (batch_size == 0) fail(ErrorKind::kConfig, "batch size must be positive");
  std::vector<TagSequence> out;
  out.reserve(sentences.size());
  Rng unused(0);
  const std::size_t k = model.config.num_tags;
  for (std::size_t begin = 0; begin < sentences.size(); begin += batch_size) {
    const std::size_t end = std::min(sentences.size(), begin + batch_size);
    std::vector<const Sentence*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&sentences[i]);
    const auto encoded = encode_batch(model.vocab, ptrs, model.config.char_window);
    Graph<T> g(false);
    const auto em = forward(g, model.params, model.config, encoded, false, unused);
    for (std::size_t b = 0; b < em.batch; ++b) {
      out.push_back(decode<T>(model.config, model.params,
                              em.logits.values().subspan(em.row(b, 0) * k, em.lengths[b] * k),
                              em.lengths[b]));
    }
  }
  return out;
}

#define DISTILTAG_INSTANTIATE_TAGGER(T)                                                        \
  template struct TaggerParams<T>;                                                             \
  template void load_word_vectors<T>(TaggerParams<T>&, const EmbeddingTable&);                 \
  template EmissionBatch<T> forward<T>(Graph<T>&, const TaggerParams<T>&, const TaggerConfig&, \
                                       const EncodedBatch&, bool, Rng&);                       \
  template TagSequence decode<T>(const TaggerConfig&, const TaggerParams<T>&,                 \
                                 std::span<const T>, std::size_t);                             \
  template std::vector<TagSequence> predict<T>(const Model<T>&, std::span<const Sentence>,     \
                                               std::size_t);                                   \
  template std::vector<std::vector<T>> emission_rows<T>(const Model<T>&,                      \
                                                        std::span<const Sentence>, std::size_t);

DISTILTAG_INSTANTIATE_TAGGER(float)
DISTILTAG_INSTANTIATE_TAGGER(double)

#undef DISTILTAG_INSTANTIATE_TAGGER

template TaggerParams<float> convert_params<float, double>(const TaggerParams<double>&);
template TaggerParams<double> convert_params<double, float>(const TaggerParams<float>&);
template TaggerParams<float> convert_params<float, float>(const TaggerParams<float>&);

}  // namespace distiltag
