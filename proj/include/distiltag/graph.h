#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "distiltag/rng.h"
#include "distiltag/tensor.h"

namespace distiltag {

// Per-sentence view into a [rows, K] emission matrix, used by the CRF loss.
struct SequenceTarget {
  std::size_t row_offset = 0;
  std::size_t length = 0;
  std::vector<int> tags;
};

enum class KlDirection {
  kStudentTeacher,  // KL(student || teacher)
  kTeacherStudent,  // KL(teacher || student)
};

// Reverse-mode tape. Every op computes its forward value immediately and, if
// any operand requires a gradient, records a closure that accumulates into the
// operands' gradient buffers. backward() replays the closures in reverse.
//
// With recording disabled the graph is a plain evaluator: no closures are
// kept and intermediate storage is released as soon as handles drop.
template <typename T>
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  std::size_t tape_size() const { return tape_.size(); }

  // Seeds d(loss)/d(loss) = 1 and runs the tape. `loss` must be a scalar.
  void backward(Tensor<T> loss);

  // ---- linear algebra
  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> scale(const Tensor<T>& a, T factor);
  // x [m, in] * w [in, out] + b [out]
  Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
  // sum_i coeff_i * x_i over equally shaped operands.
  Tensor<T> weighted_sum(std::span<const std::pair<T, Tensor<T>>> terms);

  // ---- shape manipulation
  Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
  Tensor<T> stack_rows(std::span<const Tensor<T>> parts);
  Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count);
  Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count);
  // out[i] = x[index[i]]; gradients scatter-add back.
  Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index);
  Tensor<T> reshape(const Tensor<T>& x, Shape shape);

  // ---- layers
  // Rows of `table` selected by id. Ids must lie in [0, rows); rows equal to
  // `frozen_id` receive no gradient (pass -1 to train every row).
  Tensor<T> embedding_gather(const Tensor<T>& table, std::span<const int> ids,
                             int frozen_id = -1);
  // x holds `n` sequences of `seq_len` rows each, [n * seq_len, C]. The kernel
  // is [window * C, F] (window rows flattened), bias [F]. Output has
  // seq_len - window + 1 rows per sequence.
  Tensor<T> conv1d_over_time(const Tensor<T>& x, std::size_t seq_len,
                             const Tensor<T>& kernel, const Tensor<T>& bias);
  // Column-wise max over the first lengths[n] rows of each block of
  // `seq_len` rows. Empty blocks produce zeros. Ties go to the earliest row.
  Tensor<T> max_pool_over_time(const Tensor<T>& x, std::size_t seq_len,
                               std::span<const std::size_t> lengths = {});
  Tensor<T> tanh(const Tensor<T>& x);
  Tensor<T> sigmoid(const Tensor<T>& x);
  // Inverted dropout. Identity when !train or rate == 0.
  Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool train);
  // Fused LSTM pointwise stage: gates [B, 4H] in (input, forget, candidate,
  // output) order plus c_prev [B, H] -> [B, 2H] holding (h | c).
  Tensor<T> lstm_gates(const Tensor<T>& gates, const Tensor<T>& c_prev);

  // ---- probability and losses (scalar outputs have shape {1})
  Tensor<T> softmax_t(const Tensor<T>& logits, T temperature);
  // Mean over masked rows of sum_i p_i ln(p_i / q_i). q is a constant.
  Tensor<T> kl_divergence(const Tensor<T>& p, const Tensor<T>& q,
                          std::span<const std::uint8_t> mask);
  // Temperature-softened KL computed from logits with log-sum-exp; the teacher
  // side is constant. Same value as softmax_t + kl_divergence without the
  // underflow risk of taking logs of probabilities.
  Tensor<T> kl_from_logits(const Tensor<T>& student_logits, const Tensor<T>& teacher_logits,
                           T temperature, std::span<const std::uint8_t> mask,
                           KlDirection direction = KlDirection::kStudentTeacher);
  // Mean over masked rows of -log softmax(logits)[target].
  Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                          std::span<const std::uint8_t> mask);
  // Mean over sequences of CRF negative log-likelihood. transitions is
  // [K + 2, K + 2] with virtual start (index K) and stop (index K + 1).
  Tensor<T> crf_nll(const Tensor<T>& emissions, const Tensor<T>& transitions,
                    std::span<const SequenceTarget> sequences);

 private:
  Tensor<T> make_output(Shape shape, std::initializer_list<const Tensor<T>*> inputs);
  void record(std::function<void()> fn) { tape_.push_back(std::move(fn)); }
  void check_finite(const Tensor<T>& t, const char* op) const;

  bool recording_;
  std::vector<std::function<void()>> tape_;
};

// The learnable arrays of one LSTM direction.
template <typename T>
struct LstmParams {
  Tensor<T> w_input;   // [D, 4H]
  Tensor<T> w_hidden;  // [H, 4H]
  Tensor<T> bias;      // [4H]

  std::size_t hidden() const { return w_hidden.shape()[0]; }
};

// One LSTM step: returns (h_t, c_t).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell(Graph<T>& g, const Tensor<T>& x_t,
                                          const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                                          const LstmParams<T>& params);

// Bidirectional LSTM over a time-major batch: row t * batch + b of `x` is
// step t of sentence b. Steps at or beyond lengths[b] are padding; the
// right-to-left pass starts at each sentence's own last token. Output is
// [steps * batch, 2H], forward states first.
template <typename T>
Tensor<T> bilstm(Graph<T>& g, const Tensor<T>& x, std::size_t batch,
                 std::span<const std::size_t> lengths, const LstmParams<T>& forward,
                 const LstmParams<T>& backward);

}  // namespace distiltag
