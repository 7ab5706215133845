#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "distiltag/tensor.h"

namespace distiltag {

// Linear-chain CRF scoring over a single sequence.
//
// Emissions are row-major [length, K]. Transitions are [K + 2, K + 2] where
// entry (i, j) scores moving from tag i to tag j; index K is the virtual start
// state and K + 1 the virtual stop state. A path y_1..y_L scores
//   trans(start, y_1) + sum_t e_t(y_t) + sum_t trans(y_t, y_t+1) + trans(y_L, stop)
// and logZ is the log-sum-exp of that score over all K^L paths.

inline std::size_t crf_start(std::size_t num_tags) { return num_tags; }
inline std::size_t crf_stop(std::size_t num_tags) { return num_tags + 1; }

template <typename T>
T crf_path_score(std::span<const T> emissions, std::size_t length, std::size_t num_tags,
                 std::span<const T> transitions, std::span<const int> tags);

template <typename T>
T crf_log_partition(std::span<const T> emissions, std::size_t length, std::size_t num_tags,
                    std::span<const T> transitions);

template <typename T>
T crf_nll(std::span<const T> emissions, std::size_t length, std::size_t num_tags,
          std::span<const T> transitions, std::span<const int> tags);

// Returns the NLL and adds scale * d(NLL)/d(.) into the two gradient buffers
// (either may be empty to skip it).
template <typename T>
T crf_nll_backward(std::span<const T> emissions, std::size_t length, std::size_t num_tags,
                   std::span<const T> transitions, std::span<const int> tags, T scale,
                   std::span<T> d_emissions, std::span<T> d_transitions);

// Highest-scoring path. At each backpointer and at the final step ties go to
// the lower tag index.
template <typename T>
std::vector<int> viterbi_decode(std::span<const T> emissions, std::size_t length,
                                std::size_t num_tags, std::span<const T> transitions);

// Tensor conveniences: emissions [L, K], transitions [K + 2, K + 2].
template <typename T>
T crf_log_partition(const Tensor<T>& emissions, const Tensor<T>& transitions) {
  return crf_log_partition<T>(emissions.values(), emissions.rows(), emissions.cols(),
                              transitions.values());
}

template <typename T>
T crf_nll(const Tensor<T>& emissions, const Tensor<T>& transitions, std::span<const int> tags) {
  return crf_nll<T>(emissions.values(), emissions.rows(), emissions.cols(), transitions.values(),
                    tags);
}

template <typename T>
std::vector<int> viterbi_decode(const Tensor<T>& emissions, const Tensor<T>& transitions) {
  return viterbi_decode<T>(emissions.values(), emissions.rows(), emissions.cols(),
                           transitions.values());
}

}  // namespace distiltag
