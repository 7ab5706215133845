#include "distiltag/crf.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "distiltag/error.h"

namespace distiltag {

namespace {

template <typename T>
void check_args(std::span<const T> emissions, std::size_t length, std::size_t num_tags,
                std::span<const T> transitions) {
  if (length == 0) fail(ErrorKind::kEmptySequence, "CRF over an empty sequence");
  if (num_tags == 0) fail(ErrorKind::kDimension, "CRF with zero tags");
  if (emissions.size() < length * num_tags) {
    fail(ErrorKind::kDimension, "CRF emissions hold " + std::to_string(emissions.size()) +
                                    " values, need " + std::to_string(length * num_tags));
  }
  const std::size_t n = num_tags + 2;
  if (transitions.size() != n * n) {
    fail(ErrorKind::kDimension, "CRF transitions hold " + std::to_string(transitions.size()) +
                                    " values, need " + std::to_string(n * n));
  }
}

template <typename T>
void check_tags(std::span<const int> tags, std::size_t length, std::size_t num_tags) {
  if (tags.size() != length) {
    fail(ErrorKind::kDimension, "CRF tag sequence of length " + std::to_string(tags.size()) +
                                    " for " + std::to_string(length) + " emissions");
  }
  for (const int t : tags) {
    if (t < 0 || static_cast<std::size_t>(t) >= num_tags) {
      fail(ErrorKind::kIndex, "CRF tag " + std::to_string(t) + " outside [0, " +
                                  std::to_string(num_tags) + ")");
    }
  }
}

template <typename T>
T log_sum_exp(const T* v, std::size_t n) {
  const T m = *std::max_element(v, v + n);
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

// alpha[t * K + j]: log-sum of scores of all prefixes ending in tag j at t,
// including the start transition.
template <typename T>
std::vector<T> forward_pass(std::span<const T> e, std::size_t length, std::size_t k,
                            std::span<const T> tr) {
  const std::size_t n = k + 2;
  std::vector<T> alpha(length * k);
  std::vector<T> scratch(k);
  for (std::size_t j = 0; j < k; ++j) alpha[j] = tr[crf_start(k) * n + j] + e[j];
  for (std::size_t t = 1; t < length; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < k; ++i) scratch[i] = alpha[(t - 1) * k + i] + tr[i * n + j];
      alpha[t * k + j] = log_sum_exp(scratch.data(), k) + e[t * k + j];
    }
  }
  return alpha;
}

template <typename T>
T finish_partition(const std::vector<T>& alpha, std::size_t length, std::size_t k,
                   std::span<const T> tr) {
  const std::size_t n = k + 2;
  std::vector<T> last(k);
  for (std::size_t j = 0; j < k; ++j) {
    last[j] = alpha[(length - 1) * k + j] + tr[j * n + crf_stop(k)];
  }
  return log_sum_exp(last.data(), k);
}

}  // namespace

template <typename T>
T crf_path_score(std::span<const T> e, std::size_t length, std::size_t k,
                 std::span<const T> tr, std::span<const int> tags) {
  check_args(e, length, k, tr);
  check_tags<T>(tags, length, k);
  const std::size_t n = k + 2;
  T score = tr[crf_start(k) * n + static_cast<std::size_t>(tags[0])];
  for (std::size_t t = 0; t < length; ++t) {
    const auto y = static_cast<std::size_t>(tags[t]);
    score += e[t * k + y];
    if (t + 1 < length) score += tr[y * n + static_cast<std::size_t>(tags[t + 1])];
  }
  score += tr[static_cast<std::size_t>(tags[length - 1]) * n + crf_stop(k)];
  return score;
}

template <typename T>
T crf_log_partition(std::span<const T> e, std::size_t length, std::size_t k,
                    std::span<const T> tr) {
  check_args(e, length, k, tr);
  return finish_partition(forward_pass(e, length, k, tr), length, k, tr);
}

template <typename T>
T crf_nll(std::span<const T> e, std::size_t length, std::size_t k, std::span<const T> tr,
          std::span<const int> tags) {
  return crf_log_partition(e, length, k, tr) - crf_path_score(e, length, k, tr, tags);
}

template <typename T>
T crf_nll_backward(std::span<const T> e, std::size_t length, std::size_t k,
                   std::span<const T> tr, std::span<const int> tags, T scale,
                   std::span<T> d_e, std::span<T> d_tr) {
  check_args(e, length, k, tr);
  check_tags<T>(tags, length, k);
  const std::size_t n = k + 2;
  const auto alpha = forward_pass(e, length, k, tr);
  const T log_z = finish_partition(alpha, length, k, tr);

  std::vector<T> beta(length * k);
  std::vector<T> scratch(k);
  for (std::size_t i = 0; i < k; ++i) beta[(length - 1) * k + i] = tr[i * n + crf_stop(k)];
  for (std::size_t t = length - 1; t-- > 0;) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        scratch[j] = tr[i * n + j] + e[(t + 1) * k + j] + beta[(t + 1) * k + j];
      }
      beta[t * k + i] = log_sum_exp(scratch.data(), k);
    }
  }

  const bool want_e = !d_e.empty();
  const bool want_tr = !d_tr.empty();
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      const T marginal = std::exp(alpha[t * k + j] + beta[t * k + j] - log_z);
      if (want_e) d_e[t * k + j] += scale * marginal;
      if (want_tr && t == 0) d_tr[crf_start(k) * n + j] += scale * marginal;
      if (want_tr && t + 1 == length) d_tr[j * n + crf_stop(k)] += scale * marginal;
    }
    if (want_tr && t + 1 < length) {
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const T pair = std::exp(alpha[t * k + i] + tr[i * n + j] + e[(t + 1) * k + j] +
                                  beta[(t + 1) * k + j] - log_z);
          d_tr[i * n + j] += scale * pair;
        }
      }
    }
  }

  // Subtract the gold path's indicator features.
  T gold = tr[crf_start(k) * n + static_cast<std::size_t>(tags[0])];
  if (want_tr) d_tr[crf_start(k) * n + static_cast<std::size_t>(tags[0])] -= scale;
  for (std::size_t t = 0; t < length; ++t) {
    const auto y = static_cast<std::size_t>(tags[t]);
    gold += e[t * k + y];
    if (want_e) d_e[t * k + y] -= scale;
    if (t + 1 < length) {
      const auto next = static_cast<std::size_t>(tags[t + 1]);
      gold += tr[y * n + next];
      if (want_tr) d_tr[y * n + next] -= scale;
    }
  }
  const auto last = static_cast<std::size_t>(tags[length - 1]);
  gold += tr[last * n + crf_stop(k)];
  if (want_tr) d_tr[last * n + crf_stop(k)] -= scale;
  return log_z - gold;
}

template <typename T>
std::vector<int> viterbi_decode(std::span<const T> e, std::size_t length, std::size_t k,
                                std::span<const T> tr) {
  check_args(e, length, k, tr);
  const std::size_t n = k + 2;
  std::vector<T> delta(k);
  std::vector<T> next(k);
  std::vector<int> backptr(length * k, 0);
  for (std::size_t j = 0; j < k; ++j) delta[j] = tr[crf_start(k) * n + j] + e[j];
  for (std::size_t t = 1; t < length; ++t) {
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t best_i = 0;
      T best = delta[0] + tr[j];
      for (std::size_t i = 1; i < k; ++i) {
        const T cand = delta[i] + tr[i * n + j];
        if (cand > best) {
          best = cand;
          best_i = i;
        }
      }
      next[j] = best + e[t * k + j];
      backptr[t * k + j] = static_cast<int>(best_i);
    }
    std::swap(delta, next);
  }
  std::size_t best_j = 0;
  T best = delta[0] + tr[crf_stop(k)];
  for (std::size_t j = 1; j < k; ++j) {
    const T cand = delta[j] + tr[j * n + crf_stop(k)];
    if (cand > best) {
      best = cand;
      best_j = j;
    }
  }
  std::vector<int> path(length);
  path[length - 1] = static_cast<int>(best_j);
  for (std::size_t t = length - 1; t > 0; --t) {
    path[t - 1] = backptr[t * k + static_cast<std::size_t>(path[t])];
  }
  return path;
}

#define DISTILTAG_INSTANTIATE_CRF(T)                                                           \
  template T crf_path_score<T>(std::span<const T>, std::size_t, std::size_t,                  \
                               std::span<const T>, std::span<const int>);                     \
  template T crf_log_partition<T>(std::span<const T>, std::size_t, std::size_t,               \
                                  std::span<const T>);                                        \
  template T crf_nll<T>(std::span<const T>, std::size_t, std::size_t, std::span<const T>,     \
                        std::span<const int>);                                                \
  template T crf_nll_backward<T>(std::span<const T>, std::size_t, std::size_t,                \
                                 std::span<const T>, std::span<const int>, T, std::span<T>,   \
                                 std::span<T>);                                               \
  template std::vector<int> viterbi_decode<T>(std::span<const T>, std::size_t, std::size_t,   \
                                              std::span<const T>);

DISTILTAG_INSTANTIATE_CRF(float)
DISTILTAG_INSTANTIATE_CRF(double)

#undef DISTILTAG_INSTANTIATE_CRF

}  // namespace distiltag
