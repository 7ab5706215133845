#include "distiltag/graph.h"

#include <Eigen/Core>
#include <cmath>
#include <sstream>

#include "distiltag/crf.h"

namespace distiltag {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using RowVecMap = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>;

template <typename T>
ConstMatMap<T> as_mat(const Tensor<T>& t) {
  return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
MatMap<T> as_mat(Tensor<T>& t) {
  return MatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
MatMap<T> grad_mat(const Tensor<T>& t) {
  return MatMap<T>(t.grad().data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kDimension, std::string(op) + ": shapes " + shape_string(a.shape()) +
                                    " and " + shape_string(b.shape()) + " differ");
  }
}

template <typename T>
void require_mask(std::span<const std::uint8_t> mask, std::size_t rows, const char* op) {
  if (mask.size() != rows) {
    fail(ErrorKind::kDimension, std::string(op) + ": mask of " + std::to_string(mask.size()) +
                                    " entries for " + std::to_string(rows) + " rows");
  }
}

template <typename T>
Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> flat(const Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.size())};
}

template <typename T>
Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> flat(Tensor<T>& t) {
  return {t.data(), static_cast<Eigen::Index>(t.size())};
}

}  // namespace

// ---------------------------------------------------------------- plumbing

template <typename T>
Tensor<T> Graph<T>::make_output(Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
  bool needs_grad = false;
  if (recording_) {
    for (const auto* in : inputs) needs_grad = needs_grad || in->requires_grad();
  }
  return Tensor<T>(std::move(shape), needs_grad);
}

template <typename T>
void Graph<T>::check_finite(const Tensor<T>& t, const char* op) const {
  for (const T v : t.values()) {
    if (!std::isfinite(v)) {
      fail(ErrorKind::kContract, std::string("non-finite value produced by ") + op);
    }
  }
}

template <typename T>
void Graph<T>::backward(Tensor<T> loss) {
  if (loss.size() != 1) {
    fail(ErrorKind::kDimension, "backward() needs a scalar, got " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.grad()[0] += T{1};
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  tape_.clear();
}

// ---------------------------------------------------------------- algebra

template <typename T>
Tensor<T> Graph<T>::matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    fail(ErrorKind::kDimension, "matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                                    shape_string(b.shape()));
  }
  auto out = make_output({a.rows(), b.cols()}, {&a, &b});
  as_mat(out).noalias() = as_mat(a) * as_mat(b);
  check_finite(out, "matmul");
  if (out.requires_grad()) {
    record([out, a, b]() mutable {
      if (!out.has_grad()) return;
      const auto dout = ConstMatMap<T>(out.grad().data(), static_cast<Eigen::Index>(out.rows()),
                                       static_cast<Eigen::Index>(out.cols()));
      if (a.requires_grad()) grad_mat(a).noalias() += dout * as_mat(std::as_const(b)).transpose();
      if (b.requires_grad()) grad_mat(b).noalias() += as_mat(std::as_const(a)).transpose() * dout;
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto out = make_output(a.shape(), {&a, &b});
  auto o = out.values();
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  check_finite(out, "add");
  if (out.requires_grad()) {
    record([out, a, b]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      for (auto* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->grad();
        for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto out = make_output(a.shape(), {&a, &b});
  auto o = out.values();
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
  check_finite(out, "mul");
  if (out.requires_grad()) {
    record([out, a, b]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      if (a.requires_grad()) {
        auto g = a.grad();
        const auto bv = std::as_const(b).values();
        for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto g = b.grad();
        const auto av = std::as_const(a).values();
        for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * av[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::scale(const Tensor<T>& a, T factor) {
  auto out = make_output(a.shape(), {&a});
  auto o = out.values();
  const auto av = a.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * factor;
  check_finite(out, "scale");
  if (out.requires_grad()) {
    record([out, a, factor]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      auto g = a.grad();
      for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows() || b.size() != w.cols()) {
    fail(ErrorKind::kDimension, "linear: input " + shape_string(x.shape()) + ", weight " +
                                    shape_string(w.shape()) + ", bias " +
                                    shape_string(b.shape()));
  }
  auto out = make_output({x.rows(), w.cols()}, {&x, &w, &b});
  auto o = as_mat(out);
  o.noalias() = as_mat(x) * as_mat(w);
  const auto bias = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
      b.data(), static_cast<Eigen::Index>(b.size()));
  o.rowwise() += bias;
  check_finite(out, "linear");
  if (out.requires_grad()) {
    record([out, x, w, b]() mutable {
      if (!out.has_grad()) return;
      const auto dout = ConstMatMap<T>(out.grad().data(), static_cast<Eigen::Index>(out.rows()),
                                       static_cast<Eigen::Index>(out.cols()));
      if (x.requires_grad()) grad_mat(x).noalias() += dout * as_mat(std::as_const(w)).transpose();
      if (w.requires_grad()) grad_mat(w).noalias() += as_mat(std::as_const(x)).transpose() * dout;
      if (b.requires_grad()) {
        RowVecMap<T>(b.grad().data(), static_cast<Eigen::Index>(b.size())) +=
            dout.colwise().sum();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::weighted_sum(std::span<const std::pair<T, Tensor<T>>> terms) {
  if (terms.empty()) fail(ErrorKind::kDimension, "weighted_sum of no terms");
  const Shape shape = terms.front().second.shape();
  bool needs_grad = false;
  for (const auto& [c, t] : terms) {
    if (t.shape() != shape) {
      fail(ErrorKind::kDimension, "weighted_sum: shapes " + shape_string(shape) + " and " +
                                      shape_string(t.shape()) + " differ");
    }
    needs_grad = needs_grad || t.requires_grad();
  }
  Tensor<T> out(shape, recording_ && needs_grad);
  auto o = out.values();
  for (const auto& [c, t] : terms) {
    const auto v = t.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += c * v[i];
  }
  check_finite(out, "weighted_sum");
  if (out.requires_grad()) {
    std::vector<std::pair<T, Tensor<T>>> saved(terms.begin(), terms.end());
    record([out, saved]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      for (auto& [c, t] : saved) {
        if (!t.requires_grad()) continue;
        auto g = t.grad();
        for (std::size_t i = 0; i < d.size(); ++i) g[i] += c * d[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- shapes

template <typename T>
Tensor<T> Graph<T>::concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) fail(ErrorKind::kDimension, "concat of no tensors");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      fail(ErrorKind::kDimension, "concat: shapes " + shape_string(parts.front().shape()) +
                                      " and " + shape_string(p.shape()) + " differ in rows");
    }
    cols += p.cols();
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor<T> out({rows, cols}, recording_ && needs_grad);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.data() + r * pc, pc, out.data() + r * cols + offset);
    }
    offset += pc;
  }
  if (out.requires_grad()) {
    std::vector<Tensor<T>> saved(parts.begin(), parts.end());
    record([out, saved, rows, cols]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      std::size_t offset = 0;
      for (auto& p : saved) {
        const std::size_t pc = p.cols();
        if (p.requires_grad()) {
          auto g = p.grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < pc; ++c) g[r * pc + c] += d[r * cols + offset + c];
          }
        }
        offset += pc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::stack_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) fail(ErrorKind::kDimension, "stack of no tensors");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      fail(ErrorKind::kDimension, "stack: shapes " + shape_string(parts.front().shape()) +
                                      " and " + shape_string(p.shape()) + " differ in columns");
    }
    rows += p.rows();
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor<T> out({rows, cols}, recording_ && needs_grad);
  T* dst = out.data();
  for (const auto& p : parts) dst = std::copy_n(p.data(), p.size(), dst);
  if (out.requires_grad()) {
    std::vector<Tensor<T>> saved(parts.begin(), parts.end());
    record([out, saved]() mutable {
      if (!out.has_grad()) return;
      const T* src = out.grad().data();
      for (auto& p : saved) {
        if (p.requires_grad()) {
          auto g = p.grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
        }
        src += p.size();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.cols()) {
    fail(ErrorKind::kDimension, "slice_cols [" + std::to_string(begin) + ", " +
                                    std::to_string(begin + count) + ") of " +
                                    shape_string(x.shape()));
  }
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  auto out = make_output({rows, count}, {&x});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data() + r * cols + begin, count, out.data() + r * count);
  }
  if (out.requires_grad()) {
    record([out, x, begin, count, rows, cols]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      auto g = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) g[r * cols + begin + c] += d[r * count + c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.rows()) {
    fail(ErrorKind::kDimension, "slice_rows [" + std::to_string(begin) + ", " +
                                    std::to_string(begin + count) + ") of " +
                                    shape_string(x.shape()));
  }
  const std::size_t cols = x.cols();
  auto out = make_output({count, cols}, {&x});
  std::copy_n(x.data() + begin * cols, count * cols, out.data());
  if (out.requires_grad()) {
    record([out, x, begin, cols]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      auto g = x.grad();
      for (std::size_t i = 0; i < d.size(); ++i) g[begin * cols + i] += d[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::gather_rows(const Tensor<T>& x, std::span<const std::size_t> index) {
  const std::size_t cols = x.cols();
  const std::size_t rows = x.rows();
  for (const auto i : index) {
    if (i >= rows) {
      fail(ErrorKind::kIndex, "gather_rows: row " + std::to_string(i) + " of " +
                                  shape_string(x.shape()));
    }
  }
  auto out = make_output({index.size(), cols}, {&x});
  for (std::size_t r = 0; r < index.size(); ++r) {
    std::copy_n(x.data() + index[r] * cols, cols, out.data() + r * cols);
  }
  if (out.requires_grad()) {
    std::vector<std::size_t> saved(index.begin(), index.end());
    record([out, x, saved, cols]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      auto g = x.grad();
      for (std::size_t r = 0; r < saved.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) g[saved[r] * cols + c] += d[r * cols + c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::reshape(const Tensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    fail(ErrorKind::kDimension, "reshape " + shape_string(x.shape()) + " to " +
                                    shape_string(shape));
  }
  auto out = make_output(std::move(shape), {&x});
  std::copy_n(x.data(), x.size(), out.data());
  if (out.requires_grad()) {
    record([out, x]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      auto g = x.grad();
      for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------- layers

template <typename T>
Tensor<T> Graph<T>::embedding_gather(const Tensor<T>& table, std::span<const int> ids,
                                     int frozen_id) {
  const std::size_t rows = table.rows();
  const std::size_t dim = table.cols();
  for (const int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      fail(ErrorKind::kIndex, "embedding id " + std::to_string(id) + " outside table of " +
                                  std::to_string(rows) + " rows");
    }
  }
  auto out = make_output({ids.size(), dim}, {&table});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(table.data() + static_cast<std::size_t>(ids[r]) * dim, dim, out.data() + r * dim);
  }
  if (out.requires_grad()) {
    std::vector<int> saved(ids.begin(), ids.end());
    record([out, table, saved, dim, frozen_id]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      auto g = table.grad();
      for (std::size_t r = 0; r < saved.size(); ++r) {
        if (saved[r] == frozen_id) continue;
        const std::size_t base = static_cast<std::size_t>(saved[r]) * dim;
        for (std::size_t c = 0; c < dim; ++c) g[base + c] += d[r * dim + c];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::conv1d_over_time(const Tensor<T>& x, std::size_t seq_len,
                                     const Tensor<T>& kernel, const Tensor<T>& bias) {
  const std::size_t channels = x.cols();
  if (seq_len == 0 || x.rows() % seq_len != 0 || channels == 0 ||
      kernel.rank() != 2 || kernel.rows() % channels != 0 || bias.size() != kernel.cols()) {
    fail(ErrorKind::kDimension, "conv1d: input " + shape_string(x.shape()) + " with seq_len " +
                                    std::to_string(seq_len) + ", kernel " +
                                    shape_string(kernel.shape()) + ", bias " +
                                    shape_string(bias.shape()));
  }
  const std::size_t window = kernel.rows() / channels;
  if (window == 0 || window > seq_len) {
    fail(ErrorKind::kDimension, "conv1d: window " + std::to_string(window) +
                                    " longer than sequence of " + std::to_string(seq_len));
  }
  const std::size_t n = x.rows() / seq_len;
  const std::size_t positions = seq_len - window + 1;
  const std::size_t span = window * channels;

  // Each window is a contiguous run of `span` values in row-major x.
  Tensor<T> cols({n * positions, span});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t p = 0; p < positions; ++p) {
      std::copy_n(x.data() + (s * seq_len + p) * channels, span,
                  cols.data() + (s * positions + p) * span);
    }
  }
  auto out = make_output({n * positions, kernel.cols()}, {&x, &kernel, &bias});
  auto o = as_mat(out);
  o.noalias() = as_mat(std::as_const(cols)) * as_mat(kernel);
  o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
      bias.data(), static_cast<Eigen::Index>(bias.size()));
  check_finite(out, "conv1d_over_time");
  if (out.requires_grad()) {
    record([out, x, kernel, bias, cols, n, seq_len, positions, span, channels]() mutable {
      if (!out.has_grad()) return;
      const auto dout = ConstMatMap<T>(out.grad().data(), static_cast<Eigen::Index>(out.rows()),
                                       static_cast<Eigen::Index>(out.cols()));
      if (kernel.requires_grad()) {
        grad_mat(kernel).noalias() += as_mat(std::as_const(cols)).transpose() * dout;
      }
      if (bias.requires_grad()) {
        RowVecMap<T>(bias.grad().data(), static_cast<Eigen::Index>(bias.size())) +=
            dout.colwise().sum();
      }
      if (x.requires_grad()) {
        RowMat<T> dcols = dout * as_mat(std::as_const(kernel)).transpose();
        auto g = x.grad();
        for (std::size_t s = 0; s < n; ++s) {
          for (std::size_t p = 0; p < positions; ++p) {
            const T* src = dcols.data() + (s * positions + p) * span;
            T* dst = g.data() + (s * seq_len + p) * channels;
            for (std::size_t i = 0; i < span; ++i) dst[i] += src[i];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::max_pool_over_time(const Tensor<T>& x, std::size_t seq_len,
                                       std::span<const std::size_t> lengths) {
  if (seq_len == 0 || x.rows() % seq_len != 0) {
    fail(ErrorKind::kDimension, "max_pool: input " + shape_string(x.shape()) +
                                    " not divisible into sequences of " + std::to_string(seq_len));
  }
  const std::size_t n = x.rows() / seq_len;
  const std::size_t cols = x.cols();
  if (!lengths.empty() && lengths.size() != n) {
    fail(ErrorKind::kDimension, "max_pool: " + std::to_string(lengths.size()) +
                                    " lengths for " + std::to_string(n) + " sequences");
  }
  auto out = make_output({n, cols}, {&x});
  // argmax row per output cell; npos for empty sequences.
  std::vector<std::size_t> arg(n * cols, static_cast<std::size_t>(-1));
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t len = lengths.empty() ? seq_len : std::min(lengths[s], seq_len);
    for (std::size_t c = 0; c < cols; ++c) {
      if (len == 0) continue;
      std::size_t best = s * seq_len;
      T best_v = x.data()[best * cols + c];
      for (std::size_t t = 1; t < len; ++t) {
        const std::size_t r = s * seq_len + t;
        if (x.data()[r * cols + c] > best_v) {
          best_v = x.data()[r * cols + c];
          best = r;
        }
      }
      out.data()[s * cols + c] = best_v;
      arg[s * cols + c] = best;
    }
  }
  if (out.requires_grad()) {
    record([out, x, arg, cols]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      auto g = x.grad();
      for (std::size_t i = 0; i < arg.size(); ++i) {
        if (arg[i] == static_cast<std::size_t>(-1)) continue;
        g[arg[i] * cols + i % cols] += d[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::tanh(const Tensor<T>& x) {
  auto out = make_output(x.shape(), {&x});
  flat(out) = flat(x).tanh();
  check_finite(out, "tanh");
  if (out.requires_grad()) {
    record([out, x]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      const auto y = std::as_const(out).values();
      auto g = x.grad();
      for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * (T{1} - y[i] * y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::sigmoid(const Tensor<T>& x) {
  auto out = make_output(x.shape(), {&x});
  flat(out) = flat(x).logistic();
  check_finite(out, "sigmoid");
  if (out.requires_grad()) {
    record([out, x]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      const auto y = std::as_const(out).values();
      auto g = x.grad();
      for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * y[i] * (T{1} - y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::dropout(const Tensor<T>& x, double rate, Rng& rng, bool train) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    fail(ErrorKind::kParameter, "dropout rate " + std::to_string(rate) + " outside [0, 1)");
  }
  if (!train || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const T inv_keep = static_cast<T>(1.0 / keep);
  std::vector<T> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < keep ? inv_keep : T{0};
  auto out = make_output(x.shape(), {&x});
  auto o = out.values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * mask[i];
  if (out.requires_grad()) {
    record([out, x, mask = std::move(mask)]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      auto g = x.grad();
      for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i] * mask[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::lstm_gates(const Tensor<T>& gates, const Tensor<T>& c_prev) {
  const std::size_t batch = c_prev.rows();
  const std::size_t hidden = c_prev.cols();
  if (gates.rows() != batch || gates.cols() != 4 * hidden) {
    fail(ErrorKind::kDimension, "lstm_gates: gates " + shape_string(gates.shape()) +
                                    " with cell state " + shape_string(c_prev.shape()));
  }
  auto out = make_output({batch, 2 * hidden}, {&gates, &c_prev});
  // Activations saved for backward: i, f, g, o, tanh(c).
  std::vector<T> act(batch * 5 * hidden);
  {
    // Whole-batch array expressions so the transcendentals vectorize.
    const auto rows = static_cast<Eigen::Index>(batch);
    const auto h_cols = static_cast<Eigen::Index>(hidden);
    const auto z = as_mat(gates).array();
    const auto cp = as_mat(c_prev).array();
    MatMap<T> a_mat(act.data(), rows, 5 * h_cols);
    auto a = a_mat.array();
    auto o = as_mat(out).array();
    a.middleCols(0, h_cols) = z.middleCols(0, h_cols).logistic();
    a.middleCols(h_cols, h_cols) = z.middleCols(h_cols, h_cols).logistic();
    a.middleCols(2 * h_cols, h_cols) = z.middleCols(2 * h_cols, h_cols).tanh();
    a.middleCols(3 * h_cols, h_cols) = z.middleCols(3 * h_cols, h_cols).logistic();
    o.middleCols(h_cols, h_cols) = a.middleCols(h_cols, h_cols) * cp +
                                   a.middleCols(0, h_cols) * a.middleCols(2 * h_cols, h_cols);
    a.middleCols(4 * h_cols, h_cols) = o.middleCols(h_cols, h_cols).tanh();
    o.middleCols(0, h_cols) = a.middleCols(3 * h_cols, h_cols) * a.middleCols(4 * h_cols, h_cols);
  }
  check_finite(out, "lstm_gates");
  if (out.requires_grad()) {
    record([out, gates, c_prev, act = std::move(act), batch, hidden]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      const bool want_gates = gates.requires_grad();
      const bool want_c = c_prev.requires_grad();
      T* dg = want_gates ? gates.grad().data() : nullptr;
      T* dcp = want_c ? c_prev.grad().data() : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* a = act.data() + b * 5 * hidden;
        const T* dh = d.data() + b * 2 * hidden;
        const T* dc_out = dh + hidden;
        const T* cp = std::as_const(c_prev).data() + b * hidden;
        for (std::size_t k = 0; k < hidden; ++k) {
          const T ig = a[k], fg = a[hidden + k], gg = a[2 * hidden + k];
          const T og = a[3 * hidden + k], tc = a[4 * hidden + k];
          const T dc = dc_out[k] + dh[k] * og * (T{1} - tc * tc);
          if (want_gates) {
            T* row = dg + b * 4 * hidden;
            row[k] += dc * gg * ig * (T{1} - ig);
            row[hidden + k] += dc * cp[k] * fg * (T{1} - fg);
            row[2 * hidden + k] += dc * ig * (T{1} - gg * gg);
            row[3 * hidden + k] += dh[k] * tc * og * (T{1} - og);
          }
          if (want_c) dcp[b * hidden + k] += dc * fg;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- losses

template <typename T>
Tensor<T> Graph<T>::softmax_t(const Tensor<T>& logits, T temperature) {
  if (!(temperature > T{0})) {
    fail(ErrorKind::kParameter, "softmax temperature must be positive");
  }
  const std::size_t rows = logits.rows();
  const std::size_t k = logits.cols();
  auto out = make_output(logits.shape(), {&logits});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data() + r * k;
    T* p = out.data() + r * k;
    T m = z[0] / temperature;
    for (std::size_t i = 1; i < k; ++i) m = std::max(m, z[i] / temperature);
    T sum = 0;
    for (std::size_t i = 0; i < k; ++i) {
      p[i] = std::exp(z[i] / temperature - m);
      sum += p[i];
    }
    for (std::size_t i = 0; i < k; ++i) p[i] /= sum;
  }
  check_finite(out, "softmax_t");
  if (out.requires_grad()) {
    record([out, logits, temperature, rows, k]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad();
      const auto p = std::as_const(out).values();
      auto g = logits.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t i = 0; i < k; ++i) dot += d[r * k + i] * p[r * k + i];
        for (std::size_t i = 0; i < k; ++i) {
          g[r * k + i] += p[r * k + i] * (d[r * k + i] - dot) / temperature;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::kl_divergence(const Tensor<T>& p, const Tensor<T>& q,
                                  std::span<const std::uint8_t> mask) {
  require_same_shape(p, q, "kl_divergence");
  const std::size_t rows = p.rows();
  const std::size_t k = p.cols();
  require_mask<T>(mask, rows, "kl_divergence");
  std::size_t active = 0;
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    ++active;
    for (std::size_t i = 0; i < k; ++i) {
      const T pi = p.data()[r * k + i];
      const T qi = q.data()[r * k + i];
      if (!(pi > T{0}) || !(qi > T{0})) {
        fail(ErrorKind::kDomain, "kl_divergence: non-positive probability at row " +
                                     std::to_string(r));
      }
      total += static_cast<double>(pi * std::log(pi / qi));
    }
  }
  auto out = make_output({1}, {&p});
  out.data()[0] = active ? static_cast<T>(total / static_cast<double>(active)) : T{0};
  check_finite(out, "kl_divergence");
  if (out.requires_grad() && active) {
    std::vector<std::uint8_t> saved(mask.begin(), mask.end());
    record([out, p, q, saved, rows, k, active]() mutable {
      if (!out.has_grad()) return;
      const T scale = out.grad()[0] / static_cast<T>(active);
      auto g = p.grad();
      const auto pv = std::as_const(p).values();
      const auto qv = std::as_const(q).values();
      for (std::size_t r = 0; r < rows; ++r) {
        if (!saved[r]) continue;
        for (std::size_t i = 0; i < k; ++i) {
          const std::size_t j = r * k + i;
          g[j] += scale * (std::log(pv[j] / qv[j]) + T{1});
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::kl_from_logits(const Tensor<T>& student, const Tensor<T>& teacher,
                                   T temperature, std::span<const std::uint8_t> mask,
                                   KlDirection direction) {
  require_same_shape(student, teacher, "kl_from_logits");
  if (!(temperature > T{0})) fail(ErrorKind::kParameter, "temperature must be positive");
  const std::size_t rows = student.rows();
  const std::size_t k = student.cols();
  require_mask<T>(mask, rows, "kl_from_logits");

  // Per active row: log p (student) and log q (teacher), both softened.
  std::vector<T> log_p(rows * k), log_q(rows * k);
  std::vector<T> row_kl(rows, T{0});
  std::size_t active = 0;
  double total = 0;
  auto log_softmax = [k, temperature](const T* z, T* out) {
    T m = z[0] / temperature;
    for (std::size_t i = 1; i < k; ++i) m = std::max(m, z[i] / temperature);
    T sum = 0;
    for (std::size_t i = 0; i < k; ++i) sum += std::exp(z[i] / temperature - m);
    const T lse = m + std::log(sum);
    for (std::size_t i = 0; i < k; ++i) out[i] = z[i] / temperature - lse;
  };
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    ++active;
    T* lp = log_p.data() + r * k;
    T* lq = log_q.data() + r * k;
    log_softmax(student.data() + r * k, lp);
    log_softmax(teacher.data() + r * k, lq);
    T kl = 0;
    for (std::size_t i = 0; i < k; ++i) {
      kl += direction == KlDirection::kStudentTeacher ? std::exp(lp[i]) * (lp[i] - lq[i])
                                                      : std::exp(lq[i]) * (lq[i] - lp[i]);
    }
    row_kl[r] = kl;
    total += static_cast<double>(kl);
  }
  auto out = make_output({1}, {&student});
  out.data()[0] = active ? static_cast<T>(total / static_cast<double>(active)) : T{0};
  check_finite(out, "kl_from_logits");
  if (out.requires_grad() && active) {
    std::vector<std::uint8_t> saved(mask.begin(), mask.end());
    record([out, student, log_p = std::move(log_p), log_q = std::move(log_q),
            row_kl = std::move(row_kl), saved, rows, k, active, temperature,
            direction]() mutable {
      if (!out.has_grad()) return;
      const T scale = out.grad()[0] / (static_cast<T>(active) * temperature);
      auto g = student.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        if (!saved[r]) continue;
        for (std::size_t i = 0; i < k; ++i) {
          const std::size_t j = r * k + i;
          const T p = std::exp(log_p[j]);
          const T grad = direction == KlDirection::kStudentTeacher
                             ? p * ((log_p[j] - log_q[j]) - row_kl[r])
                             : p - std::exp(log_q[j]);
          g[j] += scale * grad;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                                  std::span<const std::uint8_t> mask) {
  const std::size_t rows = logits.rows();
  const std::size_t k = logits.cols();
  require_mask<T>(mask, rows, "cross_entropy");
  if (targets.size() != rows) {
    fail(ErrorKind::kDimension, "cross_entropy: " + std::to_string(targets.size()) +
                                    " targets for " + std::to_string(rows) + " rows");
  }
  std::vector<T> probs(rows * k, T{0});
  std::size_t active = 0;
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const int target = targets[r];
    if (target < 0 || static_cast<std::size_t>(target) >= k) {
      fail(ErrorKind::kIndex, "cross_entropy: target " + std::to_string(target) +
                                  " outside [0, " + std::to_string(k) + ")");
    }
    ++active;
    const T* z = logits.data() + r * k;
    T m = *std::max_element(z, z + k);
    T sum = 0;
    for (std::size_t i = 0; i < k; ++i) sum += std::exp(z[i] - m);
    const T lse = m + std::log(sum);
    total += static_cast<double>(lse - z[target]);
    for (std::size_t i = 0; i < k; ++i) probs[r * k + i] = std::exp(z[i] - lse);
  }
  auto out = make_output({1}, {&logits});
  out.data()[0] = active ? static_cast<T>(total / static_cast<double>(active)) : T{0};
  check_finite(out, "cross_entropy");
  if (out.requires_grad() && active) {
    std::vector<int> saved_t(targets.begin(), targets.end());
    std::vector<std::uint8_t> saved_m(mask.begin(), mask.end());
    record([out, logits, probs = std::move(probs), saved_t, saved_m, rows, k,
            active]() mutable {
      if (!out.has_grad()) return;
      const T scale = out.grad()[0] / static_cast<T>(active);
      auto g = logits.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        if (!saved_m[r]) continue;
        for (std::size_t i = 0; i < k; ++i) g[r * k + i] += scale * probs[r * k + i];
        g[r * k + static_cast<std::size_t>(saved_t[r])] -= scale;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::crf_nll(const Tensor<T>& emissions, const Tensor<T>& transitions,
                            std::span<const SequenceTarget> sequences) {
  const std::size_t k = emissions.cols();
  if (transitions.rows() != k + 2 || transitions.cols() != k + 2) {
    fail(ErrorKind::kDimension, "crf_nll: transitions " + shape_string(transitions.shape()) +
                                    " for " + std::to_string(k) + " tags");
  }
  for (const auto& s : sequences) {
    if (s.row_offset + s.length > emissions.rows()) {
      fail(ErrorKind::kDimension, "crf_nll: sequence rows exceed emissions " +
                                      shape_string(emissions.shape()));
    }
  }
  double total = 0;
  for (const auto& s : sequences) {
    total += static_cast<double>(distiltag::crf_nll<T>(
        emissions.values().subspan(s.row_offset * k, s.length * k), s.length, k,
        transitions.values(), s.tags));
  }
  auto out = make_output({1}, {&emissions, &transitions});
  const std::size_t count = sequences.size();
  out.data()[0] = count ? static_cast<T>(total / static_cast<double>(count)) : T{0};
  check_finite(out, "crf_nll");
  if (out.requires_grad() && count) {
    std::vector<SequenceTarget> saved(sequences.begin(), sequences.end());
    record([out, emissions, transitions, saved, k, count]() mutable {
      if (!out.has_grad()) return;
      const T scale = out.grad()[0] / static_cast<T>(count);
      std::span<T> d_tr = transitions.requires_grad() ? transitions.grad() : std::span<T>{};
      std::span<T> d_e = emissions.requires_grad() ? emissions.grad() : std::span<T>{};
      for (const auto& s : saved) {
        crf_nll_backward<T>(std::as_const(emissions).values().subspan(s.row_offset * k, s.length * k),
                            s.length, k, std::as_const(transitions).values(), s.tags, scale,
                            d_e.empty() ? d_e : d_e.subspan(s.row_offset * k, s.length * k), d_tr);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- LSTM

template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell(Graph<T>& g, const Tensor<T>& x_t,
                                          const Tensor<T>& h_prev, const Tensor<T>& c_prev,
                                          const LstmParams<T>& params) {
  const std::size_t hidden = params.hidden();
  const auto gates =
      g.add(g.linear(x_t, params.w_input, params.bias), g.matmul(h_prev, params.w_hidden));
  const auto hc = g.lstm_gates(gates, c_prev);
  return {g.slice_cols(hc, 0, hidden), g.slice_cols(hc, hidden, hidden)};
}

namespace {

template <typename T>
Tensor<T> run_direction(Graph<T>& g, const Tensor<T>& x, std::size_t batch, std::size_t steps,
                        const LstmParams<T>& params) {
  const std::size_t hidden = params.hidden();
  const auto projected = g.linear(x, params.w_input, params.bias);
  Tensor<T> h({batch, hidden});
  Tensor<T> c({batch, hidden});
  std::vector<Tensor<T>> states;
  states.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const auto gates = g.add(g.slice_rows(projected, t * batch, batch), g.matmul(h, params.w_hidden));
    const auto hc = g.lstm_gates(gates, c);
    h = g.slice_cols(hc, 0, hidden);
    c = g.slice_cols(hc, hidden, hidden);
    states.push_back(h);
  }
  return g.stack_rows(states);
}

}  // namespace

template <typename T>
Tensor<T> bilstm(Graph<T>& g, const Tensor<T>& x, std::size_t batch,
                 std::span<const std::size_t> lengths, const LstmParams<T>& forward,
                 const LstmParams<T>& backward) {
  if (batch == 0 || x.rows() % batch != 0 || lengths.size() != batch) {
    fail(ErrorKind::kDimension, "bilstm: input " + shape_string(x.shape()) + " for batch " +
                                    std::to_string(batch));
  }
  if (forward.hidden() != backward.hidden()) {
    fail(ErrorKind::kDimension, "bilstm: direction hidden sizes differ");
  }
  const std::size_t steps = x.rows() / batch;
  // Reverses each sentence within its own length; padding rows stay put.
  // The permutation is its own inverse.
  std::vector<std::size_t> reverse(x.rows());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t len = lengths[b];
      const std::size_t src = t < len ? (len - 1 - t) : t;
      reverse[t * batch + b] = src * batch + b;
    }
  }
  const auto fwd = run_direction(g, x, batch, steps, forward);
  const auto bwd_rev = run_direction(g, g.gather_rows(x, reverse), batch, steps, backward);
  const auto bwd = g.gather_rows(bwd_rev, reverse);
  const std::vector<Tensor<T>> parts{fwd, bwd};
  return g.concat_cols(parts);
}

template class Graph<float>;
template class Graph<double>;

template std::pair<Tensor<float>, Tensor<float>> lstm_cell(Graph<float>&, const Tensor<float>&,
                                                           const Tensor<float>&,
                                                           const Tensor<float>&,
                                                           const LstmParams<float>&);
template std::pair<Tensor<double>, Tensor<double>> lstm_cell(Graph<double>&,
                                                             const Tensor<double>&,
                                                             const Tensor<double>&,
                                                             const Tensor<double>&,
                                                             const LstmParams<double>&);
template Tensor<float> bilstm(Graph<float>&, const Tensor<float>&, std::size_t,
                              std::span<const std::size_t>, const LstmParams<float>&,
                              const LstmParams<float>&);
template Tensor<double> bilstm(Graph<double>&, const Tensor<double>&, std::size_t,
                               std::span<const std::size_t>, const LstmParams<double>&,
                               const LstmParams<double>&);

}  // namespace distiltag
