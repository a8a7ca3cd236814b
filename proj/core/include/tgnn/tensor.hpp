#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "tgnn/rng.hpp"

namespace tgnn::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);

/// Value node shared between tensor handles. Gradients live beside values so
/// parameter tensors can persist across tapes and accumulate across samples.
struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(Shape shape, std::vector<double> value, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t numel() const { return data_->value.size(); }
  std::size_t rows() const;  // 2-d only
  std::size_t cols() const;  // 2-d only
  bool requires_grad() const { return data_->requires_grad; }

  std::span<const double> value() const { return data_->value; }
  std::span<double> mutable_value() { return data_->value; }
  /// Gradient view; sized and zeroed on first access.
  std::span<double> mutable_grad() {
    data_->ensure_grad();
    return data_->grad;
  }
  bool has_grad() const { return !data_->grad.empty(); }
  void zero_grad();
  double item() const;  // numel() == 1

  std::shared_ptr<TensorData> data() const { return data_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> data) : data_(std::move(data)) {}
  std::shared_ptr<TensorData> data_;
  friend class Tape;
};

enum class AttentionPattern { kFull, kCausal, kNeighbors };

/// Ragged key lists per query row: row i attends to key indices
/// items[offsets[i]..offsets[i+1]).
struct NeighborLists {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> items;

  static NeighborLists from_rows(const std::vector<std::vector<std::size_t>>& rows);
  std::size_t row_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::span<const std::size_t> row(std::size_t i) const {
    return {items.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
};

/// Wengert list. Ops are recorded in execution order, so the reverse sweep is
/// a valid topological order and visits each record exactly once. A tape is
/// confined to one thread; independent tapes may run concurrently.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return records_.size(); }

  /// {m,k}x{k,n}->{m,n}, {m,k}x{k}->{m}, {k}x{k,n}->{n}.
  Tensor matmul(const Tensor& a, const Tensor& b);
  /// Same shape, or 1-d b broadcast across the rows of 2-d a.
  Tensor add(const Tensor& a, const Tensor& b);
  /// Elementwise product, same shape.
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double factor);
  Tensor relu(const Tensor& a);
  Tensor softmax(const Tensor& a, std::size_t axis);
  /// Normalizes lanes along `axis` to mean 0 / variance 1, then applies the
  /// affine gain/bias (each of length shape[axis]).
  Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                    std::size_t axis, double epsilon = 1e-12);
  /// Inverted-scaling dropout; identity when train is false or rate is 0.
  Tensor dropout(const Tensor& a, double rate, Rng& rng, bool train);
  Tensor concat(std::span<const Tensor> parts, std::size_t axis);
  /// Stacks scalar tensors into a 1-d tensor.
  Tensor stack(std::span<const Tensor> parts);
  /// Gathers rows (2-d input) or elements (1-d input); indices may repeat.
  Tensor index_select(const Tensor& a, std::span<const std::size_t> indices);
  /// One row of a 2-d tensor as a 1-d tensor.
  Tensor select_row(const Tensor& a, std::size_t row);
  Tensor mean(const Tensor& a);
  Tensor log(const Tensor& a);
  /// Multi-head scaled dot-product attention. q is {n,d}, k and v are {m,d},
  /// d divisible by heads. kFull: every query row attends to all m key rows
  /// (any n). kCausal: n == m, row i attends to rows 0..i. kNeighbors: key
  /// rows are taken from `neighbors`, which must have n rows with non-empty
  /// lists of indices < m.
  Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                   std::size_t heads, AttentionPattern pattern,
                   const NeighborLists* neighbors = nullptr);

  /// Accumulates d loss / d x into every reachable tensor that requires
  /// gradients. loss must be a scalar produced by this tape.
  void backward(const Tensor& loss);

 private:
  struct Record {
    std::shared_ptr<TensorData> output;
    std::function<void()> pull;  // propagates output->grad into inputs
  };

  Tensor make_output(Shape shape, std::vector<double> value, bool requires_grad);
  void push(std::shared_ptr<TensorData> output, std::function<void()> pull);

  bool recording_;
  std::vector<Record> records_;
};

}  // namespace tgnn::ad
