#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "textscene/tensor.hpp"

namespace textscene::ad {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive and has not been cleared.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t size() const { return value().size(); }
  double item() const;

  Tape* tape() const { return tape_; }
  int index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  int index_ = -1;
};

// Records differentiable operations in execution order. Because every node is
// appended after its inputs, walking the record backwards is a reverse
// topological order; backward() visits each reachable node exactly once.
//
// One tape per thread. A tape never owns parameters: leaf() binds a Tensor by
// reference and backward() accumulates into its grad field.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Bound parameter. Gradients flow to `param.grad` when param.requires_grad.
  Var leaf(Tensor& param);
  // Read-only reference to a tensor that must outlive the tape; no gradient.
  Var view(const Tensor& value);
  Var constant(Tensor value);

  // Accumulates d(loss)/d(leaf) into every bound requires_grad leaf. Calling
  // it twice without zeroing the leaves' grads adds the gradients again.
  void backward(const Var& loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

  // Op-author interface.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn fn);
  const Tensor& value(int i) const;
  bool needs_grad(int i) const { return nodes_[static_cast<std::size_t>(i)].needs_grad; }
  // Upstream gradient of node i during backward().
  std::span<const double> grad(int i) const;
  // Gradient accumulator of node i, zero-initialised on first access.
  std::span<double> accum(int i);

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    Tensor* param = nullptr;
    std::vector<int> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    std::vector<double> grad;
  };
  std::vector<Node> nodes_;
};

// Elementwise and structural ops. Binary ops require operands on the same tape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);

Var sum(const Var& a);
Var mean(const Var& a);
Var mean_rows(const Var& a);  // [r x c] -> [1 x c]

// Each row divided by its L2 norm. A zero row raises UsageError.
Var row_normalize(const Var& a);
// Cosine similarity of two equal-length vectors, as a scalar.
Var cosine_sim(const Var& a, const Var& b);

// [r x c] -> [r x 1]. Gradient goes to the first maximal entry of each row.
Var row_max(const Var& a);
Var softmax_rows(const Var& a);
// Row i is a softmax over columns 0..i only; later columns are exactly 0.
Var causal_softmax_rows(const Var& a);
// Mean over rows of -log softmax(logits[row])[targets[row]].
Var cross_entropy_logits(const Var& logits, std::span<const std::size_t> targets);

// Row i of a scaled by w[i]; w is any shape with a.rows() elements.
Var scale_rows(const Var& a, const Var& w);
Var gather_rows(const Var& table, std::span<const std::size_t> ids);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);

// Tape-free conveniences for plain vectors.
double cosine_sim(std::span<const double> a, std::span<const double> b);
std::vector<double> softmax(std::span<const double> v);

}  // namespace textscene::ad
