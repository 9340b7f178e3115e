#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "cfrag/adjacency.hpp"

namespace cfrag {

/// Dense row-major array of doubles with rank 0 (scalar), 1 or 2.
class Tensor {
 public:
  Tensor() : values_(1, 0.0) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  const Tape* tape = nullptr;
  std::size_t id = 0;
};

enum class Aggregation { Mean, Sum };

/// Reverse-mode recorder. Every op evaluates eagerly and appends a node; backward() walks the
/// nodes in reverse once. Sparse adjacencies passed to neighbor_aggregate are held by reference
/// and must outlive the tape.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a differentiable leaf.
  Var parameter(Tensor value);
  /// Non-differentiable leaf.
  Var constant(Tensor value);

  const Tensor& value(Var v) const;

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double c);
  Var mul(Var a, Var b);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var log_sigmoid(Var a);
  /// Full contraction of two same-shaped tensors to a scalar.
  Var dot(Var a, Var b);
  /// Row-wise dot product of two n x d matrices, giving a length-n vector.
  Var row_dot(Var a, Var b);
  /// Rows of a matrix selected (with repetition) by index.
  Var gather_rows(Var x, std::vector<std::uint32_t> rows);
  /// out[r] = norm(r) * sum over incidences (r, n, e) of w[e] * x[n], with norm = 1/deg(r)
  /// for Mean (0 for isolated rows) and 1 for Sum. Without weights every w[e] is 1.
  Var neighbor_aggregate(const SparseAdjacency& adj, Var x, std::optional<Var> edge_weights,
                         Aggregation mode = Aggregation::Mean);
  /// Mean binary cross-entropy of sigmoid(logits) against 0/1 labels.
  Var bce_with_logits(Var logits, const Tensor& labels);
  Var sum(Var a);
  Var mean(Var a);

  /// Gradients for every registered parameter, in registration order.
  /// Throws on a non-scalar loss, a foreign Var, or a second call.
  std::vector<Tensor> backward(Var loss);

  std::size_t parameter_count() const { return parameters_.size(); }
  /// Position of a parameter in backward()'s result.
  std::size_t parameter_slot(Var param) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::function<void(Tape&, std::size_t)> backprop;
  };

  Var push(Tensor value, bool needs_grad, std::function<void(Tape&, std::size_t)> backprop);
  const Node& node(Var v) const;
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Tensor& grad(std::size_t id);

  std::vector<Node> nodes_;
  std::vector<std::size_t> parameters_;
  bool backward_done_ = false;
};

/// Parameter update rules operating in place on parameter tensors.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<Tensor* const> params, std::span<const Tensor> grads) = 0;
};

class GradientDescent final : public Optimizer {
 public:
  explicit GradientDescent(double lr) : lr_(lr) {}
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads) override;

 private:
  double lr_;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::span<Tensor* const> params, std::span<const Tensor> grads) override;

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Builds a scalar loss on a fresh tape from parameter handles (one per input tensor).
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Largest |analytic - numeric| / max(1, |numeric|) over every input entry, where numeric
/// gradients come from central differences with step `epsilon`.
double grad_check(const ScalarFunction& f, const std::vector<Tensor>& inputs,
                  double epsilon = 1e-5);

/// Numerically stable log(sigmoid(x)).
double log_sigmoid(double x);
double sigmoid(double x);

}  // namespace cfrag
