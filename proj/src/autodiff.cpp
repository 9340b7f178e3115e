#include "cfrag/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cfrag/error.hpp"

namespace cfrag {

namespace {

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t k = 0; k < s.size(); ++k) out += (k ? "," : "") + std::to_string(s[k]);
  return out + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.size() > 2) throw ShapeError("tensors have rank 0, 1 or 2");
  const std::size_t expected =
      std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (expected != values_.size())
    throw ShapeError("value count " + std::to_string(values_.size()) + " does not match shape " +
                     shape_str(shape_));
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  const std::size_t n =
      std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = zeros({n, n});
  for (std::size_t k = 0; k < n; ++k) t.at(k, k) = 1.0;
  return t;
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on a tensor with " + std::to_string(size()) + " values");
  return values_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, std::size_t)> backprop) {
  if (!value.all_finite()) throw NumericError("non-finite value produced on tape");
  nodes_.push_back({std::move(value), Tensor(), false, needs_grad, std::move(backprop)});
  return {this, nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw PreconditionError("Var belongs to another tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor& Tape::grad(std::size_t id) {
  auto& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

Var Tape::parameter(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite parameter");
  Var v = push(std::move(value), true, nullptr);
  parameters_.push_back(v.id);
  return v;
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant");
  return push(std::move(value), false, nullptr);
}

std::size_t Tape::parameter_slot(Var param) const {
  node(param);
  auto it = std::find(parameters_.begin(), parameters_.end(), param.id);
  if (it == parameters_.end()) throw PreconditionError("Var is not a registered parameter");
  return static_cast<std::size_t>(it - parameters_.begin());
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
    throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape()) + " x " +
                     shape_str(B.shape()));
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.at(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out.at(i, j) += aip * B.at(p, j);
    }
  const std::size_t ia = a.id, ib = b.id;
  return push(std::move(out), needs(a) || needs(b), [ia, ib, n, k, m](Tape& t, std::size_t self) {
    const Tensor G = t.nodes_[self].grad;
    if (t.nodes_[ia].needs_grad) {
      const Tensor& B = t.nodes_[ib].value;
      Tensor& gA = t.grad(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0;
          for (std::size_t j = 0; j < m; ++j) s += G.at(i, j) * B.at(p, j);
          gA.at(i, p) += s;
        }
    }
    if (t.nodes_[ib].needs_grad) {
      const Tensor& A = t.nodes_[ia].value;
      Tensor& gB = t.grad(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A.at(i, p);
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gB.at(p, j) += aip * G.at(i, j);
        }
    }
  });
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  require_same_shape(A, B, "add");
  Tensor out = A;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += B[k];
  const std::size_t ia = a.id, ib = b.id;
  return push(std::move(out), needs(a) || needs(b), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& G = t.nodes_[self].grad;
    for (std::size_t src : {ia, ib}) {
      if (!t.nodes_[src].needs_grad) continue;
      Tensor& g = t.grad(src);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += G[k];
    }
  });
}

Var Tape::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Tape::scale(Var a, double c) {
  Tensor out = node(a).value;
  for (auto& v : out.values()) v *= c;
  const std::size_t ia = a.id;
  return push(std::move(out), needs(a), [ia, c](Tape& t, std::size_t self) {
    const Tensor& G = t.nodes_[self].grad;
    Tensor& g = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += c * G[k];
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  require_same_shape(A, B, "mul");
  Tensor out = A;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= B[k];
  const std::size_t ia = a.id, ib = b.id;
  return push(std::move(out), needs(a) || needs(b), [ia, ib](Tape& t, std::size_t self) {
    const Tensor& G = t.nodes_[self].grad;
    if (t.nodes_[ia].needs_grad) {
      const Tensor& B = t.nodes_[ib].value;
      Tensor& g = t.grad(ia);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += G[k] * B[k];
    }
    if (t.nodes_[ib].needs_grad) {
      const Tensor& A = t.nodes_[ia].value;
      Tensor& g = t.grad(ib);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += G[k] * A[k];
    }
  });
}

Var Tape::relu(Var a) {
  Tensor out = node(a).value;
  for (auto& v : out.values()) v = v > 0 ? v : 0.0;
  const std::size_t ia = a.id;
  return push(std::move(out), needs(a), [ia](Tape& t, std::size_t self) {
    const Tensor& G = t.nodes_[self].grad;
    const Tensor& X = t.nodes_[ia].value;
    Tensor& g = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k)
      if (X[k] > 0) g[k] += G[k];
  });
}

Var Tape::sigmoid(Var a) {
  Tensor out = node(a).value;
  for (auto& v : out.values()) v = cfrag::sigmoid(v);
  const std::size_t ia = a.id;
  return push(std::move(out), needs(a), [ia](Tape& t, std::size_t self) {
    const Tensor& G = t.nodes_[self].grad;
    const Tensor& S = t.nodes_[self].value;
    Tensor& g = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += G[k] * S[k] * (1.0 - S[k]);
  });
}

Var Tape::log_sigmoid(Var a) {
  Tensor out = node(a).value;
  for (auto& v : out.values()) v = cfrag::log_sigmoid(v);
  const std::size_t ia = a.id;
  return push(std::move(out), needs(a), [ia](Tape& t, std::size_t self) {
    const Tensor& G = t.nodes_[self].grad;
    const Tensor& X = t.nodes_[ia].value;
    Tensor& g = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += G[k] * cfrag::sigmoid(-X[k]);
  });
}

Var Tape::dot(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  require_same_shape(A, B, "dot");
  double s = 0;
  for (std::size_t k = 0; k < A.size(); ++k) s += A[k] * B[k];
  const std::size_t ia = a.id, ib = b.id;
  return push(Tensor::scalar(s), needs(a) || needs(b), [ia, ib](Tape& t, std::size_t self) {
    const double G = t.nodes_[self].grad[0];
    if (t.nodes_[ia].needs_grad) {
      const Tensor& B = t.nodes_[ib].value;
      Tensor& g = t.grad(ia);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += G * B[k];
    }
    if (t.nodes_[ib].needs_grad) {
      const Tensor& A = t.nodes_[ia].value;
      Tensor& g = t.grad(ib);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += G * A[k];
    }
  });
}

Var Tape::row_dot(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  require_same_shape(A, B, "row_dot");
  if (A.rank() != 2) throw ShapeError("row_dot: expects matrices");
  const std::size_t n = A.rows(), d = A.cols();
  Tensor out = Tensor::zeros({n});
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += A.at(r, c) * B.at(r, c);
    out[r] = s;
  }
  const std::size_t ia = a.id, ib = b.id;
  return push(std::move(out), needs(a) || needs(b), [ia, ib, n, d](Tape& t, std::size_t self) {
    const Tensor G = t.nodes_[self].grad;
    if (t.nodes_[ia].needs_grad) {
      const Tensor& B = t.nodes_[ib].value;
      Tensor& g = t.grad(ia);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) g.at(r, c) += G[r] * B.at(r, c);
    }
    if (t.nodes_[ib].needs_grad) {
      const Tensor& A = t.nodes_[ia].value;
      Tensor& g = t.grad(ib);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) g.at(r, c) += G[r] * A.at(r, c);
    }
  });
}

Var Tape::gather_rows(Var x, std::vector<std::uint32_t> rows) {
  const Tensor& X = node(x).value;
  if (X.rank() != 2) throw ShapeError("gather_rows: expects a matrix");
  const std::size_t d = X.cols();
  Tensor out = Tensor::zeros({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= X.rows()) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(X.row(rows[r]).begin(), d, out.values().begin() + r * d);
  }
  const std::size_t ix = x.id;
  return push(std::move(out), needs(x),
              [ix, d, rows = std::move(rows)](Tape& t, std::size_t self) {
                const Tensor& G = t.nodes_[self].grad;
                Tensor& g = t.grad(ix);
                for (std::size_t r = 0; r < rows.size(); ++r)
                  for (std::size_t c = 0; c < d; ++c) g.at(rows[r], c) += G.at(r, c);
              });
}

Var Tape::neighbor_aggregate(const SparseAdjacency& adj, Var x, std::optional<Var> edge_weights,
                             Aggregation mode) {
  const Tensor& X = node(x).value;
  if (X.rank() != 2 || X.rows() != adj.rows)
    throw ShapeError("neighbor_aggregate: feature rows " + std::to_string(X.rows()) +
                     " do not match adjacency rows " + std::to_string(adj.rows));
  const Tensor* W = nullptr;
  if (edge_weights) {
    W = &node(*edge_weights).value;
    if (W->rank() != 1 || W->size() != adj.edge_count)
      throw ShapeError("neighbor_aggregate: need one weight per edge (" +
                       std::to_string(adj.edge_count) + ")");
  }
  const std::size_t d = X.cols();
  auto norm = [&adj, mode](std::size_t r) {
    const std::size_t deg = adj.degree(r);
    if (mode == Aggregation::Sum) return 1.0;
    return deg == 0 ? 0.0 : 1.0 / static_cast<double>(deg);
  };
  Tensor out = Tensor::zeros({adj.rows, d});
  for (std::size_t r = 0; r < adj.rows; ++r) {
    const double s = norm(r);
    for (std::uint32_t k = adj.offsets[r]; k < adj.offsets[r + 1]; ++k) {
      const double w = W ? (*W)[adj.edge[k]] * s : s;
      const auto src = X.row(adj.neighbor[k]);
      for (std::size_t c = 0; c < d; ++c) out.at(r, c) += w * src[c];
    }
  }
  const std::size_t ix = x.id;
  const bool weighted = edge_weights.has_value();
  const std::size_t iw = weighted ? edge_weights->id : 0;
  const bool grad_needed = needs(x) || (weighted && needs(*edge_weights));
  return push(std::move(out), grad_needed, [&adj, ix, iw, weighted, d, norm](Tape& t, std::size_t self) {
    const Tensor& G = t.nodes_[self].grad;
    const Tensor& X = t.nodes_[ix].value;
    const Tensor* W = weighted ? &t.nodes_[iw].value : nullptr;
    const bool gx = t.nodes_[ix].needs_grad;
    const bool gw = weighted && t.nodes_[iw].needs_grad;
    for (std::size_t r = 0; r < adj.rows; ++r) {
      const double s = norm(r);
      for (std::uint32_t k = adj.offsets[r]; k < adj.offsets[r + 1]; ++k) {
        const std::uint32_t n = adj.neighbor[k];
        if (gx) {
          const double w = W ? (*W)[adj.edge[k]] * s : s;
          Tensor& g = t.grad(ix);
          for (std::size_t c = 0; c < d; ++c) g.at(n, c) += w * G.at(r, c);
        }
        if (gw) {
          double acc = 0;
          for (std::size_t c = 0; c < d; ++c) acc += G.at(r, c) * X.at(n, c);
          t.grad(iw)[adj.edge[k]] += s * acc;
        }
      }
    }
  });
}

Var Tape::bce_with_logits(Var logits, const Tensor& labels) {
  const Tensor& Z = node(logits).value;
  if (Z.size() != labels.size()) throw ShapeError("bce_with_logits: label count mismatch");
  if (Z.size() == 0) throw ShapeError("bce_with_logits: empty input");
  double total = 0;
  for (std::size_t k = 0; k < Z.size(); ++k) {
    const double z = Z[k], y = labels[k];
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  const double n = static_cast<double>(Z.size());
  const std::size_t iz = logits.id;
  return push(Tensor::scalar(total / n), needs(logits), [iz, labels, n](Tape& t, std::size_t self) {
    const double G = t.nodes_[self].grad[0];
    const Tensor& Z = t.nodes_[iz].value;
    Tensor& g = t.grad(iz);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += G * (cfrag::sigmoid(Z[k]) - labels[k]) / n;
  });
}

Var Tape::sum(Var a) {
  const Tensor& A = node(a).value;
  double s = 0;
  for (double v : A.values()) s += v;
  const std::size_t ia = a.id;
  return push(Tensor::scalar(s), needs(a), [ia](Tape& t, std::size_t self) {
    const double G = t.nodes_[self].grad[0];
    for (auto& v : t.grad(ia).values()) v += G;
  });
}

Var Tape::mean(Var a) {
  const double n = static_cast<double>(node(a).value.size());
  return scale(sum(a), 1.0 / n);
}

std::vector<Tensor> Tape::backward(Var loss) {
  const Node& l = node(loss);
  if (backward_done_) throw PreconditionError("backward already ran on this tape");
  if (l.value.size() != 1 || l.value.rank() != 0)
    throw ShapeError("backward: loss must be a scalar");
  backward_done_ = true;
  grad(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (!n.needs_grad || !n.backprop || !n.has_grad) continue;
    n.backprop(*this, id);
  }
  std::vector<Tensor> out;
  out.reserve(parameters_.size());
  for (std::size_t id : parameters_) out.push_back(grad(id));
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers

void GradientDescent::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw PreconditionError("optimizer: gradient count mismatch");
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto vals = params[p]->values();
    for (std::size_t k = 0; k < vals.size(); ++k) vals[k] -= lr_ * grads[p][k];
  }
}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw PreconditionError("optimizer: gradient count mismatch");
  if (m_.empty()) {
    for (auto* p : params) {
      m_.push_back(Tensor::zeros(p->shape()));
      v_.push_back(Tensor::zeros(p->shape()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto vals = params[p]->values();
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const double g = grads[p][k];
      m_[p][k] = beta1_ * m_[p][k] + (1 - beta1_) * g;
      v_[p][k] = beta2_ * v_[p][k] + (1 - beta2_) * g * g;
      vals[k] -= lr_ * (m_[p][k] / c1) / (std::sqrt(v_[p][k] / c2) + eps_);
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient check

double grad_check(const ScalarFunction& f, const std::vector<Tensor>& inputs, double epsilon) {
  if (!(epsilon > 0)) throw PreconditionError("grad_check: epsilon must be positive");
  auto evaluate = [&f](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.parameter(x));
    Var loss = f(tape, vars);
    const double value = tape.value(loss).item();
    if (!std::isfinite(value)) throw NumericError("grad_check: non-finite loss");
    return value;
  };

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.parameter(x));
    analytic = tape.backward(f(tape, vars));
  }

  double worst = 0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    for (std::size_t k = 0; k < inputs[p].size(); ++k) {
      const double orig = inputs[p][k];
      probe[p][k] = orig + epsilon;
      const double up = evaluate(probe);
      probe[p][k] = orig - epsilon;
      const double down = evaluate(probe);
      probe[p][k] = orig;
      const double numeric = (up - down) / (2 * epsilon);
      const double err = std::abs(analytic[p][k] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace cfrag
