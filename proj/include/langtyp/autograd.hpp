#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "langtyp/tensor.hpp"

namespace langtyp {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value
};

// Owns a model's parameters in creation order. Addresses are stable.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t scalar_count() const;

  void zero_grad();
  double grad_norm() const;
  // Rescales gradients so their global L2 norm is at most max_norm. Returns
  // the norm before clipping.
  double clip_grad_norm(double max_norm);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

class Graph;

// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

// Tape for reverse-mode differentiation. Nodes are appended in evaluation
// order, so reverse creation order is a valid topological order for
// backward(). A graph is used by one thread at a time.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Trainable parameter: backward() accumulates into p.grad.
  Var param(Parameter& p);
  // Read-only view of a parameter value; never receives gradients, so
  // graphs over the same frozen parameters may run on separate threads.
  Var frozen(const Parameter& p);

  const Tensor& value(std::size_t id) const;
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool any_requires_grad(std::initializer_list<Var> vars) const;
  // Gradient buffer of a node; zero-initialised on first access. For
  // parameter nodes this is the Parameter's own accumulator.
  Tensor& grad(std::size_t id);

  // Accumulates d(loss)/d(param) into every reachable Parameter::grad.
  // Gradients are added to what is already there.
  void backward(Var loss);

  Var push(Tensor value, bool requires_grad, BackwardFn backward);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    Parameter* param = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

namespace ops {

Var matmul(Var a, Var b);
// Same shapes, or b a 1xn row broadcast over the rows of a.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var sigmoid(Var a);
Var tanh(Var a);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
// Rows of `table` selected by ids.
Var lookup(Var table, std::span<const int> ids);
// Sum over rows of weight_i * -log softmax(logits_i)[target_i]. Rows with
// weight 0 contribute nothing (padding).
Var softmax_cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights);
Var softmax_cross_entropy(Var logits, int target);
// Inverted dropout: surviving entries are scaled by 1 / (1 - rate).
Var dropout(Var a, double rate, std::mt19937_64& rng);
Var sum(Var a);
// Per-row dot product of equally shaped matrices: [B,n] x [B,n] -> [B,1].
Var row_dot(Var a, Var b);
Var softmax_rows(Var a);
// Scales row i of a ([B,n]) by s[i] ([B,1]).
Var mul_col(Var a, Var s);

}  // namespace ops

}  // namespace langtyp
