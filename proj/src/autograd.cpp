#include "langtyp/autograd.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "langtyp/error.hpp"

namespace langtyp {

Parameter& ParameterSet::add(std::string name, Tensor init) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->grad = Tensor(init.shape(), 0.0);
  p->value = std::move(init);
  p->name = name;
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("no parameter named " + name);
  return *params_[it->second];
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("no parameter named " + name);
  return *params_[it->second];
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

double ParameterSet::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_)
    for (double g : p->grad.values()) sq += g * g;
  return std::sqrt(sq);
}

double ParameterSet::clip_grad_norm(double max_norm) {
  double norm = grad_norm();
  if (max_norm > 0.0 && norm > max_norm) {
    double factor = max_norm / norm;
    for (auto& p : params_)
      for (double& g : p->grad.values()) g *= factor;
  }
  return norm;
}

Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Graph::param(Parameter& p) {
  Node n;
  n.param = &p;
  n.ref = &p.value;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::frozen(const Parameter& p) {
  Node n;
  n.ref = &p.value;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.value;
}

bool Graph::any_requires_grad(std::initializer_list<Var> vars) const {
  return std::any_of(vars.begin(), vars.end(), [&](Var v) { return nodes_[v.id].requires_grad; });
}

Tensor& Graph::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

Var Graph::push(Tensor value, bool requires_grad, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ValidationError("backward: variable belongs to another graph");
  if (value(loss.id).size() != 1)
    throw ValidationError("backward: loss must be a scalar, got shape " + value(loss.id).shape_string());
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || !n.has_grad) continue;
    n.backward(*this, i);
  }
}

namespace ops {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ValidationError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}

void require_matrix(const char* op, const Tensor& a) {
  if (!a.is_matrix()) throw ValidationError(std::string(op) + ": expected a matrix, got " + a.shape_string());
}

template <typename F, typename D>
Var unary(Var a, F f, D dfdy_from_y) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return g.push(std::move(y), g.requires_grad(a.id), [a, dfdy_from_y](Graph& g, std::size_t self) {
    const Tensor& y = g.value(self);
    const Tensor& gy = g.grad(self);
    Tensor& ga = g.grad(a.id);
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += gy[i] * dfdy_from_y(y[i]);
  });
}

}  // namespace

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<RowMajor> mat(Tensor& t, std::size_t r, std::size_t c) {
  return {t.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}
Eigen::Map<const RowMajor> cmat(const Tensor& t, std::size_t r, std::size_t c) {
  return {t.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix("matmul", A);
  require_matrix("matmul", B);
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::matrix(m, n);
  mat(C, m, n).noalias() = cmat(A, m, k) * cmat(B, k, n);
  return g.push(std::move(C), g.any_requires_grad({a, b}), [a, b, m, k, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad(self);
    if (g.requires_grad(a.id)) mat(g.grad(a.id), m, k).noalias() += cmat(G, m, n) * cmat(g.value(b.id), k, n).transpose();
    if (g.requires_grad(b.id)) mat(g.grad(b.id), k, n).noalias() += cmat(g.value(a.id), m, k).transpose() * cmat(G, m, n);
  });
}

Var add(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const bool broadcast = !A.same_shape(B);
  if (broadcast && !(A.is_matrix() && B.is_matrix() && B.rows() == 1 && B.cols() == A.cols()))
    shape_error("add", A, B);
  Tensor C = A;
  const std::size_t n = A.cols();
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += broadcast ? B[i % n] : B[i];
  return g.push(std::move(C), g.any_requires_grad({a, b}), [a, b, broadcast, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad(self);
    if (g.requires_grad(a.id)) {
      Tensor& gA = g.grad(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) gA[i] += G[i];
    }
    if (g.requires_grad(b.id)) {
      Tensor& gB = g.grad(b.id);
      for (std::size_t i = 0; i < G.size(); ++i) gB[broadcast ? i % n : i] += G[i];
    }
  });
}

Var sub(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!A.same_shape(B)) shape_error("sub", A, B);
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  return g.push(std::move(C), g.any_requires_grad({a, b}), [a, b](Graph& g, std::size_t self) {
    const Tensor& G = g.grad(self);
    if (g.requires_grad(a.id)) {
      Tensor& gA = g.grad(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) gA[i] += G[i];
    }
    if (g.requires_grad(b.id)) {
      Tensor& gB = g.grad(b.id);
      for (std::size_t i = 0; i < G.size(); ++i) gB[i] -= G[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!A.same_shape(B)) shape_error("mul", A, B);
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  return g.push(std::move(C), g.any_requires_grad({a, b}), [a, b](Graph& g, std::size_t self) {
    const Tensor& G = g.grad(self);
    const Tensor& A = g.value(a.id);
    const Tensor& B = g.value(b.id);
    if (g.requires_grad(a.id)) {
      Tensor& gA = g.grad(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) gA[i] += G[i] * B[i];
    }
    if (g.requires_grad(b.id)) {
      Tensor& gB = g.grad(b.id);
      for (std::size_t i = 0; i < G.size(); ++i) gB[i] += G[i] * A[i];
    }
  });
}

Var scale(Var a, double s) {
  Graph& g = *a.graph;
  Tensor C = a.value();
  for (double& v : C.values()) v *= s;
  return g.push(std::move(C), g.requires_grad(a.id), [a, s](Graph& g, std::size_t self) {
    const Tensor& G = g.grad(self);
    Tensor& gA = g.grad(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) gA[i] += G[i] * s;
  });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double y) { return 1.0 - y * y; });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  Graph& g = *parts[0].graph;
  const std::size_t rows = parts[0].value().rows();
  std::size_t total = 0;
  bool needs = false;
  for (const Var& p : parts) {
    require_matrix("concat_cols", p.value());
    if (p.value().rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
    total += p.value().cols();
    needs = needs || g.requires_grad(p.id);
  }
  Tensor C = Tensor::matrix(rows, total);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& P = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(P.data() + r * P.cols(), P.cols(), C.data() + r * total + offset);
    offset += P.cols();
  }
  return g.push(std::move(C), needs, [parts, rows, total](Graph& g, std::size_t self) {
    const Tensor& G = g.grad(self);
    std::size_t offset = 0;
    for (const Var& p : parts) {
      const std::size_t w = g.value(p.id).cols();
      if (g.requires_grad(p.id)) {
        Tensor& gp = g.grad(p.id);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) gp.data()[r * w + j] += G.data()[r * total + offset + j];
      }
      offset += w;
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Graph& g = *a.graph;
  const Tensor& A = a.value();
  require_matrix("slice_cols", A);
  if (begin + count > A.cols())
    throw ValidationError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") out of range for " + A.shape_string());
  const std::size_t rows = A.rows(), width = A.cols();
  Tensor C = Tensor::matrix(rows, count);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(A.data() + r * width + begin, count, C.data() + r * count);
  return g.push(std::move(C), g.requires_grad(a.id), [a, begin, count, rows, width](Graph& g, std::size_t self) {
    const Tensor& G = g.grad(self);
    Tensor& gA = g.grad(a.id);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < count; ++j) gA.data()[r * width + begin + j] += G.data()[r * count + j];
  });
}

Var lookup(Var table, std::span<const int> ids) {
  Graph& g = *table.graph;
  const Tensor& T = table.value();
  require_matrix("lookup", T);
  const std::size_t width = T.cols();
  Tensor C = Tensor::matrix(ids.size(), width);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= T.rows())
      throw ValidationError("lookup: id " + std::to_string(ids[r]) + " out of range for table " + T.shape_string());
    std::copy_n(T.data() + static_cast<std::size_t>(ids[r]) * width, width, C.data() + r * width);
  }
  std::vector<int> rows(ids.begin(), ids.end());
  return g.push(std::move(C), g.requires_grad(table.id), [table, rows, width](Graph& g, std::size_t self) {
    const Tensor& G = g.grad(self);
    Tensor& gT = g.grad(table.id);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double* dst = gT.data() + static_cast<std::size_t>(rows[r]) * width;
      const double* src = G.data() + r * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
    }
  });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets, std::span<const double> weights) {
  Graph& g = *logits.graph;
  const Tensor& L = logits.value();
  require_matrix("softmax_cross_entropy", L);
  const std::size_t rows = L.rows(), n = L.cols();
  if (targets.size() != rows || weights.size() != rows)
    throw ValidationError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets and " +
                          std::to_string(weights.size()) + " weights for logits " + L.shape_string());
  Tensor probs = Tensor::matrix(rows, n);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= n)
      throw ValidationError("softmax_cross_entropy: target " + std::to_string(targets[r]) + " out of range for " +
                            L.shape_string());
    const double* row = L.data() + r * n;
    double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) probs.data()[r * n + j] = std::exp(row[j] - lse);
    if (weights[r] != 0.0) loss += weights[r] * (lse - row[targets[r]]);
  }
  std::vector<int> t(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return g.push(Tensor::scalar(loss), g.requires_grad(logits.id),
                [logits, probs = std::move(probs), t = std::move(t), w = std::move(w), rows, n](Graph& g,
                                                                                               std::size_t self) {
                  const double gl = g.grad(self)[0];
                  Tensor& gL = g.grad(logits.id);
                  for (std::size_t r = 0; r < rows; ++r) {
                    if (w[r] == 0.0) continue;
                    const double c = gl * w[r];
                    for (std::size_t j = 0; j < n; ++j) gL.data()[r * n + j] += c * probs.data()[r * n + j];
                    gL.data()[r * n + static_cast<std::size_t>(t[r])] -= c;
                  }
                });
}

Var softmax_cross_entropy(Var logits, int target) {
  const int t[1] = {target};
  const double w[1] = {1.0};
  return softmax_cross_entropy(logits, t, w);
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return a;
  Graph& g = *a.graph;
  const Tensor& A = a.value();
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  std::vector<double> mask(A.size());
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) {
    mask[i] = keep(rng) ? s : 0.0;
    C[i] *= mask[i];
  }
  return g.push(std::move(C), g.requires_grad(a.id), [a, mask = std::move(mask)](Graph& g, std::size_t self) {
    const Tensor& G = g.grad(self);
    Tensor& gA = g.grad(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) gA[i] += G[i] * mask[i];
  });
}

Var sum(Var a) {
  Graph& g = *a.graph;
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return g.push(Tensor::scalar(s), g.requires_grad(a.id), [a](Graph& g, std::size_t self) {
    const double gs = g.grad(self)[0];
    for (double& v : g.grad(a.id).values()) v += gs;
  });
}

Var row_dot(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!A.same_shape(B) || !A.is_matrix()) shape_error("row_dot", A, B);
  const std::size_t rows = A.rows(), n = A.cols();
  Tensor C = Tensor::matrix(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += A.data()[r * n + j] * B.data()[r * n + j];
    C[r] = s;
  }
  return g.push(std::move(C), g.any_requires_grad({a, b}), [a, b, rows, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad(self);
    const Tensor& A = g.value(a.id);
    const Tensor& B = g.value(b.id);
    if (g.requires_grad(a.id)) {
      Tensor& gA = g.grad(a.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gA.data()[r * n + j] += G[r] * B.data()[r * n + j];
    }
    if (g.requires_grad(b.id)) {
      Tensor& gB = g.grad(b.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gB.data()[r * n + j] += G[r] * A.data()[r * n + j];
    }
  });
}

Var softmax_rows(Var a) {
  Graph& g = *a.graph;
  const Tensor& A = a.value();
  require_matrix("softmax_rows", A);
  const std::size_t rows = A.rows(), n = A.cols();
  Tensor C = Tensor::matrix(rows, n);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = A.data() + r * n;
    double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (C.data()[r * n + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) C.data()[r * n + j] /= z;
  }
  return g.push(std::move(C), g.requires_grad(a.id), [a, rows, n](Graph& g, std::size_t self) {
    const Tensor& Y = g.value(self);
    const Tensor& G = g.grad(self);
    Tensor& gA = g.grad(a.id);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += G.data()[r * n + j] * Y.data()[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gA.data()[r * n + j] += Y.data()[r * n + j] * (G.data()[r * n + j] - dot);
    }
  });
}

Var mul_col(Var a, Var s) {
  Graph& g = *a.graph;
  const Tensor& A = a.value();
  const Tensor& S = s.value();
  require_matrix("mul_col", A);
  if (!S.is_matrix() || S.rows() != A.rows() || S.cols() != 1) shape_error("mul_col", A, S);
  const std::size_t rows = A.rows(), n = A.cols();
  Tensor C = A;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) C.data()[r * n + j] *= S[r];
  return g.push(std::move(C), g.any_requires_grad({a, s}), [a, s, rows, n](Graph& g, std::size_t self) {
    const Tensor& G = g.grad(self);
    const Tensor& A = g.value(a.id);
    const Tensor& S = g.value(s.id);
    if (g.requires_grad(a.id)) {
      Tensor& gA = g.grad(a.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gA.data()[r * n + j] += G.data()[r * n + j] * S[r];
    }
    if (g.requires_grad(s.id)) {
      Tensor& gS = g.grad(s.id);
      for (std::size_t r = 0; r < rows; ++r) {
        double d = 0.0;
        for (std::size_t j = 0; j < n; ++j) d += G.data()[r * n + j] * A.data()[r * n + j];
        gS[r] += d;
      }
    }
  });
}

}  // namespace ops
}  // namespace langtyp
