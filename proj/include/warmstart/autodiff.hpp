#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Graph records every op in creation order; backward() replays the tape in
// reverse, so each recorded op is visited exactly once. Parameters enter the
// graph as leaves and receive their accumulated gradient in Parameter::grad.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "warmstart/random.hpp"
#include "warmstart/tensor.hpp"

namespace warmstart {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;

  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T{0}); }
};

template <class T>
using ParamPtr = std::shared_ptr<Parameter<T>>;

struct Var {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

template <class T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor<T>& grad_out)>;

  // With tracking off the graph evaluates values only (inference).
  explicit Graph(bool track_gradients = true) : tracking_(track_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool tracking() const noexcept { return tracking_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor<T> value);
  Var parameter(Parameter<T>& param);

  // Appends an op output. `backward` is kept only when some input needs a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient accumulator of v, zero-initialized on first use.
  Tensor<T>& grad_buffer(Var v);
  // Null when no gradient flowed into v.
  const Tensor<T>* grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable parameter.
  void backward(Var loss);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
    Parameter<T>* param = nullptr;
  };

  bool tracking_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

// Masking and layout for fused multi-head attention. Rows of q are laid out
// as [batch * query_len, hidden], rows of k and v as [batch * key_len, hidden].
struct AttentionSpec {
  std::size_t batch = 1;
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::size_t heads = 1;
  std::vector<std::uint8_t> key_valid;  // batch * key_len; empty means all valid
  bool causal = false;                  // query i sees keys j <= i
  double dropout = 0.0;                 // on attention probabilities
};

// --- ops -------------------------------------------------------------------

template <class T> Var add(Graph<T>& g, Var a, Var b);
// x[n, m] + bias[m] broadcast over rows.
template <class T> Var add_bias(Graph<T>& g, Var x, Var bias);
template <class T> Var scale(Graph<T>& g, Var x, T factor);
template <class T> Var matmul(Graph<T>& g, Var a, Var b);
// a[m, k] times the transpose of b[n, k].
template <class T> Var matmul_bt(Graph<T>& g, Var a, Var b);
// Tanh approximation of GELU.
template <class T> Var gelu(Graph<T>& g, Var x);
template <class T> Var layer_norm(Graph<T>& g, Var x, Var gain, Var bias, T epsilon = T(1e-12));
template <class T> Var softmax(Graph<T>& g, Var x, std::size_t axis);
// Mean negative log-likelihood over rows with mask != 0.
template <class T>
Var cross_entropy(Graph<T>& g, Var logits, std::span<const std::int32_t> targets,
                  std::span<const std::uint8_t> mask);
// Row lookup: table[v, h] indexed by ids -> [ids.size(), h].
template <class T> Var embedding(Graph<T>& g, Var table, std::span<const std::int32_t> ids);
template <class T> Var select_rows(Graph<T>& g, Var x, std::span<const std::size_t> rows);
template <class T> Var dropout(Graph<T>& g, Var x, double rate, Rng& rng);
template <class T>
Var attention(Graph<T>& g, Var q, Var k, Var v, const AttentionSpec& spec, Rng* rng = nullptr);
// sum(x * weights), a scalar; weights are constants.
template <class T> Var weighted_sum(Graph<T>& g, Var x, const Tensor<T>& weights);

// Row-wise log-softmax on plain values (no graph).
template <class T> Tensor<T> log_softmax_rows(const Tensor<T>& x);

template <class T> T gelu_value(T x);

}  // namespace warmstart
