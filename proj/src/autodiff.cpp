#include "warmstart/autodiff.hpp"

#include <Eigen/Core>

#include <cmath>
#include <numeric>
#include <sstream>

namespace warmstart {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

namespace {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<const RowMatrix<T>> view(const Tensor<T>& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <class T>
Eigen::Map<RowMatrix<T>> view(Tensor<T>& t) {
  return {t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <class T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw Error(ErrorCode::dimension,
                std::string(op) + " expects rank " + std::to_string(rank) + ", got " + shape_string(t.shape()));
  }
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::dimension,
                std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

// --- Graph -----------------------------------------------------------------

template <class T>
Var Graph<T>::constant(Tensor<T> value) {
  if (!value.all_finite()) throw Error(ErrorCode::non_finite, "constant contains NaN or Inf");
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <class T>
Var Graph<T>::parameter(Parameter<T>& param) {
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) return Var{it->second};
  Node node;
  node.value = param.value;
  node.requires_grad = tracking_ && !param.frozen;
  node.param = &param;
  nodes_.push_back(std::move(node));
  param_nodes_.emplace(&param, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

template <class T>
Var Graph<T>::record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
  if (!value.all_finite()) throw Error(ErrorCode::non_finite, "op produced NaN or Inf");
  Node node;
  node.value = std::move(value);
  if (tracking_) {
    for (Var in : inputs) node.requires_grad = node.requires_grad || nodes_.at(in.id).requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <class T>
Tensor<T>& Graph<T>::grad_buffer(Var v) {
  Node& node = nodes_.at(v.id);
  if (!node.has_grad) {
    node.grad = Tensor<T>(node.value.shape());
    node.has_grad = true;
  }
  return node.grad;
}

template <class T>
const Tensor<T>* Graph<T>::grad(Var v) const {
  const Node& node = nodes_.at(v.id);
  return node.has_grad ? &node.grad : nullptr;
}

template <class T>
void Graph<T>::backward(Var loss) {
  if (!tracking_) throw Error(ErrorCode::dimension, "backward on a graph without gradient tracking");
  if (value(loss).size() != 1) {
    throw Error(ErrorCode::dimension, "backward expects a scalar loss, got " + shape_string(value(loss).shape()));
  }
  if (!requires_grad(loss)) return;
  grad_buffer(loss)[0] = T{1};
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.param != nullptr) {
      if (node.param->grad.shape() != node.value.shape()) node.param->grad = Tensor<T>(node.value.shape());
      add_into(node.param->grad, node.grad);
    }
  }
}

// --- elementwise -----------------------------------------------------------

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  const auto& x = g.value(a);
  const auto& y = g.value(b);
  require_same_shape(x, y, "add");
  Tensor<T> out = x;
  add_into(out, y);
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& dout) {
    if (g.requires_grad(a)) add_into(g.grad_buffer(a), dout);
    if (g.requires_grad(b)) add_into(g.grad_buffer(b), dout);
  });
}

template <class T>
Var add_bias(Graph<T>& g, Var x, Var bias) {
  const auto& in = g.value(x);
  const auto& b = g.value(bias);
  require_rank(in, 2, "add_bias");
  if (b.size() != in.cols()) {
    throw Error(ErrorCode::dimension, "add_bias: " + shape_string(in.shape()) + " + " + shape_string(b.shape()));
  }
  Tensor<T> out = in;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
  }
  return g.record(std::move(out), {x, bias}, [x, bias](Graph<T>& g, const Tensor<T>& dout) {
    if (g.requires_grad(x)) add_into(g.grad_buffer(x), dout);
    if (g.requires_grad(bias)) {
      auto& db = g.grad_buffer(bias);
      for (std::size_t r = 0; r < dout.rows(); ++r) {
        auto row = dout.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
      }
    }
  });
}

template <class T>
Var scale(Graph<T>& g, Var x, T factor) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.data()) v *= factor;
  return g.record(std::move(out), {x}, [x, factor](Graph<T>& g, const Tensor<T>& dout) {
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * dout[i];
  });
}

template <class T>
T gelu_value(T x) {
  const double v = x;
  return static_cast<T>(0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))));
}

template <class T>
Var gelu(Graph<T>& g, Var x) {
  const auto& in = g.value(x);
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = gelu_value(in[i]);
  return g.record(std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>& dout) {
    const auto& in = g.value(x);
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double v = in[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      dx[i] += static_cast<T>(d * dout[i]);
    }
  });
}

// --- matmul ----------------------------------------------------------------

template <class T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const auto& x = g.value(a);
  const auto& y = g.value(b);
  require_rank(x, 2, "matmul");
  require_rank(y, 2, "matmul");
  if (x.cols() != y.rows()) {
    throw Error(ErrorCode::dimension, "matmul: " + shape_string(x.shape()) + " x " + shape_string(y.shape()));
  }
  Tensor<T> out({x.rows(), y.cols()});
  view(out).noalias() = view(x) * view(y);
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& dout) {
    if (g.requires_grad(a)) view(g.grad_buffer(a)).noalias() += view(dout) * view(g.value(b)).transpose();
    if (g.requires_grad(b)) view(g.grad_buffer(b)).noalias() += view(g.value(a)).transpose() * view(dout);
  });
}

template <class T>
Var matmul_bt(Graph<T>& g, Var a, Var b) {
  const auto& x = g.value(a);
  const auto& y = g.value(b);
  require_rank(x, 2, "matmul_bt");
  require_rank(y, 2, "matmul_bt");
  if (x.cols() != y.cols()) {
    throw Error(ErrorCode::dimension,
                "matmul_bt: " + shape_string(x.shape()) + " x " + shape_string(y.shape()) + "^T");
  }
  Tensor<T> out({x.rows(), y.rows()});
  view(out).noalias() = view(x) * view(y).transpose();
  return g.record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& dout) {
    if (g.requires_grad(a)) view(g.grad_buffer(a)).noalias() += view(dout) * view(g.value(b));
    if (g.requires_grad(b)) view(g.grad_buffer(b)).noalias() += view(dout).transpose() * view(g.value(a));
  });
}

// --- normalization ---------------------------------------------------------

template <class T>
Var layer_norm(Graph<T>& g, Var x, Var gain, Var bias, T epsilon) {
  const auto& in = g.value(x);
  const auto& gam = g.value(gain);
  const auto& bet = g.value(bias);
  require_rank(in, 2, "layer_norm");
  const std::size_t n = in.rows();
  const std::size_t h = in.cols();
  if (gam.size() != h || bet.size() != h) {
    throw Error(ErrorCode::dimension, "layer_norm: gain/bias extent does not match " + shape_string(in.shape()));
  }
  Tensor<T> out({n, h});
  std::vector<T> xhat(n * h);
  std::vector<T> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = in.row(r);
    double mean = 0.0;
    for (auto v : row) mean += v;
    mean /= static_cast<double>(h);
    double var = 0.0;
    for (auto v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(h);
    const double istd = 1.0 / std::sqrt(var + static_cast<double>(epsilon));
    inv_std[r] = static_cast<T>(istd);
    for (std::size_t c = 0; c < h; ++c) {
      const T xh = static_cast<T>((row[c] - mean) * istd);
      xhat[r * h + c] = xh;
      out.at(r, c) = gam[c] * xh + bet[c];
    }
  }
  return g.record(std::move(out), {x, gain, bias},
                  [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), n, h](
                      Graph<T>& g, const Tensor<T>& dout) {
                    const auto& gam = g.value(gain);
                    if (g.requires_grad(gain) || g.requires_grad(bias)) {
                      auto& dg = g.grad_buffer(gain);
                      auto& db = g.grad_buffer(bias);
                      for (std::size_t r = 0; r < n; ++r) {
                        for (std::size_t c = 0; c < h; ++c) {
                          dg[c] += dout.at(r, c) * xhat[r * h + c];
                          db[c] += dout.at(r, c);
                        }
                      }
                    }
                    if (!g.requires_grad(x)) return;
                    auto& dx = g.grad_buffer(x);
                    for (std::size_t r = 0; r < n; ++r) {
                      double mean_d = 0.0;
                      double mean_dx = 0.0;
                      for (std::size_t c = 0; c < h; ++c) {
                        const double d = static_cast<double>(dout.at(r, c)) * gam[c];
                        mean_d += d;
                        mean_dx += d * xhat[r * h + c];
                      }
                      mean_d /= static_cast<double>(h);
                      mean_dx /= static_cast<double>(h);
                      for (std::size_t c = 0; c < h; ++c) {
                        const double d = static_cast<double>(dout.at(r, c)) * gam[c];
                        dx.at(r, c) += static_cast<T>(inv_std[r] * (d - mean_d - xhat[r * h + c] * mean_dx));
                      }
                    }
                  });
}

template <class T>
Var softmax(Graph<T>& g, Var x, std::size_t axis) {
  const auto& in = g.value(x);
  if (axis >= in.rank()) {
    throw Error(ErrorCode::dimension, "softmax axis " + std::to_string(axis) + " on " + shape_string(in.shape()));
  }
  const auto& shape = in.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, static_cast<double>(in[base + j * inner]));
      double sum = 0.0;
      for (std::size_t j = 0; j < len; ++j) sum += std::exp(in[base + j * inner] - mx);
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] = static_cast<T>(std::exp(in[base + j * inner] - mx) / sum);
    }
  }
  Tensor<T> probs = out;
  return g.record(std::move(out), {x},
                  [x, probs = std::move(probs), outer, inner, len](Graph<T>& g, const Tensor<T>& dout) {
                    auto& dx = g.grad_buffer(x);
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t i = 0; i < inner; ++i) {
                        const std::size_t base = o * len * inner + i;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < len; ++j) dot += static_cast<double>(dout[base + j * inner]) * probs[base + j * inner];
                        for (std::size_t j = 0; j < len; ++j) {
                          const std::size_t k = base + j * inner;
                          dx[k] += static_cast<T>(probs[k] * (dout[k] - dot));
                        }
                      }
                    }
                  });
}

// --- losses and lookups -------------------------------------------------------

template <class T>
Var cross_entropy(Graph<T>& g, Var logits, std::span<const std::int32_t> targets,
                  std::span<const std::uint8_t> mask) {
  const auto& in = g.value(logits);
  require_rank(in, 2, "cross_entropy");
  const std::size_t n = in.rows();
  const std::size_t v = in.cols();
  if (targets.size() != n || (!mask.empty() && mask.size() != n)) {
    throw Error(ErrorCode::dimension, "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                          shape_string(in.shape()) + " logits");
  }
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> keep = mask.empty() ? std::vector<std::uint8_t>(n, 1)
                                                 : std::vector<std::uint8_t>(mask.begin(), mask.end());
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!keep[r]) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= v) {
      throw Error(ErrorCode::id, "target id " + std::to_string(tgt[r]) + " outside vocabulary of " + std::to_string(v));
    }
    auto row = in.row(r);
    double mx = -INFINITY;
    for (auto x : row) mx = std::max(mx, static_cast<double>(x));
    double sum = 0.0;
    for (auto x : row) sum += std::exp(x - mx);
    total += (std::log(sum) + mx) - row[static_cast<std::size_t>(tgt[r])];
    ++count;
  }
  if (count == 0) throw Error(ErrorCode::degenerate, "cross_entropy over an empty unmasked set");
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(count)));
  return g.record(std::move(out), {logits},
                  [logits, tgt = std::move(tgt), keep = std::move(keep), count](Graph<T>& g, const Tensor<T>& dout) {
                    const auto& in = g.value(logits);
                    auto& dx = g.grad_buffer(logits);
                    const double w = static_cast<double>(dout[0]) / static_cast<double>(count);
                    for (std::size_t r = 0; r < in.rows(); ++r) {
                      if (!keep[r]) continue;
                      auto row = in.row(r);
                      auto drow = dx.row(r);
                      double mx = -INFINITY;
                      for (auto x : row) mx = std::max(mx, static_cast<double>(x));
                      double sum = 0.0;
                      for (auto x : row) sum += std::exp(x - mx);
                      for (std::size_t c = 0; c < row.size(); ++c) {
                        double p = std::exp(row[c] - mx) / sum;
                        if (static_cast<std::int32_t>(c) == tgt[r]) p -= 1.0;
                        drow[c] += static_cast<T>(w * p);
                      }
                    }
                  });
}

template <class T>
Var embedding(Graph<T>& g, Var table, std::span<const std::int32_t> ids) {
  const auto& tab = g.value(table);
  require_rank(tab, 2, "embedding");
  const std::size_t h = tab.cols();
  Tensor<T> out({ids.size(), h});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tab.rows()) {
      throw Error(ErrorCode::id, "id " + std::to_string(ids[i]) + " outside table of " + std::to_string(tab.rows()) + " rows");
    }
    auto src = tab.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  return g.record(std::move(out), {table}, [table, idx = std::move(idx)](Graph<T>& g, const Tensor<T>& dout) {
    auto& dt = g.grad_buffer(table);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = dt.row(static_cast<std::size_t>(idx[i]));
      auto src = dout.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  });
}

template <class T>
Var select_rows(Graph<T>& g, Var x, std::span<const std::size_t> rows) {
  const auto& in = g.value(x);
  require_rank(in, 2, "select_rows");
  Tensor<T> out({rows.size(), in.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= in.rows()) throw Error(ErrorCode::dimension, "select_rows: row " + std::to_string(rows[i]) + " out of range");
    auto src = in.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return g.record(std::move(out), {x}, [x, idx = std::move(idx)](Graph<T>& g, const Tensor<T>& dout) {
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = dx.row(idx[i]);
      auto src = dout.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  });
}

template <class T>
Var dropout(Graph<T>& g, Var x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw Error(ErrorCode::config, "dropout rate must be below 1");
  const auto& in = g.value(x);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(in.size());
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) {
    mask[i] = uniform01(rng) < rate ? T{0} : keep_scale;
    out[i] = in[i] * mask[i];
  }
  return g.record(std::move(out), {x}, [x, mask = std::move(mask)](Graph<T>& g, const Tensor<T>& dout) {
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[i] * mask[i];
  });
}

template <class T>
Var weighted_sum(Graph<T>& g, Var x, const Tensor<T>& weights) {
  const auto& in = g.value(x);
  require_same_shape(in, weights, "weighted_sum");
  double total = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) total += static_cast<double>(in[i]) * weights[i];
  return g.record(Tensor<T>::scalar(static_cast<T>(total)), {x}, [x, weights](Graph<T>& g, const Tensor<T>& dout) {
    auto& dx = g.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dout[0] * weights[i];
  });
}

// --- attention ---------------------------------------------------------------

template <class T>
Var attention(Graph<T>& g, Var q, Var k, Var v, const AttentionSpec& spec, Rng* rng) {
  const auto& Q = g.value(q);
  const auto& K = g.value(k);
  const auto& V = g.value(v);
  require_rank(Q, 2, "attention");
  require_rank(K, 2, "attention");
  require_rank(V, 2, "attention");
  const std::size_t B = spec.batch, Tq = spec.query_len, Tk = spec.key_len, H = spec.heads;
  const std::size_t hidden = Q.cols();
  if (H == 0 || hidden % H != 0 || K.cols() != hidden || V.cols() != hidden || Q.rows() != B * Tq ||
      K.rows() != B * Tk || V.rows() != B * Tk) {
    throw Error(ErrorCode::dimension, "attention: q " + shape_string(Q.shape()) + ", k " + shape_string(K.shape()) +
                                          ", v " + shape_string(V.shape()) + " for batch " + std::to_string(B));
  }
  if (!spec.key_valid.empty() && spec.key_valid.size() != B * Tk) {
    throw Error(ErrorCode::shape, "attention key mask has " + std::to_string(spec.key_valid.size()) +
                                      " entries for " + std::to_string(B * Tk) + " keys");
  }
  if (spec.causal && Tq != Tk) throw Error(ErrorCode::shape, "causal attention needs equal query and key lengths");
  const std::size_t d = hidden / H;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const bool use_dropout = spec.dropout > 0.0 && rng != nullptr;
  const double keep_scale = use_dropout ? 1.0 / (1.0 - spec.dropout) : 1.0;

  // probs[((b * H + h) * Tq + i) * Tk + j]; masked entries are exactly zero.
  std::vector<T> probs(B * H * Tq * Tk, T{0});
  std::vector<T> dropped;
  if (use_dropout) dropped.assign(probs.size(), T{0});
  std::vector<double> scores(Tk);
  Tensor<T> out({B * Tq, hidden});

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * d;
      for (std::size_t i = 0; i < Tq; ++i) {
        const T* qrow = Q.row(b * Tq + i).data() + off;
        const std::size_t limit = spec.causal ? i + 1 : Tk;
        T* prow = probs.data() + ((b * H + h) * Tq + i) * Tk;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < limit; ++j) {
          if (!spec.key_valid.empty() && !spec.key_valid[b * Tk + j]) continue;
          const T* krow = K.row(b * Tk + j).data() + off;
          double s = 0.0;
          for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(qrow[c]) * krow[c];
          scores[j] = s * inv_sqrt_d;
          mx = std::max(mx, scores[j]);
        }
        if (mx == -INFINITY) continue;  // no visible key: output row stays zero
        double sum = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
          if (!spec.key_valid.empty() && !spec.key_valid[b * Tk + j]) continue;
          scores[j] = std::exp(scores[j] - mx);
          sum += scores[j];
        }
        T* orow = out.row(b * Tq + i).data() + off;
        for (std::size_t j = 0; j < limit; ++j) {
          if (!spec.key_valid.empty() && !spec.key_valid[b * Tk + j]) continue;
          prow[j] = static_cast<T>(scores[j] / sum);
          T pj = prow[j];
          if (use_dropout) {
            pj = uniform01(*rng) < spec.dropout ? T{0} : static_cast<T>(prow[j] * keep_scale);
            dropped[((b * H + h) * Tq + i) * Tk + j] = pj;
          }
          if (pj == T{0}) continue;
          const T* vrow = V.row(b * Tk + j).data() + off;
          for (std::size_t c = 0; c < d; ++c) orow[c] += pj * vrow[c];
        }
      }
    }
  }

  return g.record(
      std::move(out), {q, k, v},
      [q, k, v, B, Tq, Tk, H, d, inv_sqrt_d, keep_scale, probs = std::move(probs), dropped = std::move(dropped)](
          Graph<T>& g, const Tensor<T>& dout) {
        const auto& Q = g.value(q);
        const auto& K = g.value(k);
        const auto& V = g.value(v);
        const bool need_q = g.requires_grad(q);
        const bool need_k = g.requires_grad(k);
        const bool need_v = g.requires_grad(v);
        Tensor<T>* dQ = need_q ? &g.grad_buffer(q) : nullptr;
        Tensor<T>* dK = need_k ? &g.grad_buffer(k) : nullptr;
        Tensor<T>* dV = need_v ? &g.grad_buffer(v) : nullptr;
        const bool use_dropout = !dropped.empty();
        std::vector<double> dp(Tk);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            const std::size_t off = h * d;
            for (std::size_t i = 0; i < Tq; ++i) {
              const std::size_t base = ((b * H + h) * Tq + i) * Tk;
              const T* prow = probs.data() + base;
              const T* dorow = dout.row(b * Tq + i).data() + off;
              double dot = 0.0;
              for (std::size_t j = 0; j < Tk; ++j) {
                dp[j] = 0.0;
                if (prow[j] == T{0}) continue;
                const T* vrow = V.row(b * Tk + j).data() + off;
                double s = 0.0;
                for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(dorow[c]) * vrow[c];
                const T pused = use_dropout ? dropped[base + j] : prow[j];
                if (use_dropout) s = pused == T{0} ? 0.0 : s * keep_scale;
                dp[j] = s;
                dot += s * prow[j];
                if (dV != nullptr && pused != T{0}) {
                  T* dvrow = dV->row(b * Tk + j).data() + off;
                  for (std::size_t c = 0; c < d; ++c) dvrow[c] += pused * dorow[c];
                }
              }
              if (dQ == nullptr && dK == nullptr) continue;
              const T* qrow = Q.row(b * Tq + i).data() + off;
              T* dqrow = dQ != nullptr ? dQ->row(b * Tq + i).data() + off : nullptr;
              for (std::size_t j = 0; j < Tk; ++j) {
                if (prow[j] == T{0}) continue;
                const double ds = prow[j] * (dp[j] - dot) * inv_sqrt_d;
                const T* krow = K.row(b * Tk + j).data() + off;
                if (dqrow != nullptr) {
                  for (std::size_t c = 0; c < d; ++c) dqrow[c] += static_cast<T>(ds * krow[c]);
                }
                if (dK != nullptr) {
                  T* dkrow = dK->row(b * Tk + j).data() + off;
                  for (std::size_t c = 0; c < d; ++c) dkrow[c] += static_cast<T>(ds * qrow[c]);
                }
              }
            }
          }
        }
      });
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
  require_rank(x, 2, "log_softmax_rows");
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mx = -INFINITY;
    for (auto v : row) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (auto v : row) sum += std::exp(v - mx);
    const double lse = std::log(sum) + mx;
    auto orow = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) orow[c] = static_cast<T>(row[c] - lse);
  }
  return out;
}

#define WARMSTART_INSTANTIATE(T)                                                                          \
  template class Graph<T>;                                                                                \
  template Var add<T>(Graph<T>&, Var, Var);                                                               \
  template Var add_bias<T>(Graph<T>&, Var, Var);                                                          \
  template Var scale<T>(Graph<T>&, Var, T);                                                               \
  template Var matmul<T>(Graph<T>&, Var, Var);                                                            \
  template Var matmul_bt<T>(Graph<T>&, Var, Var);                                                         \
  template Var gelu<T>(Graph<T>&, Var);                                                                   \
  template Var layer_norm<T>(Graph<T>&, Var, Var, Var, T);                                                \
  template Var softmax<T>(Graph<T>&, Var, std::size_t);                                                   \
  template Var cross_entropy<T>(Graph<T>&, Var, std::span<const std::int32_t>, std::span<const std::uint8_t>); \
  template Var embedding<T>(Graph<T>&, Var, std::span<const std::int32_t>);                               \
  template Var select_rows<T>(Graph<T>&, Var, std::span<const std::size_t>);                              \
  template Var dropout<T>(Graph<T>&, Var, double, Rng&);                                                  \
  template Var attention<T>(Graph<T>&, Var, Var, Var, const AttentionSpec&, Rng*);                        \
  template Var weighted_sum<T>(Graph<T>&, Var, const Tensor<T>&);                                         \
  template Tensor<T> log_softmax_rows<T>(const Tensor<T>&);                                               \
  template T gelu_value<T>(T);

WARMSTART_INSTANTIATE(float)
WARMSTART_INSTANTIATE(double)

#undef WARMSTART_INSTANTIATE

}  // namespace warmstart
