#include "lrm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include <cblas-openblas.h>

extern "C" void openblas_set_num_threads(int);

namespace lrm {

namespace detail {

uint64_t next_node_id() {
  static std::atomic<uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

template <typename S>
void check_finite(const char* op, const std::vector<S>& v) {
  if constexpr (std::is_same_v<S, float>) {
    for (float x : v) {
      const uint32_t b = std::bit_cast<uint32_t>(x);
      if ((b & 0x7f800000u) == 0x7f800000u)
        throw Error(format_msg("non-finite value produced by op '", op, "'"));
    }
  } else {
    for (double x : v) {
      const uint64_t b = std::bit_cast<uint64_t>(x);
      if ((b & 0x7ff0000000000000ull) == 0x7ff0000000000000ull)
        throw Error(format_msg("non-finite value produced by op '", op, "'"));
    }
  }
}

namespace {

template <typename S>
using NodePtr = std::shared_ptr<detail::Node<S>>;

// Shared constructor for op outputs: prunes the graph when no input needs
// gradients, otherwise records parents and the backward closure.
template <typename S>
Tensor<S> make_node(const char* name, Shape shape, std::vector<S> value,
                    std::vector<Tensor<S>> parents,
                    std::function<void(detail::Node<S>&)> backward_fn) {
  LRM_REQUIRE(numel(shape) == static_cast<int64_t>(value.size()),
              "op '", name, "': shape ", shape_str(shape), " vs ", value.size(), " values");
  check_finite(name, value);
  auto n = std::make_shared<detail::Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = name;
  bool req = false;
  for (const auto& p : parents) req = req || p.requires_grad();
  if (req) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  n->id = detail::next_node_id();
  return Tensor<S>(std::move(n));
}

template <typename S>
void accumulate(detail::Node<S>& parent, const S* g, int64_t n) {
  auto& buf = parent.grad_buffer();
  for (int64_t i = 0; i < n; ++i) buf[i] += g[i];
}

// b broadcasts as a trailing suffix of a (or matches exactly).
inline void check_suffix(const char* op, const Shape& a, const Shape& b) {
  LRM_REQUIRE(b.size() <= a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin()),
              "op '", op, "': shape ", shape_str(b), " is not a trailing suffix of ", shape_str(a));
}

void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha, const float* a,
          int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
  static const bool single_thread = [] { openblas_set_num_threads(1); return true; }();
  (void)single_thread;
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha, const double* a,
          int64_t lda, const double* b, int64_t ldb, double beta, double* c, int64_t ldc) {
  static const bool single_thread = [] { openblas_set_num_threads(1); return true; }();
  (void)single_thread;
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

}  // namespace

// ---- construction ----

template <typename S>
Tensor<S> Tensor<S>::from_data(Shape shape, std::vector<S> data, bool requires_grad) {
  LRM_REQUIRE(numel(shape) == static_cast<int64_t>(data.size()),
              "from_data: shape ", shape_str(shape), " vs ", data.size(), " values");
  check_finite("leaf", data);
  auto n = std::make_shared<detail::Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  n->leaf = true;
  n->id = detail::next_node_id();
  return Tensor<S>(std::move(n));
}

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
  std::vector<S> d(static_cast<size_t>(numel(shape)), S(0));
  return from_data(std::move(shape), std::move(d), requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::full(Shape shape, S v, bool requires_grad) {
  std::vector<S> d(static_cast<size_t>(numel(shape)), v);
  return from_data(std::move(shape), std::move(d), requires_grad);
}

template <typename S>
Tensor<S> Tensor<S>::scalar(S v, bool requires_grad) {
  return from_data(Shape{1}, std::vector<S>{v}, requires_grad);
}

template <typename S>
const std::vector<S>& Tensor<S>::grad() const {
  return node_->grad_buffer();
}

// ---- backward driver ----

template <typename S>
void backward(const Tensor<S>& loss) {
  LRM_REQUIRE(loss.defined() && loss.size() == 1, "backward: loss must be a scalar");
  LRM_REQUIRE(loss.requires_grad(), "backward: loss does not depend on any differentiable leaf");
  check_finite("loss", loss.value());

  std::vector<detail::Node<S>*> order;
  std::unordered_set<detail::Node<S>*> seen;
  std::vector<detail::Node<S>*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  // Ids increase with creation order and parents are created before children,
  // so descending id is a reverse topological order.
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->id > b->id; });
  for (auto* n : order) {
    if (!n->leaf)
      n->grad.assign(n->value.size(), S(0));
    else
      n->grad_buffer();
  }
  loss.node()->grad_buffer()[0] += S(1);
  for (auto* n : order)
    if (n->backward_fn) n->backward_fn(*n);
}

// ---- elementwise ----

template <typename S, typename FwdOp>
static Tensor<S> binary_suffix_op(const char* name, const Tensor<S>& a, const Tensor<S>& b,
                                  FwdOp fwd,
                                  // per-element partials w.r.t. a and b
                                  S (*da)(S av, S bv), S (*db)(S av, S bv)) {
  check_suffix(name, a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  const int64_t n = a.size(), bs = b.size();
  std::vector<S> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i % bs]);
  return make_node<S>(name, a.shape(), std::move(out), {a, b},
                      [n, bs, da, db](detail::Node<S>& self) {
                        const auto& g = self.grad;
                        auto& pa = *self.parents[0];
                        auto& pb = *self.parents[1];
                        if (pa.requires_grad) {
                          auto& ga = pa.grad_buffer();
                          for (int64_t i = 0; i < n; ++i)
                            ga[i] += g[i] * da(pa.value[i], pb.value[i % bs]);
                        }
                        if (pb.requires_grad) {
                          auto& gb = pb.grad_buffer();
                          for (int64_t i = 0; i < n; ++i)
                            gb[i % bs] += g[i] * db(pa.value[i], pb.value[i % bs]);
                        }
                      });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_suffix_op<S>(
      "add", a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
      [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_suffix_op<S>(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
      [](S, S) { return S(-1); });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_suffix_op<S>(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S x, S y) { (void)x; return y; },
      [](S x, S y) { (void)y; return x; });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S k) {
  const auto& av = a.value();
  std::vector<S> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * k;
  return make_node<S>("scale", a.shape(), std::move(out), {a}, [k](detail::Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (size_t i = 0; i < self.grad.size(); ++i) g[i] += k * self.grad[i];
  });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S k) {
  const auto& av = a.value();
  std::vector<S> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + k;
  return make_node<S>("add_scalar", a.shape(), std::move(out), {a}, [](detail::Node<S>& self) {
    auto& p = *self.parents[0];
    if (p.requires_grad) accumulate(p, self.grad.data(), static_cast<int64_t>(self.grad.size()));
  });
}

template <typename S>
Tensor<S> square(const Tensor<S>& a) {
  const auto& av = a.value();
  std::vector<S> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * av[i];
  return make_node<S>("square", a.shape(), std::move(out), {a}, [](detail::Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (size_t i = 0; i < self.grad.size(); ++i) g[i] += S(2) * p.value[i] * self.grad[i];
  });
}

// ---- matmul ----

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool trans_a, bool trans_b) {
  LRM_REQUIRE(a.ndim() == 2 && b.ndim() == 2, "matmul: inputs must be 2-D, got ",
              shape_str(a.shape()), " and ", shape_str(b.shape()));
  const int64_t ra = a.dim(0), ca = a.dim(1), rb = b.dim(0), cb = b.dim(1);
  const int64_t m = trans_a ? ca : ra;
  const int64_t k = trans_a ? ra : ca;
  const int64_t kb = trans_b ? cb : rb;
  const int64_t n = trans_b ? rb : cb;
  LRM_REQUIRE(k == kb, "matmul: inner dims mismatch, op(a)=", m, "x", k, " op(b)=", kb, "x", n);
  std::vector<S> out(static_cast<size_t>(m * n), S(0));
  gemm(trans_a, trans_b, m, n, k, S(1), a.value().data(), ca, b.value().data(), cb, S(0),
       out.data(), n);
  return make_node<S>(
      "matmul", Shape{m, n}, std::move(out), {a, b},
      [trans_a, trans_b, m, n, k, ca, cb](detail::Node<S>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const S* A = pa.value.data();
        const S* B = pb.value.data();
        const S* G = self.grad.data();
        if (pa.requires_grad) {
          S* dA = pa.grad_buffer().data();
          if (!trans_a && !trans_b)      gemm(false, true, m, k, n, S(1), G, n, B, cb, S(1), dA, ca);
          else if (!trans_a && trans_b)  gemm(false, false, m, k, n, S(1), G, n, B, cb, S(1), dA, ca);
          else if (trans_a && !trans_b)  gemm(false, true, k, m, n, S(1), B, cb, G, n, S(1), dA, ca);
          else                           gemm(true, true, k, m, n, S(1), B, cb, G, n, S(1), dA, ca);
        }
        if (pb.requires_grad) {
          S* dB = pb.grad_buffer().data();
          if (!trans_a && !trans_b)      gemm(true, false, k, n, m, S(1), A, ca, G, n, S(1), dB, cb);
          else if (!trans_a && trans_b)  gemm(true, false, n, k, m, S(1), G, n, A, ca, S(1), dB, cb);
          else if (trans_a && !trans_b)  gemm(false, false, k, n, m, S(1), A, ca, G, n, S(1), dB, cb);
          else                           gemm(true, true, n, k, m, S(1), G, n, A, ca, S(1), dB, cb);
        }
      });
}

// ---- activations ----

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  const auto& xv = x.value();
  std::vector<S> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > S(0) ? xv[i] : S(0);
  return make_node<S>("relu", x.shape(), std::move(out), {x}, [](detail::Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (p.value[i] > S(0)) g[i] += self.grad[i];
  });
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
  // tanh form: 0.5 x (1 + tanh(c (x + 0.044715 x^3))), c = sqrt(2/pi)
  static constexpr S c = S(0.7978845608028654);
  static constexpr S a3 = S(0.044715);
  const auto& xv = x.value();
  std::vector<S> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) {
    const S v = xv[i];
    out[i] = S(0.5) * v * (S(1) + std::tanh(c * (v + a3 * v * v * v)));
  }
  return make_node<S>("gelu", x.shape(), std::move(out), {x}, [](detail::Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const S v = p.value[i];
      const S u = c * (v + a3 * v * v * v);
      const S t = std::tanh(u);
      const S du = c * (S(1) + S(3) * a3 * v * v);
      g[i] += self.grad[i] * (S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * du);
    }
  });
}

template <typename S>
static S stable_sigmoid(S v) {
  if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
  const S e = std::exp(v);
  return e / (S(1) + e);
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  const auto& xv = x.value();
  std::vector<S> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = stable_sigmoid(xv[i]);
  // capture y by value: backward needs only the output
  std::vector<S> y = out;
  return make_node<S>("sigmoid", x.shape(), std::move(out), {x},
                      [y = std::move(y)](detail::Node<S>& self) {
                        auto& p = *self.parents[0];
                        if (!p.requires_grad) return;
                        auto& g = p.grad_buffer();
                        for (size_t i = 0; i < self.grad.size(); ++i)
                          g[i] += self.grad[i] * y[i] * (S(1) - y[i]);
                      });
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
  const auto& xv = x.value();
  std::vector<S> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) {
    const S v = xv[i];
    out[i] = std::max(v, S(0)) + std::log1p(std::exp(-std::abs(v)));
  }
  return make_node<S>("softplus", x.shape(), std::move(out), {x}, [](detail::Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (size_t i = 0; i < self.grad.size(); ++i)
      g[i] += self.grad[i] * stable_sigmoid(p.value[i]);
  });
}

// ---- layer_norm ----

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, S eps) {
  LRM_REQUIRE(x.ndim() == 2, "layer_norm: x must be 2-D, got ", shape_str(x.shape()));
  const int64_t R = x.dim(0), d = x.dim(1);
  LRM_REQUIRE(weight.size() == d && bias.size() == d, "layer_norm: weight/bias must have ", d,
              " elements");
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const auto& bv = bias.value();
  std::vector<S> out(static_cast<size_t>(R * d));
  std::vector<S> xhat(static_cast<size_t>(R * d));
  std::vector<S> inv_std(static_cast<size_t>(R));
  for (int64_t r = 0; r < R; ++r) {
    const S* row = xv.data() + r * d;
    S mu = 0;
    for (int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= S(d);
    S var = 0;
    for (int64_t j = 0; j < d; ++j) {
      const S c = row[j] - mu;
      var += c * c;
    }
    var /= S(d);
    const S inv = S(1) / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (int64_t j = 0; j < d; ++j) {
      const S xh = (row[j] - mu) * inv;
      xhat[r * d + j] = xh;
      out[r * d + j] = xh * wv[j] + bv[j];
    }
  }
  return make_node<S>(
      "layer_norm", x.shape(), std::move(out), {x, weight, bias},
      [R, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<S>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& g = self.grad;
        const auto& wv = pw.value;
        if (pw.requires_grad) {
          auto& gw = pw.grad_buffer();
          for (int64_t r = 0; r < R; ++r)
            for (int64_t j = 0; j < d; ++j) gw[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          for (int64_t r = 0; r < R; ++r)
            for (int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (px.requires_grad) {
          auto& gx = px.grad_buffer();
          for (int64_t r = 0; r < R; ++r) {
            S m1 = 0, m2 = 0;  // mean(w*g), mean(w*g*xhat)
            for (int64_t j = 0; j < d; ++j) {
              const S wg = wv[j] * g[r * d + j];
              m1 += wg;
              m2 += wg * xhat[r * d + j];
            }
            m1 /= S(d);
            m2 /= S(d);
            for (int64_t j = 0; j < d; ++j)
              gx[r * d + j] +=
                  inv_std[r] * (wv[j] * g[r * d + j] - m1 - xhat[r * d + j] * m2);
          }
        }
      });
}

// ---- softmax ----

template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  LRM_REQUIRE(x.ndim() >= 1, "softmax: needs at least 1 dim");
  const int64_t d = x.shape().back();
  const int64_t R = x.size() / d;
  const auto& xv = x.value();
  std::vector<S> out(xv.size());
  for (int64_t r = 0; r < R; ++r) {
    const S* row = xv.data() + r * d;
    S* orow = out.data() + r * d;
    S mx = row[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    S z = 0;
    for (int64_t j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    const S iz = S(1) / z;
    for (int64_t j = 0; j < d; ++j) orow[j] *= iz;
  }
  std::vector<S> y = out;
  return make_node<S>("softmax", x.shape(), std::move(out), {x},
                      [R, d, y = std::move(y)](detail::Node<S>& self) {
                        auto& p = *self.parents[0];
                        if (!p.requires_grad) return;
                        auto& gx = p.grad_buffer();
                        const auto& g = self.grad;
                        for (int64_t r = 0; r < R; ++r) {
                          S dot = 0;
                          for (int64_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
                          for (int64_t j = 0; j < d; ++j)
                            gx[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
                        }
                      });
}

// ---- reductions ----

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S acc = 0;
  for (S v : x.value()) acc += v;
  return make_node<S>("sum", Shape{1}, std::vector<S>{acc}, {x}, [](detail::Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const S go = self.grad[0];
    for (auto& v : g) v += go;
  });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  LRM_REQUIRE(x.size() > 0, "mean: empty tensor");
  S acc = 0;
  for (S v : x.value()) acc += v;
  const S inv = S(1) / S(x.size());
  return make_node<S>("mean", Shape{1}, std::vector<S>{acc * inv}, {x},
                      [inv](detail::Node<S>& self) {
                        auto& p = *self.parents[0];
                        if (!p.requires_grad) return;
                        auto& g = p.grad_buffer();
                        const S go = self.grad[0] * inv;
                        for (auto& v : g) v += go;
                      });
}

// ---- shape ops ----

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  LRM_REQUIRE(numel(shape) == x.size(), "reshape: ", shape_str(x.shape()), " -> ",
              shape_str(shape), " changes element count");
  std::vector<S> out = x.value();
  return make_node<S>("reshape", std::move(shape), std::move(out), {x},
                      [](detail::Node<S>& self) {
                        auto& p = *self.parents[0];
                        if (p.requires_grad)
                          accumulate(p, self.grad.data(), static_cast<int64_t>(self.grad.size()));
                      });
}

template <typename S>
Tensor<S> transpose2d(const Tensor<S>& x) {
  LRM_REQUIRE(x.ndim() == 2, "transpose2d: input must be 2-D");
  const int64_t R = x.dim(0), C = x.dim(1);
  const auto& xv = x.value();
  std::vector<S> out(xv.size());
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) out[c * R + r] = xv[r * C + c];
  return make_node<S>("transpose2d", Shape{C, R}, std::move(out), {x},
                      [R, C](detail::Node<S>& self) {
                        auto& p = *self.parents[0];
                        if (!p.requires_grad) return;
                        auto& g = p.grad_buffer();
                        for (int64_t r = 0; r < R; ++r)
                          for (int64_t c = 0; c < C; ++c) g[r * C + c] += self.grad[c * R + r];
                      });
}

template <typename S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& xs) {
  LRM_REQUIRE(!xs.empty(), "concat_rows: empty input list");
  const int64_t C = xs[0].dim(1);
  int64_t R = 0;
  for (const auto& x : xs) {
    LRM_REQUIRE(x.ndim() == 2 && x.dim(1) == C, "concat_rows: column mismatch");
    R += x.dim(0);
  }
  std::vector<S> out;
  out.reserve(static_cast<size_t>(R * C));
  for (const auto& x : xs) out.insert(out.end(), x.value().begin(), x.value().end());
  return make_node<S>("concat_rows", Shape{R, C}, std::move(out), xs,
                      [](detail::Node<S>& self) {
                        size_t off = 0;
                        for (auto& pp : self.parents) {
                          auto& p = *pp;
                          if (p.requires_grad) {
                            auto& g = p.grad_buffer();
                            for (size_t i = 0; i < p.value.size(); ++i) g[i] += self.grad[off + i];
                          }
                          off += p.value.size();
                        }
                      });
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& xs) {
  LRM_REQUIRE(!xs.empty(), "concat_cols: empty input list");
  const int64_t R = xs[0].dim(0);
  int64_t C = 0;
  for (const auto& x : xs) {
    LRM_REQUIRE(x.ndim() == 2 && x.dim(0) == R, "concat_cols: row mismatch");
    C += x.dim(1);
  }
  std::vector<S> out(static_cast<size_t>(R * C));
  int64_t coff = 0;
  for (const auto& x : xs) {
    const int64_t c = x.dim(1);
    for (int64_t r = 0; r < R; ++r)
      std::memcpy(out.data() + r * C + coff, x.value().data() + r * c,
                  static_cast<size_t>(c) * sizeof(S));
    coff += c;
  }
  return make_node<S>("concat_cols", Shape{R, C}, std::move(out), xs,
                      [R, C](detail::Node<S>& self) {
                        int64_t coff = 0;
                        for (auto& pp : self.parents) {
                          auto& p = *pp;
                          const int64_t c = p.shape[1];
                          if (p.requires_grad) {
                            auto& g = p.grad_buffer();
                            for (int64_t r = 0; r < R; ++r)
                              for (int64_t j = 0; j < c; ++j)
                                g[r * c + j] += self.grad[r * C + coff + j];
                          }
                          coff += c;
                        }
                      });
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, int64_t r0, int64_t r1) {
  LRM_REQUIRE(x.ndim() == 2, "slice_rows: input must be 2-D");
  const int64_t R = x.dim(0), C = x.dim(1);
  LRM_REQUIRE(0 <= r0 && r0 <= r1 && r1 <= R, "slice_rows: range [", r0, ",", r1,
              ") out of bounds for ", R, " rows");
  std::vector<S> out(x.value().begin() + r0 * C, x.value().begin() + r1 * C);
  return make_node<S>("slice_rows", Shape{r1 - r0, C}, std::move(out), {x},
                      [r0, C](detail::Node<S>& self) {
                        auto& p = *self.parents[0];
                        if (!p.requires_grad) return;
                        auto& g = p.grad_buffer();
                        for (size_t i = 0; i < self.grad.size(); ++i)
                          g[static_cast<size_t>(r0 * C) + i] += self.grad[i];
                      });
}

template <typename S>
Tensor<S> select_cols(const Tensor<S>& x, const std::vector<int64_t>& cols) {
  LRM_REQUIRE(x.ndim() == 2, "select_cols: input must be 2-D");
  const int64_t R = x.dim(0), C = x.dim(1);
  const int64_t K = static_cast<int64_t>(cols.size());
  for (int64_t c : cols) LRM_REQUIRE(0 <= c && c < C, "select_cols: column ", c, " out of range");
  const auto& xv = x.value();
  std::vector<S> out(static_cast<size_t>(R * K));
  for (int64_t r = 0; r < R; ++r)
    for (int64_t j = 0; j < K; ++j) out[r * K + j] = xv[r * C + cols[j]];
  return make_node<S>("select_cols", Shape{R, K}, std::move(out), {x},
                      [R, C, K, cols](detail::Node<S>& self) {
                        auto& p = *self.parents[0];
                        if (!p.requires_grad) return;
                        auto& g = p.grad_buffer();
                        for (int64_t r = 0; r < R; ++r)
                          for (int64_t j = 0; j < K; ++j)
                            g[r * C + cols[j]] += self.grad[r * K + j];
                      });
}

template <typename S>
Tensor<S> scale_rows(const Tensor<S>& x, const Tensor<S>& w) {
  LRM_REQUIRE(x.ndim() == 2, "scale_rows: x must be 2-D");
  const int64_t R = x.dim(0), C = x.dim(1);
  LRM_REQUIRE(w.size() == R, "scale_rows: w must have ", R, " elements, got ", w.size());
  const auto& xv = x.value();
  const auto& wv = w.value();
  std::vector<S> out(xv.size());
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) out[r * C + c] = xv[r * C + c] * wv[r];
  return make_node<S>("scale_rows", x.shape(), std::move(out), {x, w},
                      [R, C](detail::Node<S>& self) {
                        auto& px = *self.parents[0];
                        auto& pw = *self.parents[1];
                        if (px.requires_grad) {
                          auto& gx = px.grad_buffer();
                          for (int64_t r = 0; r < R; ++r)
                            for (int64_t c = 0; c < C; ++c)
                              gx[r * C + c] += self.grad[r * C + c] * pw.value[r];
                        }
                        if (pw.requires_grad) {
                          auto& gw = pw.grad_buffer();
                          for (int64_t r = 0; r < R; ++r) {
                            S acc = 0;
                            for (int64_t c = 0; c < C; ++c)
                              acc += self.grad[r * C + c] * px.value[r * C + c];
                            gw[r] += acc;
                          }
                        }
                      });
}

template <typename S>
Tensor<S> row_l2_normalize(const Tensor<S>& x, S eps) {
  LRM_REQUIRE(x.ndim() == 2, "row_l2_normalize: x must be 2-D");
  const int64_t R = x.dim(0), C = x.dim(1);
  const auto& xv = x.value();
  std::vector<S> out(xv.size());
  std::vector<S> inv_r(static_cast<size_t>(R));
  for (int64_t r = 0; r < R; ++r) {
    S ss = eps;
    for (int64_t c = 0; c < C; ++c) ss += xv[r * C + c] * xv[r * C + c];
    const S inv = S(1) / std::sqrt(ss);
    inv_r[r] = inv;
    for (int64_t c = 0; c < C; ++c) out[r * C + c] = xv[r * C + c] * inv;
  }
  std::vector<S> y = out;
  return make_node<S>("row_l2_normalize", x.shape(), std::move(out), {x},
                      [R, C, inv_r = std::move(inv_r), y = std::move(y)](detail::Node<S>& self) {
                        auto& p = *self.parents[0];
                        if (!p.requires_grad) return;
                        auto& gx = p.grad_buffer();
                        const auto& g = self.grad;
                        for (int64_t r = 0; r < R; ++r) {
                          S dot = 0;
                          for (int64_t c = 0; c < C; ++c) dot += g[r * C + c] * y[r * C + c];
                          for (int64_t c = 0; c < C; ++c)
                            gx[r * C + c] += (g[r * C + c] - y[r * C + c] * dot) * inv_r[r];
                        }
                      });
}

// ---- bilinear_grid_sample ----

template <typename S>
Tensor<S> bilinear_grid_sample(const Tensor<S>& plane, const Tensor<S>& uv) {
  LRM_REQUIRE(plane.ndim() == 3, "bilinear_grid_sample: plane must be [H,W,C]");
  LRM_REQUIRE(uv.ndim() == 2 && uv.dim(1) == 2, "bilinear_grid_sample: uv must be [N,2]");
  const int64_t H = plane.dim(0), W = plane.dim(1), C = plane.dim(2), N = uv.dim(0);
  const auto& pv = plane.value();
  const auto& uvv = uv.value();
  std::vector<S> out(static_cast<size_t>(N * C));

  // align-corners mapping with border clamp; the lattice geometry is shared by
  // forward and backward, so it lives in one lambda.
  auto locate = [](S coord, int64_t extent, int64_t& i0, S& t, bool& interior) {
    S f = (coord + S(1)) * S(0.5) * S(extent - 1);
    interior = (f >= S(0) && f <= S(extent - 1));
    f = std::min(std::max(f, S(0)), S(extent - 1));
    if (extent == 1) {
      i0 = 0;
      t = 0;
      return;
    }
    i0 = std::min(static_cast<int64_t>(std::floor(f)), extent - 2);
    t = f - S(i0);
  };

  for (int64_t nidx = 0; nidx < N; ++nidx) {
    int64_t x0, y0;
    S tx, ty;
    bool ix, iy;
    locate(uvv[nidx * 2 + 0], W, x0, tx, ix);
    locate(uvv[nidx * 2 + 1], H, y0, ty, iy);
    const int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
    for (int64_t c = 0; c < C; ++c) {
      const S p00 = pv[(y0 * W + x0) * C + c], p01 = pv[(y0 * W + x1) * C + c];
      const S p10 = pv[(y1 * W + x0) * C + c], p11 = pv[(y1 * W + x1) * C + c];
      out[nidx * C + c] = (S(1) - ty) * ((S(1) - tx) * p00 + tx * p01) +
                          ty * ((S(1) - tx) * p10 + tx * p11);
    }
  }
  return make_node<S>(
      "bilinear_grid_sample", Shape{N, C}, std::move(out), {plane, uv},
      [H, W, C, N, locate](detail::Node<S>& self) {
        auto& pp = *self.parents[0];
        auto& pu = *self.parents[1];
        const auto& pv = pp.value;
        const auto& uvv = pu.value;
        const auto& g = self.grad;
        auto* gp = pp.requires_grad ? pp.grad_buffer().data() : nullptr;
        auto* gu = pu.requires_grad ? pu.grad_buffer().data() : nullptr;
        for (int64_t nidx = 0; nidx < N; ++nidx) {
          int64_t x0, y0;
          S tx, ty;
          bool ix, iy;
          locate(uvv[nidx * 2 + 0], W, x0, tx, ix);
          locate(uvv[nidx * 2 + 1], H, y0, ty, iy);
          const int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
          S dfx = 0, dfy = 0;
          for (int64_t c = 0; c < C; ++c) {
            const S go = g[nidx * C + c];
            if (gp) {
              gp[(y0 * W + x0) * C + c] += go * (S(1) - ty) * (S(1) - tx);
              gp[(y0 * W + x1) * C + c] += go * (S(1) - ty) * tx;
              gp[(y1 * W + x0) * C + c] += go * ty * (S(1) - tx);
              gp[(y1 * W + x1) * C + c] += go * ty * tx;
            }
            if (gu) {
              const S p00 = pv[(y0 * W + x0) * C + c], p01 = pv[(y0 * W + x1) * C + c];
              const S p10 = pv[(y1 * W + x0) * C + c], p11 = pv[(y1 * W + x1) * C + c];
              dfx += go * ((S(1) - ty) * (p01 - p00) + ty * (p11 - p10));
              dfy += go * ((S(1) - tx) * (p10 - p00) + tx * (p11 - p01));
            }
          }
          if (gu) {
            // clamped samples have zero positional gradient
            if (ix && W > 1) gu[nidx * 2 + 0] += dfx * S(0.5) * S(W - 1);
            if (iy && H > 1) gu[nidx * 2 + 1] += dfy * S(0.5) * S(H - 1);
          }
        }
      });
}

// ---- convolutions ----

template <typename S>
Tensor<S> transposed_conv2d(const Tensor<S>& x, const Tensor<S>& kernel, int64_t stride) {
  LRM_REQUIRE(x.ndim() == 3, "transposed_conv2d: x must be [Cin,H,W]");
  LRM_REQUIRE(kernel.ndim() == 4, "transposed_conv2d: kernel must be [Cin,Cout,k,k]");
  const int64_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int64_t Cout = kernel.dim(1), K = kernel.dim(2);
  LRM_REQUIRE(kernel.dim(0) == Cin && kernel.dim(3) == K, "transposed_conv2d: kernel shape ",
              shape_str(kernel.shape()), " does not match Cin=", Cin);
  LRM_REQUIRE(stride == K, "transposed_conv2d: only stride == kernel size supported, got stride=",
              stride, " k=", K);
  const int64_t Ho = H * K, Wo = W * K;
  const auto& xv = x.value();
  const auto& kv = kernel.value();
  std::vector<S> out(static_cast<size_t>(Cout * Ho * Wo), S(0));
  for (int64_t ci = 0; ci < Cin; ++ci)
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
          const S v = xv[(ci * H + y) * W + xx];
          for (int64_t dy = 0; dy < K; ++dy)
            for (int64_t dx = 0; dx < K; ++dx)
              out[(co * Ho + y * K + dy) * Wo + xx * K + dx] +=
                  v * kv[((ci * Cout + co) * K + dy) * K + dx];
        }
  return make_node<S>(
      "transposed_conv2d", Shape{Cout, Ho, Wo}, std::move(out), {x, kernel},
      [Cin, Cout, H, W, K, Ho, Wo](detail::Node<S>& self) {
        auto& px = *self.parents[0];
        auto& pk = *self.parents[1];
        const auto& g = self.grad;
        auto* gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
        auto* gk = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
        for (int64_t ci = 0; ci < Cin; ++ci)
          for (int64_t co = 0; co < Cout; ++co)
            for (int64_t y = 0; y < H; ++y)
              for (int64_t xx = 0; xx < W; ++xx)
                for (int64_t dy = 0; dy < K; ++dy)
                  for (int64_t dx = 0; dx < K; ++dx) {
                    const S go = g[(co * Ho + y * K + dy) * Wo + xx * K + dx];
                    const int64_t kidx = ((ci * Cout + co) * K + dy) * K + dx;
                    if (gx) gx[(ci * H + y) * W + xx] += go * pk.value[kidx];
                    if (gk) gk[kidx] += go * px.value[(ci * H + y) * W + xx];
                  }
      });
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias,
                 int64_t stride, int64_t pad) {
  LRM_REQUIRE(x.ndim() == 3, "conv2d: x must be [Cin,H,W]");
  LRM_REQUIRE(kernel.ndim() == 4, "conv2d: kernel must be [Cout,Cin,kh,kw]");
  const int64_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int64_t Cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  LRM_REQUIRE(kernel.dim(1) == Cin, "conv2d: kernel Cin mismatch");
  LRM_REQUIRE(bias.size() == Cout, "conv2d: bias must have ", Cout, " elements");
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  LRM_REQUIRE(Ho > 0 && Wo > 0, "conv2d: empty output");
  const auto& xv = x.value();
  const auto& kv = kernel.value();
  const auto& bv = bias.value();
  std::vector<S> out(static_cast<size_t>(Cout * Ho * Wo));
  for (int64_t co = 0; co < Cout; ++co)
    for (int64_t oy = 0; oy < Ho; ++oy)
      for (int64_t ox = 0; ox < Wo; ++ox) {
        S acc = bv[co];
        for (int64_t ci = 0; ci < Cin; ++ci)
          for (int64_t ky = 0; ky < kh; ++ky) {
            const int64_t iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (int64_t kx = 0; kx < kw; ++kx) {
              const int64_t ixx = ox * stride + kx - pad;
              if (ixx < 0 || ixx >= W) continue;
              acc += xv[(ci * H + iy) * W + ixx] * kv[((co * Cin + ci) * kh + ky) * kw + kx];
            }
          }
        out[(co * Ho + oy) * Wo + ox] = acc;
      }
  return make_node<S>(
      "conv2d", Shape{Cout, Ho, Wo}, std::move(out), {x, kernel, bias},
      [Cin, Cout, H, W, kh, kw, Ho, Wo, stride, pad](detail::Node<S>& self) {
        auto& px = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& g = self.grad;
        auto* gx = px.requires_grad ? px.grad_buffer().data() : nullptr;
        auto* gk = pk.requires_grad ? pk.grad_buffer().data() : nullptr;
        auto* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
        for (int64_t co = 0; co < Cout; ++co)
          for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox) {
              const S go = g[(co * Ho + oy) * Wo + ox];
              if (gb) gb[co] += go;
              for (int64_t ci = 0; ci < Cin; ++ci)
                for (int64_t ky = 0; ky < kh; ++ky) {
                  const int64_t iy = oy * stride + ky - pad;
                  if (iy < 0 || iy >= H) continue;
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    const int64_t ixx = ox * stride + kx - pad;
                    if (ixx < 0 || ixx >= W) continue;
                    const int64_t xi = (ci * H + iy) * W + ixx;
                    const int64_t ki = ((co * Cin + ci) * kh + ky) * kw + kx;
                    if (gx) gx[xi] += go * pk.value[ki];
                    if (gk) gk[ki] += go * px.value[xi];
                  }
                }
            }
      });
}

// ---- patchify ----

template <typename S>
Tensor<S> patchify(const Tensor<S>& img, int64_t patch) {
  LRM_REQUIRE(img.ndim() == 3, "patchify: img must be [C,H,W]");
  const int64_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  LRM_REQUIRE(H % patch == 0 && W % patch == 0, "patchify: ", H, "x", W,
              " not divisible by patch ", patch);
  const int64_t gh = H / patch, gw = W / patch;
  const auto& iv = img.value();
  std::vector<S> out(static_cast<size_t>(gh * gw * C * patch * patch));
  const int64_t D = C * patch * patch;
  for (int64_t gy = 0; gy < gh; ++gy)
    for (int64_t gx = 0; gx < gw; ++gx)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t py = 0; py < patch; ++py)
          for (int64_t px = 0; px < patch; ++px)
            out[(gy * gw + gx) * D + (c * patch + py) * patch + px] =
                iv[(c * H + gy * patch + py) * W + gx * patch + px];
  return make_node<S>(
      "patchify", Shape{gh * gw, D}, std::move(out), {img},
      [C, H, W, patch, gh, gw, D](detail::Node<S>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        for (int64_t gy = 0; gy < gh; ++gy)
          for (int64_t gx = 0; gx < gw; ++gx)
            for (int64_t c = 0; c < C; ++c)
              for (int64_t py = 0; py < patch; ++py)
                for (int64_t px = 0; px < patch; ++px)
                  g[(c * H + gy * patch + py) * W + gx * patch + px] +=
                      self.grad[(gy * gw + gx) * D + (c * patch + py) * patch + px];
      });
}

// ---- scatter_rows ----

template <typename S>
Tensor<S> scatter_rows(const Tensor<S>& values, const std::vector<int64_t>& idx, int64_t out_rows,
                       S fill) {
  LRM_REQUIRE(values.ndim() == 2, "scatter_rows: values must be 2-D");
  const int64_t M = values.dim(0), C = values.dim(1);
  LRM_REQUIRE(static_cast<int64_t>(idx.size()) == M, "scatter_rows: ", idx.size(),
              " indices for ", M, " rows");
  std::vector<char> seen(static_cast<size_t>(out_rows), 0);
  for (int64_t i : idx) {
    LRM_REQUIRE(0 <= i && i < out_rows, "scatter_rows: index ", i, " out of range [0,", out_rows, ")");
    LRM_REQUIRE(!seen[i], "scatter_rows: duplicate index ", i);
    seen[i] = 1;
  }
  const auto& vv = values.value();
  std::vector<S> out(static_cast<size_t>(out_rows * C), fill);
  for (int64_t m = 0; m < M; ++m)
    std::memcpy(out.data() + idx[m] * C, vv.data() + m * C, static_cast<size_t>(C) * sizeof(S));
  return make_node<S>("scatter_rows", Shape{out_rows, C}, std::move(out), {values},
                      [idx, C](detail::Node<S>& self) {
                        auto& p = *self.parents[0];
                        if (!p.requires_grad) return;
                        auto& g = p.grad_buffer();
                        for (size_t m = 0; m < idx.size(); ++m)
                          for (int64_t c = 0; c < C; ++c)
                            g[m * C + c] += self.grad[idx[m] * C + c];
                      });
}

// ---- custom op ----

template <typename S>
Tensor<S> make_op(const char* name, Shape out_shape, std::vector<S> out_value,
                  std::vector<Tensor<S>> parents,
                  std::function<void(detail::Node<S>&)> backward_fn) {
  return make_node<S>(name, std::move(out_shape), std::move(out_value), std::move(parents),
                      std::move(backward_fn));
}

// ---- explicit instantiations ----

#define LRM_INSTANTIATE(S)                                                                     \
  template class Tensor<S>;                                                                    \
  template void backward<S>(const Tensor<S>&);                                                 \
  template void check_finite<S>(const char*, const std::vector<S>&);                           \
  template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                               \
  template Tensor<S> sub<S>(const Tensor<S>&, const Tensor<S>&);                               \
  template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                               \
  template Tensor<S> scale<S>(const Tensor<S>&, S);                                            \
  template Tensor<S> add_scalar<S>(const Tensor<S>&, S);                                       \
  template Tensor<S> square<S>(const Tensor<S>&);                                              \
  template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&, bool, bool);                \
  template Tensor<S> relu<S>(const Tensor<S>&);                                                \
  template Tensor<S> gelu<S>(const Tensor<S>&);                                                \
  template Tensor<S> sigmoid<S>(const Tensor<S>&);                                             \
  template Tensor<S> softplus<S>(const Tensor<S>&);                                            \
  template Tensor<S> layer_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);   \
  template Tensor<S> softmax<S>(const Tensor<S>&);                                             \
  template Tensor<S> sum<S>(const Tensor<S>&);                                                 \
  template Tensor<S> mean<S>(const Tensor<S>&);                                                \
  template Tensor<S> reshape<S>(const Tensor<S>&, Shape);                                      \
  template Tensor<S> transpose2d<S>(const Tensor<S>&);                                         \
  template Tensor<S> concat_rows<S>(const std::vector<Tensor<S>>&);                            \
  template Tensor<S> concat_cols<S>(const std::vector<Tensor<S>>&);                            \
  template Tensor<S> slice_rows<S>(const Tensor<S>&, int64_t, int64_t);                        \
  template Tensor<S> select_cols<S>(const Tensor<S>&, const std::vector<int64_t>&);            \
  template Tensor<S> scale_rows<S>(const Tensor<S>&, const Tensor<S>&);                        \
  template Tensor<S> row_l2_normalize<S>(const Tensor<S>&, S);                                 \
  template Tensor<S> bilinear_grid_sample<S>(const Tensor<S>&, const Tensor<S>&);              \
  template Tensor<S> transposed_conv2d<S>(const Tensor<S>&, const Tensor<S>&, int64_t);        \
  template Tensor<S> conv2d<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int64_t,  \
                               int64_t);                                                       \
  template Tensor<S> patchify<S>(const Tensor<S>&, int64_t);                                   \
  template Tensor<S> scatter_rows<S>(const Tensor<S>&, const std::vector<int64_t>&, int64_t, S); \
  template Tensor<S> make_op<S>(const char*, Shape, std::vector<S>, std::vector<Tensor<S>>,    \
                                std::function<void(detail::Node<S>&)>);

LRM_INSTANTIATE(float)
LRM_INSTANTIATE(double)

#undef LRM_INSTANTIATE

}  // namespace lrm
