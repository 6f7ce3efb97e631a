#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lrm/common.hpp"

namespace lrm {

// Reverse-mode autodiff over dense tensors, templated on the scalar so the
// same graph code runs in f32 (training) and f64 (gradient checking).
//
// Graph semantics:
//  - Tensors are immutable once created; every op allocates a new node.
//  - Node ids increase with creation order, so ascending id is a topological
//    order (parents always precede children).
//  - backward(loss) seeds d(loss)/d(loss)=1 and accumulates into leaf .grad;
//    leaf grads persist across calls (sum), non-leaf grads are scratch.
//  - Ops whose inputs all have requires_grad=false produce constant nodes with
//    no parents, so inference builds no graph.
//  - Every op checks its output for NaN/Inf and throws lrm::Error naming the op.

namespace detail {

template <typename S>
struct Node {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily; for leaves persists across backward()
  bool requires_grad = false;
  bool leaf = false;
  uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

  std::vector<S>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), S(0));
    return grad;
  }
};

uint64_t next_node_id();

}  // namespace detail

template <typename S>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<S>>;

  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, S v, bool requires_grad = false);
  static Tensor scalar(S v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t dim(size_t i) const { return node_->shape.at(i); }
  size_t ndim() const { return node_->shape.size(); }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
  const std::vector<S>& value() const { return node_->value; }
  std::vector<S>& mutable_value() { return node_->value; }  // leaves only (optimizer)
  S item() const {
    LRM_REQUIRE(node_->value.size() == 1, "item() on tensor of ", node_->value.size(), " elements");
    return node_->value[0];
  }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  const std::vector<S>& grad() const;
  void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }
  const char* op_name() const { return node_->op; }
  uint64_t id() const { return node_->id; }
  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

// Runs reverse accumulation from a scalar loss. Leaf grads accumulate; call
// zero_grad on leaves (ParamStore does) between steps.
template <typename S>
void backward(const Tensor<S>& loss);

// ---- primitive ops ----
// Elementwise binary ops accept equal shapes, or b whose shape is a trailing
// suffix of a's (broadcast over leading dims; gradient to b sums over them).
template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& a, S k);
template <typename S> Tensor<S> add_scalar(const Tensor<S>& a, S k);
template <typename S> Tensor<S> square(const Tensor<S>& a);

// C = op(A) op(B) with optional transposes; 2-D only. BLAS-backed.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool trans_a = false, bool trans_b = false);

template <typename S> Tensor<S> relu(const Tensor<S>& x);
template <typename S> Tensor<S> gelu(const Tensor<S>& x);  // tanh approximation
template <typename S> Tensor<S> sigmoid(const Tensor<S>& x);
template <typename S> Tensor<S> softplus(const Tensor<S>& x);

// x [R,d] normalized per row; weight/bias [d].
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias, S eps = S(1e-5));

// Softmax over the last dimension.
template <typename S> Tensor<S> softmax(const Tensor<S>& x);

template <typename S> Tensor<S> sum(const Tensor<S>& x);   // -> scalar
template <typename S> Tensor<S> mean(const Tensor<S>& x);  // -> scalar

template <typename S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);
template <typename S> Tensor<S> transpose2d(const Tensor<S>& x);
template <typename S> Tensor<S> concat_rows(const std::vector<Tensor<S>>& xs);
template <typename S> Tensor<S> concat_cols(const std::vector<Tensor<S>>& xs);
template <typename S> Tensor<S> slice_rows(const Tensor<S>& x, int64_t r0, int64_t r1);
template <typename S> Tensor<S> select_cols(const Tensor<S>& x, const std::vector<int64_t>& cols);

// y[n,:] = x[n,:] * w[n];  x [N,d], w [N].
template <typename S> Tensor<S> scale_rows(const Tensor<S>& x, const Tensor<S>& w);

// y[n,:] = x[n,:] / sqrt(sum_c x[n,c]^2 + eps).
template <typename S> Tensor<S> row_l2_normalize(const Tensor<S>& x, S eps);

// plane [H,W,C] sampled at uv [N,2] in [-1,1]^2, align-corners, border clamp.
// Differentiable w.r.t. both plane and uv (uv grad is 0 where clamped).
template <typename S> Tensor<S> bilinear_grid_sample(const Tensor<S>& plane, const Tensor<S>& uv);

// x [Cin,H,W], kernel [Cin,Cout,k,k], stride=k (non-overlapping upsample), no bias.
template <typename S> Tensor<S> transposed_conv2d(const Tensor<S>& x, const Tensor<S>& kernel, int64_t stride);

// x [Cin,H,W], kernel [Cout,Cin,kh,kw], zero padding. Used by the frozen feature net.
template <typename S> Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias,
                                       int64_t stride, int64_t pad);

// img [C,H,W] -> [(H/p)*(W/p), C*p*p], row-major over patch grid.
template <typename S> Tensor<S> patchify(const Tensor<S>& img, int64_t patch);

// values [M,C] scattered to rows idx[m] of an [N,C] output prefilled with `fill`.
// Indices must be unique and in range.
template <typename S>
Tensor<S> scatter_rows(const Tensor<S>& values, const std::vector<int64_t>& idx, int64_t out_rows, S fill);

// ---- custom op hook ----
// Builds a graph node from precomputed output data plus a backward closure.
// The closure reads node.grad and accumulates into parents via Node::grad_buffer
// (skip parents with requires_grad=false). Used for the ray compositor and tests.
template <typename S>
Tensor<S> make_op(const char* name, Shape out_shape, std::vector<S> out_value,
                  std::vector<Tensor<S>> parents,
                  std::function<void(detail::Node<S>&)> backward_fn);

// Throws lrm::Error naming `op` if any element is NaN/Inf.
template <typename S>
void check_finite(const char* op, const std::vector<S>& v);

}  // namespace lrm
