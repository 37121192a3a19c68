#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "trireid/tensor.hpp"

namespace trireid {

struct Node;
using Var = std::shared_ptr<Node>;

/// One node of a dynamically built computation graph. Graphs are rebuilt
/// every step; leaves (parameters, probed inputs) persist across steps and
/// accumulate gradients until cleared.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first use, same shape as value
  bool requires_grad = false;
  int64_t seq = 0;  // creation order, drives topological sort
  std::vector<Var> inputs;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return !grad.data.empty(); }
  void ensure_grad() {
    if (!has_grad()) grad = Tensor::zeros(value.shape);
  }
  void zero_grad() {
    for (auto& g : grad.data) g = 0.0;
  }
};

Var make_leaf(Tensor value);   // requires_grad = true
Var make_const(Tensor value);  // requires_grad = false
Var make_op(Tensor value, std::vector<Var> inputs,
            std::function<void(Node&)> backward_fn);

/// Payload of a scalar node.
inline double value(const Var& x) { return x->value[0]; }

/// Reverse pass from a scalar root (shape {1}).
void backward(const Var& root);

// ---- elementwise (operands share a shape) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div_el(const Var& a, const Var& b);  // backward clamps |b| >= 1e-12
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
Var leaky_relu(const Var& x, double slope);
Var sigmoid_op(const Var& x);
Var tanh_op(const Var& x);
Var sqrt_op(const Var& x);           // backward clamps sqrt(x) >= 1e-12
Var clamp_min(const Var& x, double lo);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);              // [M,K] x [K,N]
Var matmul_nt(const Var& a, const Var& b);           // [M,K] x [N,K]^T
Var transpose2d(const Var& x);                       // [M,N] -> [N,M]
Var bmm(const Var& a, const Var& b, bool trans_b);   // [B,M,K] x [B,K,N] or [B,N,K]^T
Var add_rowvec(const Var& x, const Var& v);          // [R,C] + [C]
Var add_tile_rows(const Var& x, const Var& v);       // [G*n,C] + tiled [n,C]

// ---- convolution ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

// ---- reductions / reshapes ----
Var spatial_mean(const Var& x);                   // [N,C,H,W] -> [N,C]
Var sub_nc(const Var& x, const Var& m);           // [N,C,H,W] - broadcast [N,C]
Var add_nc(const Var& x, const Var& m);
Var mul_nc(const Var& x, const Var& s);
Var chan_affine(const Var& x, const Var& gamma, const Var& beta);  // per-C, x [N,C,H,W]
Var mean_groups(const Var& x, int group);         // [G*group,C] -> [G,C]
Var mean_all(const Var& x);                       // -> scalar
Var sum_all(const Var& x);                        // -> scalar
Var concat_cols(const std::vector<Var>& xs);      // [R,Ci] -> [R,sum Ci]
Var concat_rows(const std::vector<Var>& xs);      // [Ri,C] -> [sum Ri,C]
Var gather_dim0(const Var& x, const std::vector<int>& idx);  // rows along dim 0
Var reshape(const Var& x, std::vector<int> shape);
Var nchw_to_tokens(const Var& x);                 // [N,C,H,W] -> [N*H*W,C]

// ---- softmax family ----
Var softmax_rows(const Var& x);                   // [R,C] row softmax
Var logsumexp_rows(const Var& x);                 // [R,C] -> [R]
Var l2_normalize_rows(const Var& x, double eps = 1e-12);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    double eps = 1e-5);
Var row_l2norm(const Var& x);                     // [R,C] -> [R], backward-safe at 0

// ---- fused losses ----
/// Mean cross-entropy over rows with label smoothing; ids index classes.
Var cross_entropy_mean(const Var& logits, const std::vector<int>& ids,
                       double smoothing);
/// Batch-hard triplet loss on Euclidean distances (see fusion module docs).
/// Throws when no anchor has both a positive and a negative; non-finite
/// features instead yield a NaN scalar.
Var triplet_batch_hard(const Var& features, const std::vector<int>& ids,
                       double margin);

}  // namespace trireid
