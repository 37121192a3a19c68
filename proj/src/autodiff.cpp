#include "trireid/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace trireid {

namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatR>;
using MapC = Eigen::Map<const MatR>;

std::atomic<int64_t> g_seq{0};

MapC cmap(const Tensor& t, int rows, int cols) {
  return MapC(t.data.data(), rows, cols);
}
MapM mmap(Tensor& t, int rows, int cols) {
  return MapM(t.data.data(), rows, cols);
}

void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Var make_leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->seq = ++g_seq;
  return n;
}

Var make_const(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = false;
  n->seq = ++g_seq;
  return n;
}

Var make_op(Tensor value, std::vector<Var> inputs,
            std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->seq = ++g_seq;
  for (const auto& in : inputs) {
    if (in->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  n->inputs = std::move(inputs);
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

void backward(const Var& root) {
  check(root->value.numel() == 1, "backward: root must be scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });
  root->ensure_grad();
  root->grad.data[0] += 1.0;
  for (Node* n : order) {
    if (n->requires_grad && n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------- elementwise

namespace {

template <typename FwdFn, typename BwdFn>
Var unary_elementwise(const Var& x, FwdFn fwd, BwdFn bwd) {
  Tensor out(x->value.shape);
  const int64_t n = x->value.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(x->value[i]);
  return make_op(std::move(out), {x}, [x, bwd](Node& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const int64_t n = self.value.numel();
    for (int64_t i = 0; i < n; ++i)
      x->grad[i] += self.grad[i] * bwd(x->value[i], self.value[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor out(a->value.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const int64_t n = self.value.numel();
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += self.grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < n; ++i) b->grad[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor out(a->value.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const int64_t n = self.value.numel();
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += self.grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < n; ++i) b->grad[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor out(a->value.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const int64_t n = self.value.numel();
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < n; ++i) b->grad[i] += self.grad[i] * a->value[i];
    }
  });
}

Var div_el(const Var& a, const Var& b) {
  check(a->value.same_shape(b->value), "div_el: shape mismatch");
  Tensor out(a->value.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] / b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const int64_t n = self.value.numel();
    auto safe = [](double v) {
      double m = std::abs(v) < 1e-12 ? 1e-12 : std::abs(v);
      return v < 0 ? -m : m;
    };
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        a->grad[i] += self.grad[i] / safe(b->value[i]);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        double bb = safe(b->value[i]);
        b->grad[i] -= self.grad[i] * a->value[i] / (bb * bb);
      }
    }
  });
}

Var scale(const Var& x, double s) {
  return unary_elementwise(
      x, [s](double v) { return v * s; },
      [s](double, double) { return s; });
}

Var add_scalar(const Var& x, double s) {
  return unary_elementwise(
      x, [s](double v) { return v + s; },
      [](double, double) { return 1.0; });
}

Var leaky_relu(const Var& x, double slope) {
  return unary_elementwise(
      x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Var sigmoid_op(const Var& x) {
  return unary_elementwise(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh_op(const Var& x) {
  return unary_elementwise(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sqrt_op(const Var& x) {
  return unary_elementwise(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / std::max(y, 1e-12); });
}

Var clamp_min(const Var& x, double lo) {
  return unary_elementwise(
      x, [lo](double v) { return std::max(v, lo); },
      [lo](double v, double) { return v > lo ? 1.0 : 0.0; });
}

// ------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
  check(a->value.ndim() == 2 && b->value.ndim() == 2, "matmul: need 2-D");
  const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
  check(b->value.dim(0) == k, "matmul: inner dim mismatch");
  Tensor out({m, n});
  mmap(out, m, n).noalias() = cmap(a->value, m, k) * cmap(b->value, k, n);
  return make_op(std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
    MapC g(self.grad.data.data(), m, n);
    if (a->requires_grad) {
      a->ensure_grad();
      mmap(a->grad, m, k).noalias() += g * cmap(b->value, k, n).transpose();
    }
    if (b->requires_grad) {
      b->ensure_grad();
      mmap(b->grad, k, n).noalias() += cmap(a->value, m, k).transpose() * g;
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  check(a->value.ndim() == 2 && b->value.ndim() == 2, "matmul_nt: need 2-D");
  const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(0);
  check(b->value.dim(1) == k, "matmul_nt: inner dim mismatch");
  Tensor out({m, n});
  mmap(out, m, n).noalias() =
      cmap(a->value, m, k) * cmap(b->value, n, k).transpose();
  return make_op(std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
    MapC g(self.grad.data.data(), m, n);
    if (a->requires_grad) {
      a->ensure_grad();
      mmap(a->grad, m, k).noalias() += g * cmap(b->value, n, k);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      mmap(b->grad, n, k).noalias() += g.transpose() * cmap(a->value, m, k);
    }
  });
}

Var transpose2d(const Var& x) {
  check(x->value.ndim() == 2, "transpose2d: need 2-D");
  const int m = x->value.dim(0), n = x->value.dim(1);
  Tensor out({n, m});
  mmap(out, n, m).noalias() = cmap(x->value, m, n).transpose();
  return make_op(std::move(out), {x}, [x, m, n](Node& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    mmap(x->grad, m, n).noalias() += MapC(self.grad.data.data(), n, m).transpose();
  });
}

Var bmm(const Var& a, const Var& b, bool trans_b) {
  check(a->value.ndim() == 3 && b->value.ndim() == 3, "bmm: need 3-D");
  const int B = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2);
  check(b->value.dim(0) == B, "bmm: batch mismatch");
  const int n = trans_b ? b->value.dim(1) : b->value.dim(2);
  check((trans_b ? b->value.dim(2) : b->value.dim(1)) == k,
        "bmm: inner dim mismatch");
  Tensor out({B, m, n});
  for (int i = 0; i < B; ++i) {
    MapC ai(a->value.data.data() + static_cast<int64_t>(i) * m * k, m, k);
    MapM oi(out.data.data() + static_cast<int64_t>(i) * m * n, m, n);
    if (trans_b) {
      MapC bi(b->value.data.data() + static_cast<int64_t>(i) * n * k, n, k);
      oi.noalias() = ai * bi.transpose();
    } else {
      MapC bi(b->value.data.data() + static_cast<int64_t>(i) * k * n, k, n);
      oi.noalias() = ai * bi;
    }
  }
  return make_op(std::move(out), {a, b}, [a, b, trans_b, B, m, k, n](Node& self) {
    for (int i = 0; i < B; ++i) {
      MapC gi(self.grad.data.data() + static_cast<int64_t>(i) * m * n, m, n);
      MapC ai(a->value.data.data() + static_cast<int64_t>(i) * m * k, m, k);
      if (trans_b) {
        MapC bi(b->value.data.data() + static_cast<int64_t>(i) * n * k, n, k);
        if (a->requires_grad) {
          a->ensure_grad();
          MapM dai(a->grad.data.data() + static_cast<int64_t>(i) * m * k, m, k);
          dai.noalias() += gi * bi;
        }
        if (b->requires_grad) {
          b->ensure_grad();
          MapM dbi(b->grad.data.data() + static_cast<int64_t>(i) * n * k, n, k);
          dbi.noalias() += gi.transpose() * ai;
        }
      } else {
        MapC bi(b->value.data.data() + static_cast<int64_t>(i) * k * n, k, n);
        if (a->requires_grad) {
          a->ensure_grad();
          MapM dai(a->grad.data.data() + static_cast<int64_t>(i) * m * k, m, k);
          dai.noalias() += gi * bi.transpose();
        }
        if (b->requires_grad) {
          b->ensure_grad();
          MapM dbi(b->grad.data.data() + static_cast<int64_t>(i) * k * n, k, n);
          dbi.noalias() += ai.transpose() * gi;
        }
      }
    }
  });
}

Var add_rowvec(const Var& x, const Var& v) {
  check(x->value.ndim() == 2 && v->value.ndim() == 1, "add_rowvec: bad shapes");
  const int r = x->value.dim(0), c = x->value.dim(1);
  check(v->value.dim(0) == c, "add_rowvec: width mismatch");
  Tensor out({r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out[static_cast<int64_t>(i) * c + j] =
          x->value[static_cast<int64_t>(i) * c + j] + v->value[j];
  return make_op(std::move(out), {x, v}, [x, v, r, c](Node& self) {
    if (x->requires_grad) {
      x->ensure_grad();
      const int64_t n = self.value.numel();
      for (int64_t i = 0; i < n; ++i) x->grad[i] += self.grad[i];
    }
    if (v->requires_grad) {
      v->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          v->grad[j] += self.grad[static_cast<int64_t>(i) * c + j];
    }
  });
}

Var add_tile_rows(const Var& x, const Var& v) {
  check(x->value.ndim() == 2 && v->value.ndim() == 2, "add_tile_rows: need 2-D");
  const int rows = x->value.dim(0), c = x->value.dim(1);
  const int tile = v->value.dim(0);
  check(v->value.dim(1) == c && rows % tile == 0, "add_tile_rows: bad tiling");
  Tensor out({rows, c});
  for (int i = 0; i < rows; ++i) {
    const int t = i % tile;
    for (int j = 0; j < c; ++j)
      out[static_cast<int64_t>(i) * c + j] =
          x->value[static_cast<int64_t>(i) * c + j] +
          v->value[static_cast<int64_t>(t) * c + j];
  }
  return make_op(std::move(out), {x, v}, [x, v, rows, c, tile](Node& self) {
    if (x->requires_grad) {
      x->ensure_grad();
      const int64_t n = self.value.numel();
      for (int64_t i = 0; i < n; ++i) x->grad[i] += self.grad[i];
    }
    if (v->requires_grad) {
      v->ensure_grad();
      for (int i = 0; i < rows; ++i) {
        const int t = i % tile;
        for (int j = 0; j < c; ++j)
          v->grad[static_cast<int64_t>(t) * c + j] +=
              self.grad[static_cast<int64_t>(i) * c + j];
      }
    }
  });
}

// ---------------------------------------------------------------- convolution

namespace {

struct ConvDims {
  int N, Ci, H, W, Co, kh, kw, Ho, Wo;
};

void im2col(const Tensor& x, const ConvDims& d, int stride, int pad,
            std::vector<double>& col) {
  const int cols = d.N * d.Ho * d.Wo;
  for (int c = 0; c < d.Ci; ++c) {
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        const int64_t row = (static_cast<int64_t>(c) * d.kh + ki) * d.kw + kj;
        double* dst = col.data() + row * cols;
        for (int n = 0; n < d.N; ++n) {
          const double* src =
              x.data.data() + (static_cast<int64_t>(n) * d.Ci + c) * d.H * d.W;
          for (int ho = 0; ho < d.Ho; ++ho) {
            const int hi = ho * stride + ki - pad;
            for (int wo = 0; wo < d.Wo; ++wo) {
              const int wi = wo * stride + kj - pad;
              double v = 0.0;
              if (hi >= 0 && hi < d.H && wi >= 0 && wi < d.W)
                v = src[static_cast<int64_t>(hi) * d.W + wi];
              dst[(static_cast<int64_t>(n) * d.Ho + ho) * d.Wo + wo] = v;
            }
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<double>& col, const ConvDims& d, int stride,
                int pad, Tensor& dx) {
  const int cols = d.N * d.Ho * d.Wo;
  for (int c = 0; c < d.Ci; ++c) {
    for (int ki = 0; ki < d.kh; ++ki) {
      for (int kj = 0; kj < d.kw; ++kj) {
        const int64_t row = (static_cast<int64_t>(c) * d.kh + ki) * d.kw + kj;
        const double* src = col.data() + row * cols;
        for (int n = 0; n < d.N; ++n) {
          double* dst =
              dx.data.data() + (static_cast<int64_t>(n) * d.Ci + c) * d.H * d.W;
          for (int ho = 0; ho < d.Ho; ++ho) {
            const int hi = ho * stride + ki - pad;
            if (hi < 0 || hi >= d.H) continue;
            for (int wo = 0; wo < d.Wo; ++wo) {
              const int wi = wo * stride + kj - pad;
              if (wi < 0 || wi >= d.W) continue;
              dst[static_cast<int64_t>(hi) * d.W + wi] +=
                  src[(static_cast<int64_t>(n) * d.Ho + ho) * d.Wo + wo];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  check(x->value.ndim() == 4 && w->value.ndim() == 4, "conv2d: bad shapes");
  ConvDims d;
  d.N = x->value.dim(0);
  d.Ci = x->value.dim(1);
  d.H = x->value.dim(2);
  d.W = x->value.dim(3);
  d.Co = w->value.dim(0);
  d.kh = w->value.dim(2);
  d.kw = w->value.dim(3);
  check(w->value.dim(1) == d.Ci, "conv2d: channel mismatch");
  d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
  check(d.Ho > 0 && d.Wo > 0, "conv2d: output collapsed");
  check(b->value.numel() == d.Co, "conv2d: bias size mismatch");

  const int ck = d.Ci * d.kh * d.kw;
  const int cols = d.N * d.Ho * d.Wo;
  auto col = std::make_shared<std::vector<double>>(
      static_cast<size_t>(ck) * cols);
  im2col(x->value, d, stride, pad, *col);

  std::vector<double> out_mat(static_cast<size_t>(d.Co) * cols);
  {
    MapC wm(w->value.data.data(), d.Co, ck);
    MapC cm(col->data(), ck, cols);
    MapM om(out_mat.data(), d.Co, cols);
    om.noalias() = wm * cm;
  }
  Tensor out({d.N, d.Co, d.Ho, d.Wo});
  for (int n = 0; n < d.N; ++n)
    for (int co = 0; co < d.Co; ++co) {
      const double bias = b->value[co];
      double* dst = out.data.data() +
                    (static_cast<int64_t>(n) * d.Co + co) * d.Ho * d.Wo;
      const double* src =
          out_mat.data() + static_cast<int64_t>(co) * cols +
          static_cast<int64_t>(n) * d.Ho * d.Wo;
      for (int i = 0; i < d.Ho * d.Wo; ++i) dst[i] = src[i] + bias;
    }

  return make_op(
      std::move(out), {x, w, b}, [x, w, b, d, stride, pad, col](Node& self) {
        const int ck = d.Ci * d.kh * d.kw;
        const int cols = d.N * d.Ho * d.Wo;
        std::vector<double> g_mat(static_cast<size_t>(d.Co) * cols);
        for (int n = 0; n < d.N; ++n)
          for (int co = 0; co < d.Co; ++co) {
            const double* src =
                self.grad.data.data() +
                (static_cast<int64_t>(n) * d.Co + co) * d.Ho * d.Wo;
            double* dst = g_mat.data() + static_cast<int64_t>(co) * cols +
                          static_cast<int64_t>(n) * d.Ho * d.Wo;
            for (int i = 0; i < d.Ho * d.Wo; ++i) dst[i] = src[i];
          }
        MapC gm(g_mat.data(), d.Co, cols);
        if (b->requires_grad) {
          b->ensure_grad();
          for (int co = 0; co < d.Co; ++co)
            b->grad[co] += gm.row(co).sum();
        }
        if (w->requires_grad) {
          w->ensure_grad();
          MapC cm(col->data(), ck, cols);
          MapM dwm(w->grad.data.data(), d.Co, ck);
          dwm.noalias() += gm * cm.transpose();
        }
        if (x->requires_grad) {
          x->ensure_grad();
          std::vector<double> dcol(static_cast<size_t>(ck) * cols);
          MapC wm(w->value.data.data(), d.Co, ck);
          MapM dcm(dcol.data(), ck, cols);
          dcm.noalias() = wm.transpose() * gm;
          col2im_add(dcol, d, stride, pad, x->grad);
        }
      });
}

// ------------------------------------------------------- reductions, reshapes

Var spatial_mean(const Var& x) {
  check(x->value.ndim() == 4, "spatial_mean: need 4-D");
  const int N = x->value.dim(0), C = x->value.dim(1);
  const int hw = x->value.dim(2) * x->value.dim(3);
  Tensor out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* src =
          x->value.data.data() + (static_cast<int64_t>(n) * C + c) * hw;
      double s = 0.0;
      for (int i = 0; i < hw; ++i) s += src[i];
      out[static_cast<int64_t>(n) * C + c] = s / hw;
    }
  return make_op(std::move(out), {x}, [x, N, C, hw](Node& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const double g = self.grad[static_cast<int64_t>(n) * C + c] / hw;
        double* dst =
            x->grad.data.data() + (static_cast<int64_t>(n) * C + c) * hw;
        for (int i = 0; i < hw; ++i) dst[i] += g;
      }
  });
}

namespace {

// y = x (op) broadcast m[N,C] over spatial positions.
enum class NcOp { Sub, Add, Mul };

Var nc_broadcast(const Var& x, const Var& m, NcOp op) {
  check(x->value.ndim() == 4 && m->value.ndim() == 2, "nc op: bad shapes");
  const int N = x->value.dim(0), C = x->value.dim(1);
  const int hw = x->value.dim(2) * x->value.dim(3);
  check(m->value.dim(0) == N && m->value.dim(1) == C, "nc op: size mismatch");
  Tensor out(x->value.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double mv = m->value[static_cast<int64_t>(n) * C + c];
      const double* src =
          x->value.data.data() + (static_cast<int64_t>(n) * C + c) * hw;
      double* dst = out.data.data() + (static_cast<int64_t>(n) * C + c) * hw;
      switch (op) {
        case NcOp::Sub:
          for (int i = 0; i < hw; ++i) dst[i] = src[i] - mv;
          break;
        case NcOp::Add:
          for (int i = 0; i < hw; ++i) dst[i] = src[i] + mv;
          break;
        case NcOp::Mul:
          for (int i = 0; i < hw; ++i) dst[i] = src[i] * mv;
          break;
      }
    }
  return make_op(std::move(out), {x, m}, [x, m, op, N, C, hw](Node& self) {
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const int64_t base = (static_cast<int64_t>(n) * C + c) * hw;
        const int64_t nc = static_cast<int64_t>(n) * C + c;
        const double mv = m->value[nc];
        if (x->requires_grad) {
          x->ensure_grad();
          for (int i = 0; i < hw; ++i)
            x->grad[base + i] +=
                op == NcOp::Mul ? self.grad[base + i] * mv : self.grad[base + i];
        }
        if (m->requires_grad) {
          m->ensure_grad();
          double s = 0.0;
          for (int i = 0; i < hw; ++i) {
            switch (op) {
              case NcOp::Sub:
                s -= self.grad[base + i];
                break;
              case NcOp::Add:
                s += self.grad[base + i];
                break;
              case NcOp::Mul:
                s += self.grad[base + i] * x->value[base + i];
                break;
            }
          }
          m->grad[nc] += s;
        }
      }
  });
}

}  // namespace

Var sub_nc(const Var& x, const Var& m) { return nc_broadcast(x, m, NcOp::Sub); }
Var add_nc(const Var& x, const Var& m) { return nc_broadcast(x, m, NcOp::Add); }
Var mul_nc(const Var& x, const Var& s) { return nc_broadcast(x, s, NcOp::Mul); }

Var chan_affine(const Var& x, const Var& gamma, const Var& beta) {
  check(x->value.ndim() == 4, "chan_affine: need 4-D");
  const int N = x->value.dim(0), C = x->value.dim(1);
  const int hw = x->value.dim(2) * x->value.dim(3);
  check(gamma->value.numel() == C && beta->value.numel() == C,
        "chan_affine: size mismatch");
  Tensor out(x->value.shape);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double g = gamma->value[c], b = beta->value[c];
      const int64_t base = (static_cast<int64_t>(n) * C + c) * hw;
      for (int i = 0; i < hw; ++i)
        out[base + i] = x->value[base + i] * g + b;
    }
  return make_op(std::move(out), {x, gamma, beta},
                 [x, gamma, beta, N, C, hw](Node& self) {
                   for (int n = 0; n < N; ++n)
                     for (int c = 0; c < C; ++c) {
                       const int64_t base =
                           (static_cast<int64_t>(n) * C + c) * hw;
                       if (x->requires_grad) {
                         x->ensure_grad();
                         const double g = gamma->value[c];
                         for (int i = 0; i < hw; ++i)
                           x->grad[base + i] += self.grad[base + i] * g;
                       }
                       if (gamma->requires_grad) {
                         gamma->ensure_grad();
                         double s = 0.0;
                         for (int i = 0; i < hw; ++i)
                           s += self.grad[base + i] * x->value[base + i];
                         gamma->grad[c] += s;
                       }
                       if (beta->requires_grad) {
                         beta->ensure_grad();
                         double s = 0.0;
                         for (int i = 0; i < hw; ++i) s += self.grad[base + i];
                         beta->grad[c] += s;
                       }
                     }
                 });
}

Var mean_groups(const Var& x, int group) {
  check(x->value.ndim() == 2, "mean_groups: need 2-D");
  const int rows = x->value.dim(0), c = x->value.dim(1);
  check(group > 0 && rows % group == 0, "mean_groups: bad group");
  const int g = rows / group;
  Tensor out({g, c});
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < c; ++j) {
      double s = 0.0;
      for (int t = 0; t < group; ++t)
        s += x->value[(static_cast<int64_t>(i) * group + t) * c + j];
      out[static_cast<int64_t>(i) * c + j] = s / group;
    }
  return make_op(std::move(out), {x}, [x, g, c, group](Node& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < c; ++j) {
        const double gv = self.grad[static_cast<int64_t>(i) * c + j] / group;
        for (int t = 0; t < group; ++t)
          x->grad[(static_cast<int64_t>(i) * group + t) * c + j] += gv;
      }
  });
}

Var mean_all(const Var& x) {
  const int64_t n = x->value.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x->value[i];
  return make_op(Tensor::scalar(s / static_cast<double>(n)), {x},
                 [x, n](Node& self) {
                   if (!x->requires_grad) return;
                   x->ensure_grad();
                   const double g = self.grad[0] / static_cast<double>(n);
                   for (int64_t i = 0; i < n; ++i) x->grad[i] += g;
                 });
}

Var sum_all(const Var& x) {
  const int64_t n = x->value.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += x->value[i];
  return make_op(Tensor::scalar(s), {x}, [x, n](Node& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const double g = self.grad[0];
    for (int64_t i = 0; i < n; ++i) x->grad[i] += g;
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  check(!xs.empty(), "concat_cols: empty input");
  const int r = xs[0]->value.dim(0);
  int total = 0;
  for (const auto& x : xs) {
    check(x->value.ndim() == 2 && x->value.dim(0) == r,
          "concat_cols: row mismatch");
    total += x->value.dim(1);
  }
  Tensor out({r, total});
  int off = 0;
  for (const auto& x : xs) {
    const int c = x->value.dim(1);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        out[static_cast<int64_t>(i) * total + off + j] =
            x->value[static_cast<int64_t>(i) * c + j];
    off += c;
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return make_op(std::move(out), inputs, [xs, r, total](Node& self) {
    int off = 0;
    for (const auto& x : xs) {
      const int c = x->value.dim(1);
      if (x->requires_grad) {
        x->ensure_grad();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            x->grad[static_cast<int64_t>(i) * c + j] +=
                self.grad[static_cast<int64_t>(i) * total + off + j];
      }
      off += c;
    }
  });
}

Var concat_rows(const std::vector<Var>& xs) {
  check(!xs.empty(), "concat_rows: empty input");
  const int c = xs[0]->value.dim(1);
  int total = 0;
  for (const auto& x : xs) {
    check(x->value.ndim() == 2 && x->value.dim(1) == c,
          "concat_rows: column mismatch");
    total += x->value.dim(0);
  }
  Tensor out({total, c});
  int64_t off = 0;
  for (const auto& x : xs) {
    std::copy(x->value.data.begin(), x->value.data.end(),
              out.data.begin() + off);
    off += x->value.numel();
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return make_op(std::move(out), inputs, [xs](Node& self) {
    int64_t off = 0;
    for (const auto& x : xs) {
      const int64_t n = x->value.numel();
      if (x->requires_grad) {
        x->ensure_grad();
        for (int64_t i = 0; i < n; ++i) x->grad[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

Var gather_dim0(const Var& x, const std::vector<int>& idx) {
  check(x->value.ndim() >= 1, "gather_dim0: need >= 1-D");
  const int64_t stride = x->value.numel() / x->value.dim(0);
  std::vector<int> shape = x->value.shape;
  shape[0] = static_cast<int>(idx.size());
  Tensor out(shape);
  for (size_t r = 0; r < idx.size(); ++r) {
    const double* src =
        x->value.data.data() + static_cast<int64_t>(idx[r]) * stride;
    double* dst = out.data.data() + static_cast<int64_t>(r) * stride;
    for (int64_t i = 0; i < stride; ++i) dst[i] = src[i];
  }
  return make_op(std::move(out), {x}, [x, idx, stride](Node& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r) {
      double* dst = x->grad.data.data() + static_cast<int64_t>(idx[r]) * stride;
      const double* src = self.grad.data.data() + static_cast<int64_t>(r) * stride;
      for (int64_t i = 0; i < stride; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(const Var& x, std::vector<int> shape) {
  check(Tensor::numel_of(shape) == x->value.numel(), "reshape: numel mismatch");
  Tensor out(shape, x->value.data);
  return make_op(std::move(out), {x}, [x](Node& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const int64_t n = self.value.numel();
    for (int64_t i = 0; i < n; ++i) x->grad[i] += self.grad[i];
  });
}

Var nchw_to_tokens(const Var& x) {
  check(x->value.ndim() == 4, "nchw_to_tokens: need 4-D");
  const int N = x->value.dim(0), C = x->value.dim(1);
  const int H = x->value.dim(2), W = x->value.dim(3);
  Tensor out({N * H * W, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* src =
          x->value.data.data() + (static_cast<int64_t>(n) * C + c) * H * W;
      for (int p = 0; p < H * W; ++p)
        out[(static_cast<int64_t>(n) * H * W + p) * C + c] = src[p];
    }
  return make_op(std::move(out), {x}, [x, N, C, H, W](Node& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        double* dst =
            x->grad.data.data() + (static_cast<int64_t>(n) * C + c) * H * W;
        for (int p = 0; p < H * W; ++p)
          dst[p] += self.grad[(static_cast<int64_t>(n) * H * W + p) * C + c];
      }
  });
}

// ------------------------------------------------------------ softmax family

Var softmax_rows(const Var& x) {
  check(x->value.ndim() == 2, "softmax_rows: need 2-D");
  const int r = x->value.dim(0), c = x->value.dim(1);
  Tensor out({r, c});
  for (int i = 0; i < r; ++i) {
    const double* src = x->value.data.data() + static_cast<int64_t>(i) * c;
    double* dst = out.data.data() + static_cast<int64_t>(i) * c;
    double m = src[0];
    for (int j = 1; j < c; ++j) m = std::max(m, src[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      dst[j] = std::exp(src[j] - m);
      s += dst[j];
    }
    for (int j = 0; j < c; ++j) dst[j] /= s;
  }
  return make_op(std::move(out), {x}, [x, r, c](Node& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double* y = self.value.data.data() + static_cast<int64_t>(i) * c;
      const double* g = self.grad.data.data() + static_cast<int64_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += g[j] * y[j];
      double* dx = x->grad.data.data() + static_cast<int64_t>(i) * c;
      for (int j = 0; j < c; ++j) dx[j] += (g[j] - dot) * y[j];
    }
  });
}

Var logsumexp_rows(const Var& x) {
  check(x->value.ndim() == 2, "logsumexp_rows: need 2-D");
  const int r = x->value.dim(0), c = x->value.dim(1);
  Tensor out({r});
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<size_t>(r) * c);
  for (int i = 0; i < r; ++i) {
    const double* src = x->value.data.data() + static_cast<int64_t>(i) * c;
    double m = src[0];
    for (int j = 1; j < c; ++j) m = std::max(m, src[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(src[j] - m);
    out[i] = m + std::log(s);
    for (int j = 0; j < c; ++j)
      (*probs)[static_cast<size_t>(i) * c + j] = std::exp(src[j] - m) / s;
  }
  return make_op(std::move(out), {x}, [x, probs, r, c](Node& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double g = self.grad[i];
      for (int j = 0; j < c; ++j)
        x->grad[static_cast<int64_t>(i) * c + j] +=
            g * (*probs)[static_cast<size_t>(i) * c + j];
    }
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  check(x->value.ndim() == 2, "l2_normalize_rows: need 2-D");
  const int r = x->value.dim(0), c = x->value.dim(1);
  Tensor out({r, c});
  auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const double* src = x->value.data.data() + static_cast<int64_t>(i) * c;
    double ss = 0.0;
    for (int j = 0; j < c; ++j) ss += src[j] * src[j];
    double n = std::max(std::sqrt(ss), eps);
    (*norms)[static_cast<size_t>(i)] = n;
    double* dst = out.data.data() + static_cast<int64_t>(i) * c;
    for (int j = 0; j < c; ++j) dst[j] = src[j] / n;
  }
  return make_op(std::move(out), {x}, [x, norms, r, c, eps](Node& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double n = (*norms)[static_cast<size_t>(i)];
      const double* y = self.value.data.data() + static_cast<int64_t>(i) * c;
      const double* g = self.grad.data.data() + static_cast<int64_t>(i) * c;
      double* dx = x->grad.data.data() + static_cast<int64_t>(i) * c;
      if (n <= eps) {
        for (int j = 0; j < c; ++j) dx[j] += g[j] / n;
        continue;
      }
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += g[j] * y[j];
      for (int j = 0; j < c; ++j) dx[j] += (g[j] - y[j] * dot) / n;
    }
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta,
                    double eps) {
  check(x->value.ndim() == 2, "layer_norm_rows: need 2-D");
  const int r = x->value.dim(0), c = x->value.dim(1);
  check(gamma->value.numel() == c && beta->value.numel() == c,
        "layer_norm_rows: size mismatch");
  Tensor out({r, c});
  auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(r) * c);
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const double* src = x->value.data.data() + static_cast<int64_t>(i) * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += src[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[static_cast<size_t>(i)] = inv;
    for (int j = 0; j < c; ++j) {
      const double xh = (src[j] - mu) * inv;
      (*xhat)[static_cast<size_t>(i) * c + j] = xh;
      out[static_cast<int64_t>(i) * c + j] =
          xh * gamma->value[j] + beta->value[j];
    }
  }
  return make_op(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat, inv_sigma, r, c](Node& self) {
        for (int i = 0; i < r; ++i) {
          const double* g = self.grad.data.data() + static_cast<int64_t>(i) * c;
          const double* xh = xhat->data() + static_cast<size_t>(i) * c;
          if (gamma->requires_grad) {
            gamma->ensure_grad();
            for (int j = 0; j < c; ++j) gamma->grad[j] += g[j] * xh[j];
          }
          if (beta->requires_grad) {
            beta->ensure_grad();
            for (int j = 0; j < c; ++j) beta->grad[j] += g[j];
          }
          if (x->requires_grad) {
            x->ensure_grad();
            const double inv = (*inv_sigma)[static_cast<size_t>(i)];
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (int j = 0; j < c; ++j) {
              const double dxh = g[j] * gamma->value[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xh[j];
            }
            mean_dxhat /= c;
            mean_dxhat_xhat /= c;
            double* dx = x->grad.data.data() + static_cast<int64_t>(i) * c;
            for (int j = 0; j < c; ++j) {
              const double dxh = g[j] * gamma->value[j];
              dx[j] += inv * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

Var row_l2norm(const Var& x) {
  check(x->value.ndim() == 2, "row_l2norm: need 2-D");
  const int r = x->value.dim(0), c = x->value.dim(1);
  Tensor out({r});
  for (int i = 0; i < r; ++i) {
    const double* src = x->value.data.data() + static_cast<int64_t>(i) * c;
    double ss = 0.0;
    for (int j = 0; j < c; ++j) ss += src[j] * src[j];
    out[i] = std::sqrt(ss);
  }
  return make_op(std::move(out), {x}, [x, r, c](Node& self) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double n = std::max(self.value[i], 1e-12);
      const double g = self.grad[i];
      const double* src = x->value.data.data() + static_cast<int64_t>(i) * c;
      double* dx = x->grad.data.data() + static_cast<int64_t>(i) * c;
      for (int j = 0; j < c; ++j) dx[j] += g * src[j] / n;
    }
  });
}

// ---------------------------------------------------------------- fused losses

Var cross_entropy_mean(const Var& logits, const std::vector<int>& ids,
                       double smoothing) {
  check(logits->value.ndim() == 2, "cross_entropy_mean: need 2-D logits");
  const int r = logits->value.dim(0), c = logits->value.dim(1);
  check(static_cast<int>(ids.size()) == r, "cross_entropy_mean: id count");
  for (int id : ids)
    check(id >= 0 && id < c, "cross_entropy_mean: id out of class range");
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<size_t>(r) * c);
  double total = 0.0;
  for (int i = 0; i < r; ++i) {
    const double* z = logits->value.data.data() + static_cast<int64_t>(i) * c;
    double m = z[0];
    for (int j = 1; j < c; ++j) m = std::max(m, z[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(z[j] - m);
    const double lse = m + std::log(s);
    double zsum = 0.0;
    for (int j = 0; j < c; ++j) {
      (*probs)[static_cast<size_t>(i) * c + j] = std::exp(z[j] - m) / s;
      zsum += z[j];
    }
    total += lse - (1.0 - smoothing) * z[ids[static_cast<size_t>(i)]] -
             smoothing / c * zsum;
  }
  return make_op(Tensor::scalar(total / r), {logits},
                 [logits, probs, ids, smoothing, r, c](Node& self) {
                   if (!logits->requires_grad) return;
                   logits->ensure_grad();
                   const double g = self.grad[0] / r;
                   for (int i = 0; i < r; ++i) {
                     double* dz = logits->grad.data.data() +
                                  static_cast<int64_t>(i) * c;
                     for (int j = 0; j < c; ++j) {
                       double t = smoothing / c;
                       if (j == ids[static_cast<size_t>(i)]) t += 1.0 - smoothing;
                       dz[j] +=
                           g * ((*probs)[static_cast<size_t>(i) * c + j] - t);
                     }
                   }
                 });
}

Var triplet_batch_hard(const Var& features, const std::vector<int>& ids,
                       double margin) {
  check(features->value.ndim() == 2, "triplet_batch_hard: need 2-D");
  const int b = features->value.dim(0), d = features->value.dim(1);
  check(static_cast<int>(ids.size()) == b, "triplet_batch_hard: id count");

  std::vector<double> dist(static_cast<size_t>(b) * b, 0.0);
  for (int i = 0; i < b; ++i)
    for (int j = i + 1; j < b; ++j) {
      const double* xi = features->value.data.data() + static_cast<int64_t>(i) * d;
      const double* xj = features->value.data.data() + static_cast<int64_t>(j) * d;
      double ss = 0.0;
      for (int k = 0; k < d; ++k) ss += (xi[k] - xj[k]) * (xi[k] - xj[k]);
      const double dd = std::sqrt(ss);
      dist[static_cast<size_t>(i) * b + j] = dd;
      dist[static_cast<size_t>(j) * b + i] = dd;
    }

  // Non-finite features would otherwise look like a batch with no valid
  // anchors; surface them as a NaN loss so callers can report divergence.
  for (const double dd : dist)
    if (!std::isfinite(dd))
      return make_const(
          Tensor::scalar(std::numeric_limits<double>::quiet_NaN()));

  struct Pick {
    int pos = -1, neg = -1;
    bool active = false;
  };
  auto picks = std::make_shared<std::vector<Pick>>(static_cast<size_t>(b));
  int valid = 0;
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    double dpos = -1.0, dneg = -1.0;
    int pos = -1, neg = -1;
    for (int j = 0; j < b; ++j) {
      if (j == i) continue;
      const double dd = dist[static_cast<size_t>(i) * b + j];
      if (ids[static_cast<size_t>(j)] == ids[static_cast<size_t>(i)]) {
        if (dd > dpos) {
          dpos = dd;
          pos = j;
        }
      } else {
        if (neg < 0 || dd < dneg) {
          dneg = dd;
          neg = j;
        }
      }
    }
    if (pos < 0 || neg < 0) continue;
    ++valid;
    const double l = dpos - dneg + margin;
    auto& p = (*picks)[static_cast<size_t>(i)];
    p.pos = pos;
    p.neg = neg;
    p.active = l > 0.0;
    if (p.active) total += l;
  }
  check(valid > 0, "triplet_batch_hard: degenerate batch");

  return make_op(
      Tensor::scalar(total / valid), {features},
      [features, picks, b, d, valid](Node& self) {
        if (!features->requires_grad) return;
        features->ensure_grad();
        const double g = self.grad[0] / valid;
        auto edge = [&](int i, int j, double sign) {
          const double* xi =
              features->value.data.data() + static_cast<int64_t>(i) * d;
          const double* xj =
              features->value.data.data() + static_cast<int64_t>(j) * d;
          double ss = 0.0;
          for (int k = 0; k < d; ++k) ss += (xi[k] - xj[k]) * (xi[k] - xj[k]);
          const double dd = std::max(std::sqrt(ss), 1e-12);
          double* di = features->grad.data.data() + static_cast<int64_t>(i) * d;
          double* dj = features->grad.data.data() + static_cast<int64_t>(j) * d;
          for (int k = 0; k < d; ++k) {
            const double u = (xi[k] - xj[k]) / dd;
            di[k] += sign * g * u;
            dj[k] -= sign * g * u;
          }
        };
        for (int i = 0; i < b; ++i) {
          const auto& p = (*picks)[static_cast<size_t>(i)];
          if (p.pos < 0 || !p.active) continue;
          edge(i, p.pos, +1.0);
          edge(i, p.neg, -1.0);
        }
      });
}

}  // namespace trireid
