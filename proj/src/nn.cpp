#include "phaseforge/nn.hpp"

#include <Eigen/Dense>
#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "phaseforge/errors.hpp"
#include "phaseforge/fft.hpp"

namespace phaseforge::nn {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  bool rq = g_grad_enabled;
  if (rq) {
    rq = false;
    for (const auto& p : parents) rq = rq || p->requires_grad;
  }
  if (rq) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw contract_error(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (!grad_ready) {
    grad = Tensor(value.shape());
    grad_ready = true;
  }
  return grad;
}

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Var& root) {
  if (root->value.size() != 1) throw contract_error("backward: root must be scalar");

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });

  root->ensure_grad()[0] += 1.0;
  for (Node* n : order) {
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

void zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params) {
    p->ensure_grad().fill(0.0);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->requires_grad) {
      Tensor& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      Tensor& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->requires_grad) {
      Tensor& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      Tensor& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->requires_grad) {
      Tensor& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      Tensor& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa->value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->requires_grad) {
      Tensor& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / pb->value[i];
    }
    if (pb->requires_grad) {
      Tensor& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double bv = pb->value[i];
        g[i] -= n.grad[i] * pa->value[i] / (bv * bv);
      }
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return make_node(std::move(out), {a}, [s](Node& n) {
    Node* pa = n.parents[0].get();
    Tensor& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += s;
  return make_node(std::move(out), {a}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Tensor& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

Var scale_per_sample(const Var& a, const std::vector<double>& s) {
  if (a->value.rank() < 1 || a->value.dim(0) != s.size())
    throw contract_error("scale_per_sample: leading axis mismatch");
  const std::size_t stride = a->value.size() / s.size();
  Tensor out = a->value;
  for (std::size_t n = 0; n < s.size(); ++n)
    for (std::size_t i = 0; i < stride; ++i) out[n * stride + i] *= s[n];
  return make_node(std::move(out), {a}, [s, stride](Node& n) {
    Node* pa = n.parents[0].get();
    Tensor& g = pa->ensure_grad();
    for (std::size_t k = 0; k < s.size(); ++k)
      for (std::size_t i = 0; i < stride; ++i)
        g[k * stride + i] += s[k] * n.grad[k * stride + i];
  });
}

Var sum(const Var& a) {
  Tensor out({1});
  out[0] = a->value.sum();
  return make_node(std::move(out), {a}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Tensor& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0];
  });
}

Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->value.size());
  Tensor out({1});
  out[0] = a->value.sum() * inv;
  return make_node(std::move(out), {a}, [inv](Node& n) {
    Node* pa = n.parents[0].get();
    Tensor& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += inv * n.grad[0];
  });
}

Var silu(const Var& a) {
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-out[i]));
    out[i] *= sig;
  }
  return make_node(std::move(out), {a}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Tensor& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = pa->value[i];
      const double sig = 1.0 / (1.0 + std::exp(-x));
      g[i] += n.grad[i] * sig * (1.0 + x * (1.0 - sig));
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution (im2col + GEMM), stride 1

namespace {

void im2col(const double* x, std::size_t c_in, std::size_t h, std::size_t w,
            int k, int pad, double* col) {
  const std::size_t oh = h + 2 * static_cast<std::size_t>(pad) - static_cast<std::size_t>(k) + 1;
  const std::size_t ow = w + 2 * static_cast<std::size_t>(pad) - static_cast<std::size_t>(k) + 1;
  for (std::size_t c = 0; c < c_in; ++c) {
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        double* row = col + ((c * static_cast<std::size_t>(k) + static_cast<std::size_t>(i)) *
                                 static_cast<std::size_t>(k) +
                             static_cast<std::size_t>(j)) *
                                oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const long sy = static_cast<long>(y) + i - pad;
          double* dst = row + y * ow;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const long off = j - pad;
          const long lo = std::max(0L, -off);
          const long hi = std::min(static_cast<long>(ow), static_cast<long>(w) - off);
          if (lo > 0) std::fill(dst, dst + lo, 0.0);
          if (hi < static_cast<long>(ow)) std::fill(dst + std::max(lo, hi), dst + ow, 0.0);
          if (hi > lo) {
            const double* src = x + (c * h + static_cast<std::size_t>(sy)) * w +
                                static_cast<std::size_t>(lo + off);
            std::copy(src, src + (hi - lo), dst + lo);
          }
        }
      }
    }
  }
}

void col2im_accumulate(const double* col, std::size_t c_in, std::size_t h, std::size_t w,
                       int k, int pad, double* dx) {
  const std::size_t oh = h + 2 * static_cast<std::size_t>(pad) - static_cast<std::size_t>(k) + 1;
  const std::size_t ow = w + 2 * static_cast<std::size_t>(pad) - static_cast<std::size_t>(k) + 1;
  for (std::size_t c = 0; c < c_in; ++c) {
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        const double* row = col + ((c * static_cast<std::size_t>(k) + static_cast<std::size_t>(i)) *
                                       static_cast<std::size_t>(k) +
                                   static_cast<std::size_t>(j)) *
                                      oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const long sy = static_cast<long>(y) + i - pad;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          const long off = j - pad;
          const long lo = std::max(0L, -off);
          const long hi = std::min(static_cast<long>(ow), static_cast<long>(w) - off);
          double* dst = dx + (c * h + static_cast<std::size_t>(sy)) * w;
          const double* src = row + y * ow;
          for (long xo = lo; xo < hi; ++xo) dst[xo + off] += src[xo];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int pad) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 4 || ws.size() != 4) throw contract_error("conv2d: expects 4-D x and w");
  if (xs[1] != ws[1]) throw contract_error("conv2d: channel mismatch");
  if (ws[2] != ws[3]) throw contract_error("conv2d: kernel must be square");
  const std::size_t n = xs[0], c_in = xs[1], h = xs[2], wd = xs[3];
  const std::size_t c_out = ws[0];
  const int k = static_cast<int>(ws[2]);
  if (b->value.size() != c_out) throw contract_error("conv2d: bias size mismatch");
  const std::size_t oh = h + 2 * static_cast<std::size_t>(pad) - static_cast<std::size_t>(k) + 1;
  const std::size_t ow = wd + 2 * static_cast<std::size_t>(pad) - static_cast<std::size_t>(k) + 1;
  const std::size_t ckk = c_in * static_cast<std::size_t>(k) * static_cast<std::size_t>(k);

  Tensor out({n, c_out, oh, ow});
  {
    ConstMapRM w_mat(w->value.data(), static_cast<Eigen::Index>(c_out),
                     static_cast<Eigen::Index>(ckk));
#pragma omp parallel
    {
      std::vector<double> col(ckk * oh * ow);
#pragma omp for schedule(static)
      for (long ni = 0; ni < static_cast<long>(n); ++ni) {
        const double* xn = x->value.data() + static_cast<std::size_t>(ni) * c_in * h * wd;
        im2col(xn, c_in, h, wd, k, pad, col.data());
        ConstMapRM col_mat(col.data(), static_cast<Eigen::Index>(ckk),
                           static_cast<Eigen::Index>(oh * ow));
        MapRM out_mat(out.data() + static_cast<std::size_t>(ni) * c_out * oh * ow,
                      static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(oh * ow));
        out_mat.noalias() = w_mat * col_mat;
        for (std::size_t o = 0; o < c_out; ++o)
          out_mat.row(static_cast<Eigen::Index>(o)).array() += b->value[o];
      }
    }
  }

  return make_node(std::move(out), {x, w, b}, [pad, k, n, c_in, h, wd, c_out, oh, ow,
                                               ckk](Node& node) {
    Node* px = node.parents[0].get();
    Node* pw = node.parents[1].get();
    Node* pb = node.parents[2].get();

    ConstMapRM w_mat(pw->value.data(), static_cast<Eigen::Index>(c_out),
                     static_cast<Eigen::Index>(ckk));

    // per-sample partial weight grads, reduced serially for determinism
    std::vector<double> dw_partial;
    if (pw->requires_grad) dw_partial.assign(n * c_out * ckk, 0.0);
    if (px->requires_grad) px->ensure_grad();

#pragma omp parallel
    {
      std::vector<double> col(ckk * oh * ow);
      std::vector<double> dcol(ckk * oh * ow);
#pragma omp for schedule(static)
      for (long ni = 0; ni < static_cast<long>(n); ++ni) {
        const double* xn = px->value.data() + static_cast<std::size_t>(ni) * c_in * h * wd;
        ConstMapRM gout(node.grad.data() + static_cast<std::size_t>(ni) * c_out * oh * ow,
                        static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(oh * ow));
        if (pw->requires_grad) {
          im2col(xn, c_in, h, wd, k, pad, col.data());
          ConstMapRM col_mat(col.data(), static_cast<Eigen::Index>(ckk),
                             static_cast<Eigen::Index>(oh * ow));
          MapRM dw(dw_partial.data() + static_cast<std::size_t>(ni) * c_out * ckk,
                   static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(ckk));
          dw.noalias() = gout * col_mat.transpose();
        }
        if (px->requires_grad) {
          MapRM dcol_mat(dcol.data(), static_cast<Eigen::Index>(ckk),
                         static_cast<Eigen::Index>(oh * ow));
          dcol_mat.noalias() = w_mat.transpose() * gout;
          double* dxn = px->grad.data() + static_cast<std::size_t>(ni) * c_in * h * wd;
          col2im_accumulate(dcol.data(), c_in, h, wd, k, pad, dxn);
        }
      }
    }

    if (pw->requires_grad) {
      Tensor& gw = pw->ensure_grad();
      for (std::size_t ni = 0; ni < n; ++ni) {
        const double* src = dw_partial.data() + ni * c_out * ckk;
        for (std::size_t i = 0; i < c_out * ckk; ++i) gw[i] += src[i];
      }
    }
    if (pb->requires_grad) {
      Tensor& gb = pb->ensure_grad();
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t o = 0; o < c_out; ++o) {
          const double* g = node.grad.data() + (ni * c_out + o) * oh * ow;
          double s = 0.0;
          for (std::size_t i = 0; i < oh * ow; ++i) s += g[i];
          gb[o] += s;
        }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 2 || ws.size() != 2) throw contract_error("linear: expects 2-D x and w");
  if (xs[1] != ws[1]) throw contract_error("linear: inner dimension mismatch");
  const std::size_t n = xs[0], d = xs[1], e = ws[0];
  if (b->value.size() != e) throw contract_error("linear: bias size mismatch");

  Tensor out({n, e});
  {
    ConstMapRM xm(x->value.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    ConstMapRM wm(w->value.data(), static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(d));
    MapRM om(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(e));
    om.noalias() = xm * wm.transpose();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < e; ++j) out.at(i, j) += b->value[j];
  }

  return make_node(std::move(out), {x, w, b}, [n, d, e](Node& node) {
    Node* px = node.parents[0].get();
    Node* pw = node.parents[1].get();
    Node* pb = node.parents[2].get();
    ConstMapRM g(node.grad.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(e));
    if (px->requires_grad) {
      ConstMapRM wm(pw->value.data(), static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(d));
      MapRM gx(px->ensure_grad().data(), static_cast<Eigen::Index>(n),
               static_cast<Eigen::Index>(d));
      gx.noalias() += g * wm;
    }
    if (pw->requires_grad) {
      ConstMapRM xm(px->value.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
      MapRM gw(pw->ensure_grad().data(), static_cast<Eigen::Index>(e),
               static_cast<Eigen::Index>(d));
      gw.noalias() += g.transpose() * xm;
    }
    if (pb->requires_grad) {
      Tensor& gb = pb->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < e; ++j) gb[j] += node.grad[i * e + j];
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw contract_error("group_norm: expects 4-D input");
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  if (groups < 1 || c % static_cast<std::size_t>(groups) != 0)
    throw contract_error("group_norm: groups must divide channels");
  if (gamma->value.size() != c || beta->value.size() != c)
    throw contract_error("group_norm: affine parameter size mismatch");
  const std::size_t cg = c / static_cast<std::size_t>(groups);
  const std::size_t m = cg * h * w;

  Tensor out(xs);
  Tensor xhat(xs);
  std::vector<double> inv_std(n * static_cast<std::size_t>(groups));
  for (std::size_t ni = 0; ni < n; ++ni) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = (ni * c + static_cast<std::size_t>(g) * cg) * h * w;
      double mu = 0.0;
      for (std::size_t i = 0; i < m; ++i) mu += x->value[base + i];
      mu /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = x->value[base + i] - mu;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double istd = 1.0 / std::sqrt(var + eps);
      inv_std[ni * static_cast<std::size_t>(groups) + static_cast<std::size_t>(g)] = istd;
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t ch = static_cast<std::size_t>(g) * cg + i / (h * w);
        const double xh = (x->value[base + i] - mu) * istd;
        xhat[base + i] = xh;
        out[base + i] = gamma->value[ch] * xh + beta->value[ch];
      }
    }
  }

  auto xhat_keep = std::make_shared<Tensor>(std::move(xhat));
  auto istd_keep = std::make_shared<std::vector<double>>(std::move(inv_std));
  return make_node(std::move(out), {x, gamma, beta},
                   [n, c, h, w, groups, cg, m, xhat_keep, istd_keep](Node& node) {
    Node* px = node.parents[0].get();
    Node* pg = node.parents[1].get();
    Node* pb = node.parents[2].get();
    const Tensor& xh = *xhat_keep;

    if (pg->requires_grad || pb->requires_grad) {
      Tensor& gg = pg->ensure_grad();
      Tensor& gb = pb->ensure_grad();
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = (ni * c + ch) * h * w;
          double sg = 0.0, sb = 0.0;
          for (std::size_t i = 0; i < h * w; ++i) {
            sg += node.grad[base + i] * xh[base + i];
            sb += node.grad[base + i];
          }
          if (pg->requires_grad) gg[ch] += sg;
          if (pb->requires_grad) gb[ch] += sb;
        }
    }

    if (px->requires_grad) {
      Tensor& gx = px->ensure_grad();
      for (std::size_t ni = 0; ni < n; ++ni) {
        for (int g = 0; g < groups; ++g) {
          const std::size_t base = (ni * c + static_cast<std::size_t>(g) * cg) * h * w;
          const double istd =
              (*istd_keep)[ni * static_cast<std::size_t>(groups) + static_cast<std::size_t>(g)];
          double sum_gy = 0.0, sum_gy_xh = 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t ch = static_cast<std::size_t>(g) * cg + i / (h * w);
            const double gy = node.grad[base + i] * pg->value[ch];
            sum_gy += gy;
            sum_gy_xh += gy * xh[base + i];
          }
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t ch = static_cast<std::size_t>(g) * cg + i / (h * w);
            const double gy = node.grad[base + i] * pg->value[ch];
            gx[base + i] +=
                istd * (gy - inv_m * sum_gy - xh[base + i] * inv_m * sum_gy_xh);
          }
        }
      }
    }
  });
}

Var avg_pool2(const Var& x) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw contract_error("avg_pool2: expects 4-D input");
  if (xs[2] % 2 != 0 || xs[3] % 2 != 0)
    throw contract_error("avg_pool2: spatial dims must be even");
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  Tensor out({n, c, h / 2, w / 2});
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const double* src = x->value.data() + nc * h * w;
    double* dst = out.data() + nc * (h / 2) * (w / 2);
    for (std::size_t y = 0; y < h / 2; ++y)
      for (std::size_t xx = 0; xx < w / 2; ++xx)
        dst[y * (w / 2) + xx] = 0.25 * (src[2 * y * w + 2 * xx] + src[2 * y * w + 2 * xx + 1] +
                                        src[(2 * y + 1) * w + 2 * xx] +
                                        src[(2 * y + 1) * w + 2 * xx + 1]);
  }
  return make_node(std::move(out), {x}, [n, c, h, w](Node& node) {
    Node* px = node.parents[0].get();
    Tensor& gx = px->ensure_grad();
    for (std::size_t nc = 0; nc < n * c; ++nc) {
      const double* g = node.grad.data() + nc * (h / 2) * (w / 2);
      double* dst = gx.data() + nc * h * w;
      for (std::size_t y = 0; y < h / 2; ++y)
        for (std::size_t xx = 0; xx < w / 2; ++xx) {
          const double v = 0.25 * g[y * (w / 2) + xx];
          dst[2 * y * w + 2 * xx] += v;
          dst[2 * y * w + 2 * xx + 1] += v;
          dst[(2 * y + 1) * w + 2 * xx] += v;
          dst[(2 * y + 1) * w + 2 * xx + 1] += v;
        }
    }
  });
}

Var upsample_nearest2(const Var& x) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw contract_error("upsample_nearest2: expects 4-D input");
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  Tensor out({n, c, 2 * h, 2 * w});
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const double* src = x->value.data() + nc * h * w;
    double* dst = out.data() + nc * 4 * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        const double v = src[y * w + xx];
        dst[2 * y * 2 * w + 2 * xx] = v;
        dst[2 * y * 2 * w + 2 * xx + 1] = v;
        dst[(2 * y + 1) * 2 * w + 2 * xx] = v;
        dst[(2 * y + 1) * 2 * w + 2 * xx + 1] = v;
      }
  }
  return make_node(std::move(out), {x}, [n, c, h, w](Node& node) {
    Node* px = node.parents[0].get();
    Tensor& gx = px->ensure_grad();
    for (std::size_t nc = 0; nc < n * c; ++nc) {
      const double* g = node.grad.data() + nc * 4 * h * w;
      double* dst = gx.data() + nc * h * w;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
          dst[y * w + xx] += g[2 * y * 2 * w + 2 * xx] + g[2 * y * 2 * w + 2 * xx + 1] +
                             g[(2 * y + 1) * 2 * w + 2 * xx] +
                             g[(2 * y + 1) * 2 * w + 2 * xx + 1];
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const auto& as = a->value.shape();
  const auto& bs = b->value.shape();
  if (as.size() != 4 || bs.size() != 4) throw contract_error("concat_channels: expects 4-D");
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw contract_error("concat_channels: non-channel dims differ");
  const std::size_t n = as[0], ca = as[1], cb = bs[1], hw = as[2] * as[3];
  Tensor out({n, ca + cb, as[2], as[3]});
  for (std::size_t ni = 0; ni < n; ++ni) {
    std::copy(a->value.data() + ni * ca * hw, a->value.data() + (ni + 1) * ca * hw,
              out.data() + ni * (ca + cb) * hw);
    std::copy(b->value.data() + ni * cb * hw, b->value.data() + (ni + 1) * cb * hw,
              out.data() + ni * (ca + cb) * hw + ca * hw);
  }
  return make_node(std::move(out), {a, b}, [n, ca, cb, hw](Node& node) {
    Node* pa = node.parents[0].get();
    Node* pb = node.parents[1].get();
    if (pa->requires_grad) {
      Tensor& g = pa->ensure_grad();
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t i = 0; i < ca * hw; ++i)
          g[ni * ca * hw + i] += node.grad[ni * (ca + cb) * hw + i];
    }
    if (pb->requires_grad) {
      Tensor& g = pb->ensure_grad();
      for (std::size_t ni = 0; ni < n; ++ni)
        for (std::size_t i = 0; i < cb * hw; ++i)
          g[ni * cb * hw + i] += node.grad[ni * (ca + cb) * hw + ca * hw + i];
    }
  });
}

Var channel_bias(const Var& x, const Var& b) {
  const auto& xs = x->value.shape();
  const auto& bs = b->value.shape();
  if (xs.size() != 4 || bs.size() != 2) throw contract_error("channel_bias: bad ranks");
  if (bs[0] != xs[0] || bs[1] != xs[1]) throw contract_error("channel_bias: (N,C) mismatch");
  const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  Tensor out = x->value;
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const double bv = b->value[nc];
    double* dst = out.data() + nc * hw;
    for (std::size_t i = 0; i < hw; ++i) dst[i] += bv;
  }
  return make_node(std::move(out), {x, b}, [n, c, hw](Node& node) {
    Node* px = node.parents[0].get();
    Node* pb = node.parents[1].get();
    if (px->requires_grad) {
      Tensor& g = px->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    }
    if (pb->requires_grad) {
      Tensor& g = pb->ensure_grad();
      for (std::size_t nc = 0; nc < n * c; ++nc) {
        const double* src = node.grad.data() + nc * hw;
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += src[i];
        g[nc] += s;
      }
    }
  });
}

Var box_filter_valid(const Var& x, int k) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw contract_error("box_filter_valid: expects 4-D input");
  if (k < 1 || static_cast<std::size_t>(k) > xs[2] || static_cast<std::size_t>(k) > xs[3])
    throw contract_error("box_filter_valid: window exceeds input");
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const std::size_t oh = h - static_cast<std::size_t>(k) + 1;
  const std::size_t ow = w - static_cast<std::size_t>(k) + 1;
  const double inv = 1.0 / (static_cast<double>(k) * k);

  Tensor out({n, c, oh, ow});
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const double* src = x->value.data() + nc * h * w;
    double* dst = out.data() + nc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double s = 0.0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j)
            s += src[(y + static_cast<std::size_t>(i)) * w + xx + static_cast<std::size_t>(j)];
        dst[y * ow + xx] = s * inv;
      }
  }
  return make_node(std::move(out), {x}, [n, c, h, w, oh, ow, k, inv](Node& node) {
    Node* px = node.parents[0].get();
    Tensor& gx = px->ensure_grad();
    for (std::size_t nc = 0; nc < n * c; ++nc) {
      const double* g = node.grad.data() + nc * oh * ow;
      double* dst = gx.data() + nc * h * w;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double v = g[y * ow + xx] * inv;
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
              dst[(y + static_cast<std::size_t>(i)) * w + xx + static_cast<std::size_t>(j)] += v;
        }
    }
  });
}

namespace {

// centered orthonormal transform of (N,2,H,W) complex-pair tensors
Tensor transform_pairs(const Tensor& x, bool forward) {
  const auto& xs = x.shape();
  if (xs.size() != 4 || xs[1] != 2)
    throw contract_error("fft pair ops: expect (N,2,H,W) input");
  const std::size_t n = xs[0], h = xs[2], w = xs[3];
  Tensor out(xs);
  for (std::size_t ni = 0; ni < n; ++ni) {
    CImage img(h, w);
    const double* re = x.data() + (ni * 2) * h * w;
    const double* im = x.data() + (ni * 2 + 1) * h * w;
    for (std::size_t i = 0; i < h * w; ++i) img[i] = {re[i], im[i]};
    const CImage t = forward ? fft2c(img) : ifft2c(img);
    double* ore = out.data() + (ni * 2) * h * w;
    double* oim = out.data() + (ni * 2 + 1) * h * w;
    for (std::size_t i = 0; i < h * w; ++i) {
      ore[i] = t[i].real();
      oim[i] = t[i].imag();
    }
  }
  return out;
}

}  // namespace

// The centered orthonormal FFT is unitary, so its real-linear adjoint on
// (re, im) channels is the inverse transform.
Var fft2c_pair(const Var& x) {
  Tensor out = transform_pairs(x->value, true);
  return make_node(std::move(out), {x}, [](Node& node) {
    Node* px = node.parents[0].get();
    Tensor back = transform_pairs(node.grad, false);
    Tensor& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += back[i];
  });
}

Var ifft2c_pair(const Var& x) {
  Tensor out = transform_pairs(x->value, false);
  return make_node(std::move(out), {x}, [](Node& node) {
    Node* px = node.parents[0].get();
    Tensor back = transform_pairs(node.grad, true);
    Tensor& g = px->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += back[i];
  });
}

Var complex_magnitude(const Var& x, double eps) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4 || xs[1] != 2)
    throw contract_error("complex_magnitude: expects (N,2,H,W) input");
  const std::size_t n = xs[0], hw = xs[2] * xs[3];
  Tensor out({n, 1, xs[2], xs[3]});
  for (std::size_t ni = 0; ni < n; ++ni) {
    const double* re = x->value.data() + (ni * 2) * hw;
    const double* im = x->value.data() + (ni * 2 + 1) * hw;
    double* dst = out.data() + ni * hw;
    for (std::size_t i = 0; i < hw; ++i)
      dst[i] = std::sqrt(re[i] * re[i] + im[i] * im[i] + eps);
  }
  return make_node(std::move(out), {x}, [n, hw](Node& node) {
    Node* px = node.parents[0].get();
    Tensor& g = px->ensure_grad();
    for (std::size_t ni = 0; ni < n; ++ni) {
      const double* re = px->value.data() + (ni * 2) * hw;
      const double* im = px->value.data() + (ni * 2 + 1) * hw;
      const double* gv = node.grad.data() + ni * hw;
      const double* mv = node.value.data() + ni * hw;
      double* gre = g.data() + (ni * 2) * hw;
      double* gim = g.data() + (ni * 2 + 1) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        gre[i] += gv[i] * re[i] / mv[i];
        gim[i] += gv[i] * im[i] / mv[i];
      }
    }
  });
}

Var mask_columns(const Var& x, const std::vector<std::uint8_t>& lines) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw contract_error("mask_columns: expects 4-D input");
  if (xs[3] != lines.size()) throw contract_error("mask_columns: mask length mismatch");
  const std::size_t rows = xs[0] * xs[1] * xs[2], w = xs[3];
  Tensor out = x->value;
  for (std::size_t r = 0; r < rows; ++r) {
    double* dst = out.data() + r * w;
    for (std::size_t c = 0; c < w; ++c)
      if (!lines[c]) dst[c] = 0.0;
  }
  return make_node(std::move(out), {x}, [rows, w, lines](Node& node) {
    Node* px = node.parents[0].get();
    Tensor& g = px->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c)
        if (lines[c]) g[r * w + c] += node.grad[r * w + c];
  });
}

Var scale_by(const Var& x, const Var& s) {
  if (s->value.size() != 1) throw contract_error("scale_by: scale must be scalar");
  const double sv = s->value[0];
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv;
  return make_node(std::move(out), {x, s}, [sv](Node& node) {
    Node* px = node.parents[0].get();
    Node* ps = node.parents[1].get();
    if (px->requires_grad) {
      Tensor& g = px->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sv * node.grad[i];
    }
    if (ps->requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < node.grad.size(); ++i)
        acc += node.grad[i] * px->value[i];
      ps->ensure_grad()[0] += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// Layers

namespace {

Var register_param(ParamList& params, std::string name, Tensor value) {
  Var v = leaf(std::move(value), true);
  params.push_back({std::move(name), v});
  return v;
}

int norm_groups(int channels) { return channels % 8 == 0 ? 8 : channels; }

}  // namespace

Conv2d::Conv2d(std::string name, ParamList& params, int in_ch, int out_ch, int kernel,
               Rng& rng, bool zero_init)
    : pad_(kernel / 2) {
  Tensor w({static_cast<std::size_t>(out_ch), static_cast<std::size_t>(in_ch),
            static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel)});
  if (!zero_init) {
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(in_ch) * kernel * kernel));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std_dev * rng.normal();
  }
  Tensor b({static_cast<std::size_t>(out_ch)});
  w_ = register_param(params, name + ".w", std::move(w));
  b_ = register_param(params, name + ".b", std::move(b));
}

Var Conv2d::operator()(const Var& x) const { return conv2d(x, w_, b_, pad_); }

Linear::Linear(std::string name, ParamList& params, int in_dim, int out_dim, Rng& rng,
               bool zero_init) {
  Tensor w({static_cast<std::size_t>(out_dim), static_cast<std::size_t>(in_dim)});
  if (!zero_init) {
    const double std_dev = std::sqrt(1.0 / static_cast<double>(in_dim));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std_dev * rng.normal();
  }
  Tensor b({static_cast<std::size_t>(out_dim)});
  w_ = register_param(params, name + ".w", std::move(w));
  b_ = register_param(params, name + ".b", std::move(b));
}

Var Linear::operator()(const Var& x) const { return linear(x, w_, b_); }

GroupNorm::GroupNorm(std::string name, ParamList& params, int channels, int groups)
    : groups_(groups) {
  Tensor gamma({static_cast<std::size_t>(channels)});
  gamma.fill(1.0);
  Tensor beta({static_cast<std::size_t>(channels)});
  gamma_ = register_param(params, name + ".gamma", std::move(gamma));
  beta_ = register_param(params, name + ".beta", std::move(beta));
}

Var GroupNorm::operator()(const Var& x) const {
  return group_norm(x, gamma_, beta_, groups_);
}

ResBlock::ResBlock(std::string name, ParamList& params, int in_ch, int out_ch,
                   int time_dim, Rng& rng) {
  gn1_ = GroupNorm(name + ".gn1", params, in_ch, norm_groups(in_ch));
  conv1_ = Conv2d(name + ".conv1", params, in_ch, out_ch, 3, rng);
  gn2_ = GroupNorm(name + ".gn2", params, out_ch, norm_groups(out_ch));
  conv2_ = Conv2d(name + ".conv2", params, out_ch, out_ch, 3, rng);
  if (in_ch != out_ch) shortcut_ = Conv2d(name + ".shortcut", params, in_ch, out_ch, 1, rng);
  if (time_dim > 0) time_proj_ = Linear(name + ".time", params, time_dim, out_ch, rng);
}

Var ResBlock::operator()(const Var& x, const Var& temb) const {
  static const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  Var h = conv1_(silu(gn1_(x)));
  if (time_proj_) {
    if (!temb) throw contract_error("ResBlock: missing time embedding");
    h = channel_bias(h, (*time_proj_)(temb));
  }
  h = conv2_(silu(gn2_(h)));
  const Var s = shortcut_ ? (*shortcut_)(x) : x;
  return scale(add(s, h), inv_sqrt2);
}

UNet::UNet(std::string name, ParamList& params, int in_ch, int out_ch, int base,
           int depth, int time_dim, Rng& rng)
    : depth_(depth) {
  if (depth < 1) throw contract_error("UNet: depth must be >= 1");
  conv_in_ = Conv2d(name + ".conv_in", params, in_ch, base, 3, rng);
  int prev = base;
  for (int l = 0; l < depth; ++l) {
    const int ch = base << l;
    down_.push_back(ResBlock(name + ".down" + std::to_string(l), params, prev, ch,
                             time_dim, rng));
    prev = ch;
  }
  bottleneck_ = ResBlock(name + ".mid", params, prev, prev, time_dim, rng);
  for (int l = 0; l < depth; ++l) {
    const int ch = base << l;
    const int in_up = (l == depth - 1) ? 2 * ch : (base << (l + 1)) + ch;
    up_.push_back(ResBlock(name + ".up" + std::to_string(l), params, in_up, ch,
                           time_dim, rng));
  }
  gn_out_ = GroupNorm(name + ".gn_out", params, base, norm_groups(base));
  conv_out_ = Conv2d(name + ".conv_out", params, base, out_ch, 3, rng, /*zero_init=*/true);
}

Var UNet::operator()(const Var& x, const Var& temb) const {
  Var h = conv_in_(x);
  std::vector<Var> skips;
  for (int l = 0; l < depth_; ++l) {
    if (l > 0) h = avg_pool2(h);
    h = down_[static_cast<std::size_t>(l)](h, temb);
    skips.push_back(h);
  }
  h = bottleneck_(h, temb);
  for (int l = depth_ - 1; l >= 0; --l) {
    if (l < depth_ - 1) h = upsample_nearest2(h);
    h = concat_channels(h, skips[static_cast<std::size_t>(l)]);
    h = up_[static_cast<std::size_t>(l)](h, temb);
  }
  return conv_out_(silu(gn_out_(h)));
}

Tensor time_features(const std::vector<double>& ts, int dim) {
  if (dim < 2 || dim % 2 != 0) throw contract_error("time_features: dim must be even, >= 2");
  const int half = dim / 2;
  Tensor out({ts.size(), static_cast<std::size_t>(dim)});
  const double log_max = std::log(10000.0);
  for (std::size_t n = 0; n < ts.size(); ++n) {
    const double u = 1000.0 * ts[n];
    for (int i = 0; i < half; ++i) {
      const double freq =
          std::exp(-log_max * static_cast<double>(i) / std::max(1, half - 1));
      out.at(n, static_cast<std::size_t>(i)) = std::sin(u * freq);
      out.at(n, static_cast<std::size_t>(half + i)) = std::cos(u * freq);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(const std::vector<Var>& params, double beta1, double beta2, double eps)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Node& p = *params_[k];
    const Tensor& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m_[k][i] / bc1;
      const double vhat = v_[k][i] / bc2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::vector<Var> vars_of(const ParamList& params) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var);
  return out;
}

}  // namespace phaseforge::nn
