#pragma once

#include <cmath>

#include "fia/core/ops.hpp"

namespace fia {
namespace ag {

// GroupNorm over (N,C,H,W): per-sample, per-group standardization followed by
// per-channel affine. Statistics never cross the batch axis, so outputs for a
// sample are independent of whatever else sits in the batch.
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups, T eps = T(1e-5)) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw InputError("group_norm: expected (N,C,H,W)");
    int n_ = s[0], c_ = s[1], hw = s[2] * s[3];
    if (c_ % groups != 0) throw InputError("group_norm: channels not divisible by groups");
    check_shape(gamma->value, {c_}, "group_norm gamma");
    check_shape(beta->value, {c_}, "group_norm beta");
    int cg = c_ / groups;          // channels per group
    size_t m = static_cast<size_t>(cg) * hw;  // elements per group
    std::vector<T> mean(static_cast<size_t>(n_) * groups), invstd(static_cast<size_t>(n_) * groups);
    Tensor<T> out(s);
    for (int n = 0; n < n_; ++n)
        for (int g = 0; g < groups; ++g) {
            const T* xp = &x->value.data[(static_cast<size_t>(n) * c_ + g * cg) * hw];
            double mu = 0;
            for (size_t i = 0; i < m; ++i) mu += static_cast<double>(xp[i]);
            mu /= static_cast<double>(m);
            double var = 0;
            for (size_t i = 0; i < m; ++i) {
                double d = static_cast<double>(xp[i]) - mu;
                var += d * d;
            }
            var /= static_cast<double>(m);
            T is = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
            mean[static_cast<size_t>(n) * groups + g] = static_cast<T>(mu);
            invstd[static_cast<size_t>(n) * groups + g] = is;
            T* op = &out.data[(static_cast<size_t>(n) * c_ + g * cg) * hw];
            for (int cc = 0; cc < cg; ++cc) {
                T ga = gamma->value.data[g * cg + cc];
                T be = beta->value.data[g * cg + cc];
                for (int i = 0; i < hw; ++i) {
                    size_t idx = static_cast<size_t>(cc) * hw + i;
                    op[idx] = (xp[idx] - static_cast<T>(mu)) * is * ga + be;
                }
            }
        }
    return make_op<T>(std::move(out), {x, gamma, beta},
                      [x, gamma, beta, n_, c_, hw, groups, cg, m, mean = std::move(mean), invstd = std::move(invstd)](Node<T>& nd) {
                          if (gamma->needs_grad) gamma->ensure_grad();
                          if (beta->needs_grad) beta->ensure_grad();
                          if (x->needs_grad) x->ensure_grad();
                          for (int n = 0; n < n_; ++n)
                              for (int g = 0; g < groups; ++g) {
                                  size_t base = (static_cast<size_t>(n) * c_ + g * cg) * hw;
                                  const T* xp = &x->value.data[base];
                                  const T* gy = &nd.grad.data[base];
                                  T mu = mean[static_cast<size_t>(n) * groups + g];
                                  T is = invstd[static_cast<size_t>(n) * groups + g];
                                  if (gamma->needs_grad || beta->needs_grad) {
                                      for (int cc = 0; cc < cg; ++cc) {
                                          double dg = 0, db = 0;
                                          for (int i = 0; i < hw; ++i) {
                                              size_t idx = static_cast<size_t>(cc) * hw + i;
                                              double xh = (static_cast<double>(xp[idx]) - mu) * is;
                                              dg += static_cast<double>(gy[idx]) * xh;
                                              db += static_cast<double>(gy[idx]);
                                          }
                                          if (gamma->needs_grad) gamma->grad.data[g * cg + cc] += static_cast<T>(dg);
                                          if (beta->needs_grad) beta->grad.data[g * cg + cc] += static_cast<T>(db);
                                      }
                                  }
                                  if (!x->needs_grad) continue;
                                  // standard normalization backward with ghat = dy * gamma
                                  double sum_g = 0, sum_gx = 0;
                                  for (int cc = 0; cc < cg; ++cc) {
                                      T ga = gamma->value.data[g * cg + cc];
                                      for (int i = 0; i < hw; ++i) {
                                          size_t idx = static_cast<size_t>(cc) * hw + i;
                                          double gh = static_cast<double>(gy[idx]) * ga;
                                          double xh = (static_cast<double>(xp[idx]) - mu) * is;
                                          sum_g += gh;
                                          sum_gx += gh * xh;
                                      }
                                  }
                                  double inv_m = 1.0 / static_cast<double>(m);
                                  T* gx = &x->grad.data[base];
                                  for (int cc = 0; cc < cg; ++cc) {
                                      T ga = gamma->value.data[g * cg + cc];
                                      for (int i = 0; i < hw; ++i) {
                                          size_t idx = static_cast<size_t>(cc) * hw + i;
                                          double gh = static_cast<double>(gy[idx]) * ga;
                                          double xh = (static_cast<double>(xp[idx]) - mu) * is;
                                          gx[idx] += static_cast<T>(is * (gh - inv_m * (sum_g + xh * sum_gx)));
                                      }
                                  }
                              }
                      });
}

// (N,C,H,W) -> (N, H*W, C) token layout for attention
template <typename T>
Var<T> nchw_to_ntc(const Var<T>& x) {
    const auto& s = x->value.shape;
    if (s.size() != 4) throw InputError("nchw_to_ntc: expected (N,C,H,W)");
    int n_ = s[0], c_ = s[1], hw = s[2] * s[3];
    Tensor<T> out({n_, hw, c_});
    for (int n = 0; n < n_; ++n)
        for (int c = 0; c < c_; ++c) {
            const T* src = &x->value.data[(static_cast<size_t>(n) * c_ + c) * hw];
            for (int t = 0; t < hw; ++t) out.data[(static_cast<size_t>(n) * hw + t) * c_ + c] = src[t];
        }
    return make_op<T>(std::move(out), {x}, [x, n_, c_, hw](Node<T>& nd) {
        x->ensure_grad();
        for (int n = 0; n < n_; ++n)
            for (int c = 0; c < c_; ++c) {
                T* g = &x->grad.data[(static_cast<size_t>(n) * c_ + c) * hw];
                for (int t = 0; t < hw; ++t) g[t] += nd.grad.data[(static_cast<size_t>(n) * hw + t) * c_ + c];
            }
    });
}

template <typename T>
Var<T> ntc_to_nchw(const Var<T>& x, int h, int w) {
    const auto& s = x->value.shape;
    if (s.size() != 3 || s[1] != h * w) throw InputError("ntc_to_nchw: token count != h*w");
    int n_ = s[0], c_ = s[2], hw = h * w;
    Tensor<T> out({n_, c_, h, w});
    for (int n = 0; n < n_; ++n)
        for (int c = 0; c < c_; ++c) {
            T* dst = &out.data[(static_cast<size_t>(n) * c_ + c) * hw];
            for (int t = 0; t < hw; ++t) dst[t] = x->value.data[(static_cast<size_t>(n) * hw + t) * c_ + c];
        }
    return make_op<T>(std::move(out), {x}, [x, n_, c_, hw](Node<T>& nd) {
        x->ensure_grad();
        for (int n = 0; n < n_; ++n)
            for (int c = 0; c < c_; ++c) {
                const T* g = &nd.grad.data[(static_cast<size_t>(n) * c_ + c) * hw];
                for (int t = 0; t < hw; ++t) x->grad.data[(static_cast<size_t>(n) * hw + t) * c_ + c] += g[t];
            }
    });
}

// Single-head scaled dot-product attention on (N,T,C) tokens. No positional
// terms anywhere, so permuting tokens permutes the output identically.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
    const auto& s = q->value.shape;
    if (s.size() != 3 || !q->value.same_shape(k->value) || !q->value.same_shape(v->value))
        throw InputError("attention: q/k/v must share (N,T,C)");
    int n_ = s[0], t_ = s[1], c_ = s[2];
    T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c_)));
    size_t tt = static_cast<size_t>(t_) * t_, tc = static_cast<size_t>(t_) * c_;
    std::vector<T> attn(static_cast<size_t>(n_) * tt);  // row-softmaxed scores, saved for backward
    Tensor<T> out({n_, t_, c_});
    for (int n = 0; n < n_; ++n) {
        const T* qp = &q->value.data[n * tc];
        const T* kp = &k->value.data[n * tc];
        const T* vp = &v->value.data[n * tc];
        T* ap = &attn[n * tt];
        gemm<T>(qp, kp, ap, t_, c_, t_, false, true);
        for (int i = 0; i < t_; ++i) {
            T* row = ap + static_cast<size_t>(i) * t_;
            double mx = -1e300;
            for (int j = 0; j < t_; ++j) mx = std::max(mx, static_cast<double>(row[j]) * sc);
            double se = 0;
            for (int j = 0; j < t_; ++j) {
                double e = std::exp(static_cast<double>(row[j]) * sc - mx);
                row[j] = static_cast<T>(e);
                se += e;
            }
            for (int j = 0; j < t_; ++j) row[j] = static_cast<T>(static_cast<double>(row[j]) / se);
        }
        gemm<T>(ap, vp, &out.data[n * tc], t_, t_, c_);
    }
    return make_op<T>(std::move(out), {q, k, v}, [q, k, v, n_, t_, c_, sc, tt, tc, attn = std::move(attn)](Node<T>& nd) {
        std::vector<T> da(tt), ds(tt);
        for (int n = 0; n < n_; ++n) {
            const T* ap = &attn[n * tt];
            const T* go = &nd.grad.data[n * tc];
            if (v->needs_grad) {
                v->ensure_grad();
                gemm<T>(ap, go, &v->grad.data[n * tc], t_, t_, c_, true, false, true);
            }
            if (!q->needs_grad && !k->needs_grad) continue;
            gemm<T>(go, &v->value.data[n * tc], da.data(), t_, c_, t_, false, true);
            // softmax jacobian: ds = a * (da - rowsum(da * a))
            for (int i = 0; i < t_; ++i) {
                double dot = 0;
                for (int j = 0; j < t_; ++j) dot += static_cast<double>(da[static_cast<size_t>(i) * t_ + j]) * ap[static_cast<size_t>(i) * t_ + j];
                for (int j = 0; j < t_; ++j) {
                    size_t idx = static_cast<size_t>(i) * t_ + j;
                    ds[idx] = static_cast<T>(ap[idx] * (static_cast<double>(da[idx]) - dot) * sc);
                }
            }
            if (q->needs_grad) {
                q->ensure_grad();
                gemm<T>(ds.data(), &k->value.data[n * tc], &q->grad.data[n * tc], t_, t_, c_, false, false, true);
            }
            if (k->needs_grad) {
                k->ensure_grad();
                gemm<T>(ds.data(), &q->value.data[n * tc], &k->grad.data[n * tc], t_, t_, c_, true, false, true);
            }
        }
    });
}

}  // namespace ag
}  // namespace fia
