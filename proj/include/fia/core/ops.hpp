#pragma once

#include <algorithm>
#include <cmath>

#include "fia/core/autograd.hpp"
#include "fia/core/gemm.hpp"

// Elementwise / linear-algebra ops with hand-derived adjoints. Reductions
// accumulate in double regardless of T.
namespace fia {
namespace ag {

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw InputError(std::string(op) + ": shape mismatch " + shape_str(a->value.shape) + " vs " + shape_str(b->value.shape));
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "add");
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        for (auto& p : {a, b})
            if (p->needs_grad) {
                p->ensure_grad();
                for (size_t i = 0; i < n.grad.data.size(); ++i) p->grad.data[i] += n.grad.data[i];
            }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "sub");
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->needs_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < n.grad.data.size(); ++i) a->grad.data[i] += n.grad.data[i];
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < n.grad.data.size(); ++i) b->grad.data[i] -= n.grad.data[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mul");
    Tensor<T> out = a->value;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
    return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
        if (a->needs_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < n.grad.data.size(); ++i) a->grad.data[i] += n.grad.data[i] * b->value.data[i];
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < n.grad.data.size(); ++i) b->grad.data[i] += n.grad.data[i] * a->value.data[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v *= s;
    return make_op<T>(std::move(out), {a}, [a, s](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.data.size(); ++i) a->grad.data[i] += n.grad.data[i] * s;
    });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v += s;
    return make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.data.size(); ++i) a->grad.data[i] += n.grad.data[i];
    });
}

// y[n, ...] = x[n, ...] * coef[n]; coef is a plain per-sample factor.
template <typename T>
Var<T> scale_per_sample(const Var<T>& x, std::vector<T> coef) {
    int batch = x->value.size(0);
    if (static_cast<int>(coef.size()) != batch) throw InputError("scale_per_sample: coefficient count != batch");
    size_t per = x->value.numel() / static_cast<size_t>(batch);
    Tensor<T> out = x->value;
    for (int n = 0; n < batch; ++n)
        for (size_t i = 0; i < per; ++i) out.data[n * per + i] *= coef[n];
    return make_op<T>(std::move(out), {x}, [x, coef, per, batch](Node<T>& nd) {
        x->ensure_grad();
        for (int n = 0; n < batch; ++n)
            for (size_t i = 0; i < per; ++i) x->grad.data[n * per + i] += nd.grad.data[n * per + i] * coef[n];
    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.data.size(); ++i)
            if (a->value.data[i] > T(0)) a->grad.data[i] += n.grad.data[i];
    });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
    Tensor<T> out(a->value.shape);
    for (size_t i = 0; i < out.data.size(); ++i) {
        double x = static_cast<double>(a->value.data[i]);
        out.data[i] = static_cast<T>(x / (1.0 + std::exp(-x)));
    }
    return make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.data.size(); ++i) {
            double x = static_cast<double>(a->value.data[i]);
            double s = 1.0 / (1.0 + std::exp(-x));
            a->grad.data[i] += n.grad.data[i] * static_cast<T>(s * (1.0 + x * (1.0 - s)));
        }
    });
}

template <typename T>
Var<T> tanh_op(const Var<T>& a) {
    Tensor<T> out(a->value.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<T>(std::tanh(static_cast<double>(a->value.data[i])));
    return make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.data.size(); ++i) {
            T y = n.value.data[i];
            a->grad.data[i] += n.grad.data[i] * (T(1) - y * y);
        }
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
    Tensor<T> out = a->value.reshaped(std::move(s));
    return make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        for (size_t i = 0; i < n.grad.data.size(); ++i) a->grad.data[i] += n.grad.data[i];
    });
}

// Channel concat of two (N,C,H,W) tensors.
template <typename T>
Var<T> concat_c(const Var<T>& a, const Var<T>& b) {
    const auto& sa = a->value.shape;
    const auto& sb = b->value.shape;
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw InputError("concat_c: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
    int n_ = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
    Tensor<T> out({n_, ca + cb, sa[2], sa[3]});
    for (int n = 0; n < n_; ++n) {
        std::copy_n(&a->value.data[static_cast<size_t>(n) * ca * hw], static_cast<size_t>(ca) * hw,
                    &out.data[static_cast<size_t>(n) * (ca + cb) * hw]);
        std::copy_n(&b->value.data[static_cast<size_t>(n) * cb * hw], static_cast<size_t>(cb) * hw,
                    &out.data[static_cast<size_t>(n) * (ca + cb) * hw + static_cast<size_t>(ca) * hw]);
    }
    return make_op<T>(std::move(out), {a, b}, [a, b, n_, ca, cb, hw](Node<T>& nd) {
        for (int n = 0; n < n_; ++n) {
            const T* g = &nd.grad.data[static_cast<size_t>(n) * (ca + cb) * hw];
            if (a->needs_grad) {
                a->ensure_grad();
                T* ga = &a->grad.data[static_cast<size_t>(n) * ca * hw];
                for (int i = 0; i < ca * hw; ++i) ga[i] += g[i];
            }
            if (b->needs_grad) {
                b->ensure_grad();
                T* gb = &b->grad.data[static_cast<size_t>(n) * cb * hw];
                for (int i = 0; i < cb * hw; ++i) gb[i] += g[ca * hw + i];
            }
        }
    });
}

// Channels [c0, c1) of a (N,C,H,W) tensor.
template <typename T>
Var<T> slice_c(const Var<T>& a, int c0, int c1) {
    const auto& s = a->value.shape;
    if (s.size() != 4 || c0 < 0 || c1 > s[1] || c0 >= c1) throw InputError("slice_c: bad channel range");
    int n_ = s[0], c = s[1], hw = s[2] * s[3], cs = c1 - c0;
    Tensor<T> out({n_, cs, s[2], s[3]});
    for (int n = 0; n < n_; ++n)
        std::copy_n(&a->value.data[(static_cast<size_t>(n) * c + c0) * hw], static_cast<size_t>(cs) * hw,
                    &out.data[static_cast<size_t>(n) * cs * hw]);
    return make_op<T>(std::move(out), {a}, [a, n_, c, c0, cs, hw](Node<T>& nd) {
        a->ensure_grad();
        for (int n = 0; n < n_; ++n) {
            const T* g = &nd.grad.data[static_cast<size_t>(n) * cs * hw];
            T* ga = &a->grad.data[(static_cast<size_t>(n) * c + c0) * hw];
            for (int i = 0; i < cs * hw; ++i) ga[i] += g[i];
        }
    });
}

// y[n,c,h,w] = x[n,c,h,w] + e[n,c]  (per-sample channel bias, e.g. time embedding)
template <typename T>
Var<T> add_bias_nc(const Var<T>& x, const Var<T>& e) {
    const auto& s = x->value.shape;
    if (s.size() != 4 || e->value.shape != Shape{s[0], s[1]}) throw InputError("add_bias_nc: expected (N,C,H,W) and (N,C)");
    int n_ = s[0], c_ = s[1], hw = s[2] * s[3];
    Tensor<T> out = x->value;
    for (int n = 0; n < n_; ++n)
        for (int c = 0; c < c_; ++c) {
            T b = e->value.data[static_cast<size_t>(n) * c_ + c];
            T* o = &out.data[(static_cast<size_t>(n) * c_ + c) * hw];
            for (int i = 0; i < hw; ++i) o[i] += b;
        }
    return make_op<T>(std::move(out), {x, e}, [x, e, n_, c_, hw](Node<T>& nd) {
        if (x->needs_grad) {
            x->ensure_grad();
            for (size_t i = 0; i < nd.grad.data.size(); ++i) x->grad.data[i] += nd.grad.data[i];
        }
        if (e->needs_grad) {
            e->ensure_grad();
            for (int n = 0; n < n_; ++n)
                for (int c = 0; c < c_; ++c) {
                    const T* g = &nd.grad.data[(static_cast<size_t>(n) * c_ + c) * hw];
                    double acc = 0;
                    for (int i = 0; i < hw; ++i) acc += static_cast<double>(g[i]);
                    e->grad.data[static_cast<size_t>(n) * c_ + c] += static_cast<T>(acc);
                }
        }
    });
}

// x (N,K) * w (F,K)^T + b (F) -> (N,F)
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const auto& sx = x->value.shape;
    const auto& sw = w->value.shape;
    if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[1]) throw InputError("linear: shape mismatch");
    int n = sx[0], k = sx[1], f = sw[0];
    Tensor<T> out({n, f});
    gemm<T>(x->value.data.data(), w->value.data.data(), out.data.data(), n, k, f, false, true);
    if (b) {
        check_shape(b->value, {f}, "linear bias");
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < f; ++j) out.data[static_cast<size_t>(i) * f + j] += b->value.data[j];
    }
    std::vector<Var<T>> parents = {x, w};
    if (b) parents.push_back(b);
    return make_op<T>(std::move(out), std::move(parents), [x, w, b, n, k, f](Node<T>& nd) {
        if (x->needs_grad) {
            x->ensure_grad();
            gemm<T>(nd.grad.data.data(), w->value.data.data(), x->grad.data.data(), n, f, k, false, false, true);
        }
        if (w->needs_grad) {
            w->ensure_grad();
            gemm<T>(nd.grad.data.data(), x->value.data.data(), w->grad.data.data(), f, n, k, true, false, true);
        }
        if (b && b->needs_grad) {
            b->ensure_grad();
            for (int j = 0; j < f; ++j) {
                double acc = 0;
                for (int i = 0; i < n; ++i) acc += static_cast<double>(nd.grad.data[static_cast<size_t>(i) * f + j]);
                b->grad.data[j] += static_cast<T>(acc);
            }
        }
    });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const auto& sa = a->value.shape;
    const auto& sb = b->value.shape;
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) throw InputError("matmul: shape mismatch");
    int m = sa[0], k = sa[1], n = sb[1];
    Tensor<T> out({m, n});
    gemm<T>(a->value.data.data(), b->value.data.data(), out.data.data(), m, k, n);
    return make_op<T>(std::move(out), {a, b}, [a, b, m, k, n](Node<T>& nd) {
        if (a->needs_grad) {
            a->ensure_grad();
            gemm<T>(nd.grad.data.data(), b->value.data.data(), a->grad.data.data(), m, n, k, false, true, true);
        }
        if (b->needs_grad) {
            b->ensure_grad();
            gemm<T>(a->value.data.data(), nd.grad.data.data(), b->grad.data.data(), k, m, n, true, false, true);
        }
    });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    double acc = 0;
    for (T v : a->value.data) acc += static_cast<double>(v);
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(acc);
    return make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
        a->ensure_grad();
        T g = n.grad.data[0];
        for (auto& v : a->grad.data) v += g;
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    double acc = 0;
    for (T v : a->value.data) acc += static_cast<double>(v);
    size_t cnt = a->value.numel();
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(acc / static_cast<double>(cnt));
    return make_op<T>(std::move(out), {a}, [a, cnt](Node<T>& n) {
        a->ensure_grad();
        T g = static_cast<T>(static_cast<double>(n.grad.data[0]) / static_cast<double>(cnt));
        for (auto& v : a->grad.data) v += g;
    });
}

// mean((a-b)^2) over all elements
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "mse");
    size_t cnt = a->value.numel();
    double acc = 0;
    for (size_t i = 0; i < cnt; ++i) {
        double d = static_cast<double>(a->value.data[i]) - static_cast<double>(b->value.data[i]);
        acc += d * d;
    }
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(acc / static_cast<double>(cnt));
    return make_op<T>(std::move(out), {a, b}, [a, b, cnt](Node<T>& n) {
        double g = 2.0 * static_cast<double>(n.grad.data[0]) / static_cast<double>(cnt);
        if (a->needs_grad) {
            a->ensure_grad();
            for (size_t i = 0; i < cnt; ++i)
                a->grad.data[i] += static_cast<T>(g * (static_cast<double>(a->value.data[i]) - static_cast<double>(b->value.data[i])));
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (size_t i = 0; i < cnt; ++i)
                b->grad.data[i] -= static_cast<T>(g * (static_cast<double>(a->value.data[i]) - static_cast<double>(b->value.data[i])));
        }
    });
}

// mean(|a-b|); subgradient 0 at ties
template <typename T>
Var<T> l1(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a, b, "l1");
    size_t cnt = a->value.numel();
    double acc = 0;
    for (size_t i = 0; i < cnt; ++i) acc += std::abs(static_cast<double>(a->value.data[i]) - static_cast<double>(b->value.data[i]));
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(acc / static_cast<double>(cnt));
    return make_op<T>(std::move(out), {a, b}, [a, b, cnt](Node<T>& n) {
        T g = static_cast<T>(static_cast<double>(n.grad.data[0]) / static_cast<double>(cnt));
        for (size_t i = 0; i < cnt; ++i) {
            T d = a->value.data[i] - b->value.data[i];
            T s = d > T(0) ? g : (d < T(0) ? -g : T(0));
            if (a->needs_grad) {
                a->ensure_grad();
                a->grad.data[i] += s;
            }
            if (b->needs_grad) {
                b->ensure_grad();
                b->grad.data[i] -= s;
            }
        }
    });
}

// logits (N,K), integer labels; mean over batch of (logsumexp - logit[y]).
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels) {
    const auto& s = logits->value.shape;
    if (s.size() != 2 || static_cast<size_t>(s[0]) != labels.size()) throw InputError("cross_entropy: bad shapes");
    int n = s[0], k = s[1];
    double acc = 0;
    for (int i = 0; i < n; ++i) {
        const T* row = &logits->value.data[static_cast<size_t>(i) * k];
        double mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double se = 0;
        for (int j = 0; j < k; ++j) se += std::exp(static_cast<double>(row[j]) - mx);
        acc += mx + std::log(se) - static_cast<double>(row[labels[static_cast<size_t>(i)]]);
    }
    Tensor<T> out({1});
    out.data[0] = static_cast<T>(acc / n);
    return make_op<T>(std::move(out), {logits}, [logits, labels, n, k](Node<T>& nd) {
        logits->ensure_grad();
        double g = static_cast<double>(nd.grad.data[0]) / n;
        for (int i = 0; i < n; ++i) {
            const T* row = &logits->value.data[static_cast<size_t>(i) * k];
            double mx = row[0];
            for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
            double se = 0;
            for (int j = 0; j < k; ++j) se += std::exp(static_cast<double>(row[j]) - mx);
            for (int j = 0; j < k; ++j) {
                double p = std::exp(static_cast<double>(row[j]) - mx) / se;
                double delta = (j == labels[static_cast<size_t>(i)]) ? 1.0 : 0.0;
                logits->grad.data[static_cast<size_t>(i) * k + j] += static_cast<T>(g * (p - delta));
            }
        }
    });
}

}  // namespace ag
}  // namespace fia
