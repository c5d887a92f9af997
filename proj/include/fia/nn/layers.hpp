#pragma once

#include <cmath>
#include <string>

#include "fia/core/attn.hpp"
#include "fia/core/conv.hpp"
#include "fia/core/ops.hpp"
#include "fia/core/rng.hpp"
#include "fia/nn/params.hpp"

// Thin layer wrappers: construction registers named parameters in a
// ParamStore, application builds graph nodes. Layers hold Vars, not values,
// so loading a checkpoint into the store re-points every layer for free.
namespace fia {
namespace nn {

template <typename T>
Tensor<T> he_normal(Rng& rng, Shape shape, int fan_in) {
    Tensor<T> t(std::move(shape));
    double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * std);
    return t;
}

// largest group count <= 8 dividing c (falls back to 1)
inline int pick_groups(int c) {
    for (int g = 8; g > 1; --g)
        if (c % g == 0) return g;
    return 1;
}

template <typename T>
struct Conv2d {
    ag::Var<T> w, b;
    int stride = 1, pad = 0;

    Conv2d() = default;
    Conv2d(ParamStore<T>& ps, Rng& rng, const std::string& name, int ci, int co, int k, int stride_ = 1, int pad_ = -1,
           bool zero_init = false)
        : stride(stride_), pad(pad_ < 0 ? k / 2 : pad_) {
        Tensor<T> wt = zero_init ? Tensor<T>::zeros({co, ci, k, k}) : he_normal<T>(rng, {co, ci, k, k}, ci * k * k);
        w = ps.add(name + ".w", std::move(wt));
        b = ps.add(name + ".b", Tensor<T>::zeros({co}));
    }

    ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct Linear {
    ag::Var<T> w, b;

    Linear() = default;
    Linear(ParamStore<T>& ps, Rng& rng, const std::string& name, int in, int out, bool zero_init = false) {
        Tensor<T> wt = zero_init ? Tensor<T>::zeros({out, in}) : he_normal<T>(rng, {out, in}, in);
        w = ps.add(name + ".w", std::move(wt));
        b = ps.add(name + ".b", Tensor<T>::zeros({out}));
    }

    ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::linear(x, w, b); }
};

template <typename T>
struct GroupNorm {
    ag::Var<T> gamma, beta;
    int groups = 1;

    GroupNorm() = default;
    GroupNorm(ParamStore<T>& ps, const std::string& name, int c, int groups_ = 0) : groups(groups_ > 0 ? groups_ : pick_groups(c)) {
        gamma = ps.add(name + ".g", Tensor<T>::full({c}, T(1)));
        beta = ps.add(name + ".b", Tensor<T>::zeros({c}));
    }

    ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::group_norm(x, gamma, beta, groups); }
};

// Pre-norm single-head self-attention over spatial positions with residual.
// The output projection starts at zero so a fresh block is the identity.
template <typename T>
struct SelfAttention2d {
    GroupNorm<T> norm;
    Conv2d<T> q, k, v, proj;

    SelfAttention2d() = default;
    SelfAttention2d(ParamStore<T>& ps, Rng& rng, const std::string& name, int c)
        : norm(ps, name + ".norm", c),
          q(ps, rng, name + ".q", c, c, 1),
          k(ps, rng, name + ".k", c, c, 1),
          v(ps, rng, name + ".v", c, c, 1),
          proj(ps, rng, name + ".proj", c, c, 1, 1, -1, /*zero_init=*/true) {}

    ag::Var<T> operator()(const ag::Var<T>& x) const {
        const auto& s = x->value.shape;
        auto h = norm(x);
        auto out = ag::attention(ag::nchw_to_ntc(q(h)), ag::nchw_to_ntc(k(h)), ag::nchw_to_ntc(v(h)));
        return ag::add(x, proj(ag::ntc_to_nchw(out, s[2], s[3])));
    }
};

// norm -> silu -> conv, twice, with residual (1x1 shortcut when widths
// differ). An optional per-sample embedding is injected as a channel bias
// between the halves.
template <typename T>
struct ConvBlock {
    GroupNorm<T> n1, n2;
    Conv2d<T> c1, c2, skip;
    Linear<T> emb;
    bool has_skip = false, has_emb = false;

    ConvBlock() = default;
    ConvBlock(ParamStore<T>& ps, Rng& rng, const std::string& name, int ci, int co, int emb_dim = 0)
        : n1(ps, name + ".n1", ci), n2(ps, name + ".n2", co) {
        c1 = Conv2d<T>(ps, rng, name + ".c1", ci, co, 3);
        c2 = Conv2d<T>(ps, rng, name + ".c2", co, co, 3);
        if (ci != co) {
            skip = Conv2d<T>(ps, rng, name + ".skip", ci, co, 1);
            has_skip = true;
        }
        if (emb_dim > 0) {
            emb = Linear<T>(ps, rng, name + ".emb", emb_dim, co);
            has_emb = true;
        }
    }

    ag::Var<T> operator()(const ag::Var<T>& x, const ag::Var<T>& e = nullptr) const {
        auto h = c1(ag::silu(n1(x)));
        if (has_emb && e) h = ag::add_bias_nc(h, emb(e));
        h = c2(ag::silu(n2(h)));
        return ag::add(has_skip ? skip(x) : x, h);
    }
};

// Sinusoidal features of a scalar in [0,1], then a 2-layer MLP.
template <typename T>
struct TimeEmbed {
    Linear<T> l1, l2;
    int freqs;

    TimeEmbed() = default;
    TimeEmbed(ParamStore<T>& ps, Rng& rng, const std::string& name, int dim, int freqs_ = 8) : freqs(freqs_) {
        l1 = Linear<T>(ps, rng, name + ".l1", 2 * freqs_, dim);
        l2 = Linear<T>(ps, rng, name + ".l2", dim, dim);
    }

    // t: one value per sample
    ag::Var<T> operator()(const std::vector<T>& t) const {
        int n = static_cast<int>(t.size());
        Tensor<T> feat({n, 2 * freqs});
        for (int i = 0; i < n; ++i)
            for (int f = 0; f < freqs; ++f) {
                double w = std::pow(1000.0, static_cast<double>(f) / std::max(1, freqs - 1));
                feat.at(i, 2 * f) = static_cast<T>(std::sin(w * static_cast<double>(t[static_cast<size_t>(i)])));
                feat.at(i, 2 * f + 1) = static_cast<T>(std::cos(w * static_cast<double>(t[static_cast<size_t>(i)])));
            }
        return l2(ag::silu(l1(ag::constant(std::move(feat)))));
    }
};

}  // namespace nn
}  // namespace fia
