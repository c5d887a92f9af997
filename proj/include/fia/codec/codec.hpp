#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fia/core/attn.hpp"
#include "fia/core/conv.hpp"
#include "fia/core/ops.hpp"
#include "fia/core/serial.hpp"
#include "fia/eval/metrics.hpp"
#include "fia/nn/layers.hpp"
#include "fia/nn/optim.hpp"
#include "fia/nn/params.hpp"

// Small VAE over 64x64 images with a (4,8,8) latent (8x spatial factor).
// Encoding is the posterior mean — the attack needs a fixed regression
// target, so no sampling outside the trainer. After freeze() the parameter
// digest is pinned; decode stays differentiable w.r.t. its latent input.
namespace fia {
namespace codec {

struct CodecConfig {
    Shape latent_shape = {4, 8, 8};
    int steps = 3000;
    int batch = 8;
    double lr = 1e-3;
    double kl_weight = 1e-4;
    uint64_t seed = 1;
};

template <typename T>
class CodecT {
public:
    explicit CodecT(uint64_t seed, Shape latent_shape = {4, 8, 8}) : latent_shape_(std::move(latent_shape)) {
        if (latent_shape_ != Shape{4, 8, 8}) throw ParameterError("codec is built for a (4,8,8) latent");
        Rng rng = Rng(seed).fork("codec.init");
        e1_ = nn::Conv2d<T>(params_, rng, "enc.c1", 3, 32, 3, 2, 1);
        en1_ = nn::GroupNorm<T>(params_, "enc.n1", 32);
        e2_ = nn::Conv2d<T>(params_, rng, "enc.c2", 32, 64, 3, 2, 1);
        en2_ = nn::GroupNorm<T>(params_, "enc.n2", 64);
        e3_ = nn::Conv2d<T>(params_, rng, "enc.c3", 64, 64, 3, 2, 1);
        en3_ = nn::GroupNorm<T>(params_, "enc.n3", 64);
        eblock_ = nn::ConvBlock<T>(params_, rng, "enc.res", 64, 64);
        eout_ = nn::Conv2d<T>(params_, rng, "enc.out", 64, 8, 3, 1, 1);  // 4 mean + 4 logvar

        d1_ = nn::Conv2d<T>(params_, rng, "dec.c1", 4, 64, 3, 1, 1);
        dn1_ = nn::GroupNorm<T>(params_, "dec.n1", 64);
        dblock_ = nn::ConvBlock<T>(params_, rng, "dec.res", 64, 64);
        d2_ = nn::Conv2d<T>(params_, rng, "dec.c2", 64, 64, 3, 1, 1);
        dn2_ = nn::GroupNorm<T>(params_, "dec.n2", 64);
        d3_ = nn::Conv2d<T>(params_, rng, "dec.c3", 64, 32, 3, 1, 1);
        dn3_ = nn::GroupNorm<T>(params_, "dec.n3", 32);
        d4_ = nn::Conv2d<T>(params_, rng, "dec.c4", 32, 32, 3, 1, 1);
        dn4_ = nn::GroupNorm<T>(params_, "dec.n4", 32);
        dout_ = nn::Conv2d<T>(params_, rng, "dec.out", 32, 3, 3, 1, 1);
    }

    const Shape& latent_shape() const { return latent_shape_; }
    nn::ParamStore<T>& params() { return params_; }

    // (N,3,64,64) -> ((N,4,8,8) mean, (N,4,8,8) logvar)
    std::pair<ag::Var<T>, ag::Var<T>> encode_graph(const ag::Var<T>& x) const {
        auto h = ag::silu(en1_(e1_(x)));
        h = ag::silu(en2_(e2_(h)));
        h = ag::silu(en3_(e3_(h)));
        h = eblock_(h);
        auto out = eout_(h);
        return {ag::slice_c(out, 0, 4), ag::slice_c(out, 4, 8)};
    }

    // (N,4,8,8) -> (N,3,64,64) in (-1,1)
    ag::Var<T> decode_graph(const ag::Var<T>& z) const {
        auto h = ag::silu(dn1_(d1_(z)));
        h = dblock_(h);
        h = ag::silu(dn2_(d2_(ag::upsample_nearest2(h))));
        h = ag::silu(dn3_(d3_(ag::upsample_nearest2(h))));
        h = ag::silu(dn4_(d4_(ag::upsample_nearest2(h))));
        return ag::tanh_op(dout_(h));
    }

    // posterior mean; accepts one (3,H,W) image or an (N,3,H,W) batch
    Tensor<T> encode(const Tensor<T>& x) const {
        bool single = x.ndim() == 3;
        Tensor<T> batch = single ? as_batch(x, {3, 64, 64}, "codec encode input") : x;
        if (batch.ndim() != 4 || batch.size(1) != 3 || batch.size(2) != 64 || batch.size(3) != 64)
            throw InputError("codec encode: expected (3,64,64) or (N,3,64,64), got " + shape_str(x.shape));
        Tensor<T> mean = encode_graph(ag::constant(batch)).first->value;
        return single ? unstack_one(mean, 0) : mean;
    }

    Tensor<T> decode(const Tensor<T>& z) const {
        bool single = z.ndim() == 3;
        Tensor<T> batch = single ? as_batch(z, latent_shape_, "codec decode input") : z;
        if (batch.ndim() != 4 || batch.size(1) != latent_shape_[0] || batch.size(2) != latent_shape_[1] ||
            batch.size(3) != latent_shape_[2])
            throw InputError("codec decode: expected latent " + shape_str(latent_shape_) + ", got " + shape_str(z.shape));
        Tensor<T> img = decode_graph(ag::constant(batch))->value;
        return single ? unstack_one(img, 0) : img;
    }

    void freeze() {
        params_.set_trainable(false);
        frozen_digest_ = params_.digest();
    }
    bool frozen() const { return !frozen_digest_.empty(); }
    const std::string& frozen_digest() const { return frozen_digest_; }
    std::string digest() const { return params_.digest(); }

    void check_frozen() const {
        if (!frozen()) throw FreezeViolation("codec was never frozen");
        if (params_.digest() != frozen_digest_) throw FreezeViolation("codec parameters changed after freeze");
    }

    Checkpoint to_checkpoint() const {
        Checkpoint c;
        c.meta = {{"kind", "codec"}, {"latent_shape", latent_shape_}, {"frozen_digest", frozen_digest_}};
        params_to_checkpoint(params_, c);
        return c;
    }

    void save(const std::string& path) const { to_checkpoint().save(path); }

    static CodecT from_checkpoint(const Checkpoint& c) {
        if (c.meta.value("kind", "") != "codec") throw ConsistencyError("checkpoint is not a codec");
        CodecT out(0, c.meta.at("latent_shape").get<Shape>());
        checkpoint_to_params(c, out.params_);
        std::string fd = c.meta.value("frozen_digest", "");
        if (!fd.empty()) {
            out.params_.set_trainable(false);
            out.frozen_digest_ = out.params_.digest();
            if (out.frozen_digest_ != fd) throw DigestError("codec parameters do not match their frozen digest");
        }
        return out;
    }

    static CodecT load(const std::string& path) { return from_checkpoint(Checkpoint::load(path)); }

private:
    static Tensor<T> as_batch(const Tensor<T>& t, const Shape& want, const char* what) {
        check_shape(t, want, what);
        Tensor<T> b({1, want[0], want[1], want[2]});
        b.data = t.data;
        return b;
    }

    Shape latent_shape_;
    nn::ParamStore<T> params_;
    nn::Conv2d<T> e1_, e2_, e3_, eout_, d1_, d2_, d3_, d4_, dout_;
    nn::GroupNorm<T> en1_, en2_, en3_, dn1_, dn2_, dn3_, dn4_;
    nn::ConvBlock<T> eblock_, dblock_;
    std::string frozen_digest_;
};

using Codec = CodecT<float>;

// exp(logvar/2) as a graph op
template <typename T>
ag::Var<T> exp_half(const ag::Var<T>& logvar) {
    Tensor<T> out(logvar->value.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::exp(static_cast<T>(0.5) * logvar->value.data[i]);
    return ag::make_op<T>(std::move(out), {logvar}, [logvar](ag::Node<T>& n) {
        logvar->ensure_grad();
        for (size_t i = 0; i < n.grad.data.size(); ++i)
            logvar->grad.data[i] += n.grad.data[i] * static_cast<T>(0.5) * n.value.data[i];
    });
}

// mean KL(q || N(0,1)) per latent element: -0.5*(1 + logvar - mu^2 - e^logvar)
template <typename T>
ag::Var<T> kl_term(const ag::Var<T>& mean, const ag::Var<T>& logvar) {
    size_t n = mean->value.numel();
    Tensor<T> out({1});
    double acc = 0;
    for (size_t i = 0; i < n; ++i) {
        double m = mean->value.data[i], lv = logvar->value.data[i];
        acc += -0.5 * (1.0 + lv - m * m - std::exp(lv));
    }
    out.data[0] = static_cast<T>(acc / static_cast<double>(n));
    return ag::make_op<T>(std::move(out), {mean, logvar}, [mean, logvar, n](ag::Node<T>& nd) {
        T g = nd.grad.data[0] / static_cast<T>(n);
        if (mean->needs_grad) {
            mean->ensure_grad();
            for (size_t i = 0; i < n; ++i) mean->grad.data[i] += g * mean->value.data[i];
        }
        if (logvar->needs_grad) {
            logvar->ensure_grad();
            for (size_t i = 0; i < n; ++i)
                logvar->grad.data[i] += g * static_cast<T>(0.5) * (std::exp(logvar->value.data[i]) - static_cast<T>(1));
        }
    });
}

struct CodecTrainResult {
    Codec codec;
    std::vector<float> losses;
    double held_out_psnr = 0.0;
};

// Train on all but the last 64 images, which become the held-out
// reconstruction check. Returns the codec already frozen.
inline CodecTrainResult train_codec(const std::vector<TensorF>& images, const CodecConfig& cfg) {
    if (images.size() < 512) throw InputError("train_codec: need at least 512 images, got " + std::to_string(images.size()));
    const int held_out = 64;
    size_t n_train = images.size() - held_out;
    CodecTrainResult res{Codec(cfg.seed, cfg.latent_shape), {}, 0.0};
    Codec& codec = res.codec;
    Rng rng = Rng(cfg.seed).fork("codec.train");
    nn::Adam<float> opt(codec.params().trainable(), cfg.lr);
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<TensorF> xs;
        for (int b = 0; b < cfg.batch; ++b) xs.push_back(images[rng.below(n_train)]);
        auto x = ag::constant(stack_batch(xs));
        auto [mean, logvar] = codec.encode_graph(x);
        // reparameterized sample feeds the decoder during training only
        TensorF noise = TensorF::randn(mean->value.shape, rng);
        auto sigma = exp_half(logvar);
        auto z = ag::add(mean, ag::mul(sigma, ag::constant(std::move(noise))));
        auto recon = codec.decode_graph(z);
        auto rec_loss = ag::mse(recon, x);
        auto kl = kl_term(mean, logvar);
        auto loss = ag::add(rec_loss, ag::scale(kl, static_cast<float>(cfg.kl_weight)));
        float lv = loss->value.data[0];
        if (!std::isfinite(lv)) throw TrainingError("codec training diverged", step);
        opt.zero_grad();
        ag::backward(loss);
        opt.step();
        res.losses.push_back(lv);
    }
    codec.freeze();
    double ps = 0;
    for (size_t i = n_train; i < images.size(); ++i)
        ps += eval::psnr(codec.decode(codec.encode(images[i])), images[i]);
    res.held_out_psnr = ps / held_out;
    return res;
}

}  // namespace codec
}  // namespace fia
