#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>

#include "fia/flow/difm.hpp"
#include "gradcheck.hpp"

using namespace fia;

namespace {

std::string fresh_dir(const std::string& tag) {
    auto d = std::filesystem::temp_directory_path() / ("fia-difm-" + tag);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d.string();
}

flow::FlowConfig tiny_config() {
    flow::FlowConfig cfg;
    cfg.widths = {4, 6, 8};
    cfg.emb_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("path interpolation and target field") {
    Rng rng(60);
    TensorF z_s = TensorF::randn({4, 8, 8}, rng);
    TensorF z_x = TensorF::randn({4, 8, 8}, rng);

    REQUIRE(flow::interpolate(z_s, z_x, 0.0).data == z_s.data);
    REQUIRE(flow::interpolate(z_s, z_x, 1.0).data == z_x.data);
    TensorF mid = flow::interpolate(z_s, z_x, 0.25);
    TensorF u = flow::target_field(z_s, z_x);
    for (size_t i = 0; i < mid.data.size(); ++i) {
        REQUIRE_THAT(mid.data[i], Catch::Matchers::WithinRel(0.25 * z_x.data[i] + 0.75 * z_s.data[i], 1e-6));
        REQUIRE(u.data[i] == z_x.data[i] - z_s.data[i]);
    }

    REQUIRE_THROWS_AS(flow::interpolate(z_s, TensorF::zeros({4, 4, 4}), 0.5), InputError);
    REQUIRE_THROWS_AS(flow::interpolate(z_s, z_x, -0.1), ParameterError);
    REQUIRE_THROWS_AS(flow::interpolate(z_s, z_x, 1.1), ParameterError);
    REQUIRE_THROWS_AS(flow::target_field(z_s, TensorF::zeros({4, 4, 4})), InputError);

    flow::FlowPath p = flow::make_path(z_s, z_x, 0.25);
    REQUIRE(p.t == 0.25);
    REQUIRE(p.z_t.data == mid.data);
    REQUIRE(p.u_t.data == u.data);
}

TEST_CASE("euler solver against closed-form fields") {
    Rng rng(61);

    // the conditional field u = z_x - z_s is constant along the path, so one
    // Euler step must land on z_x up to float rounding (norm-relative)
    auto rel_l2 = [](const TensorF& got, const TensorF& want) {
        double err = 0.0, ref = 0.0;
        for (size_t i = 0; i < got.data.size(); ++i) {
            double d = static_cast<double>(got.data[i]) - want.data[i];
            err += d * d;
            ref += static_cast<double>(want.data[i]) * want.data[i];
        }
        return std::sqrt(err / ref);
    };
    for (int trial = 0; trial < 10; ++trial) {
        TensorF z_s = TensorF::randn({4, 8, 8}, rng);
        TensorF z_x = TensorF::randn({4, 8, 8}, rng);
        TensorF u = flow::target_field(z_s, z_x);
        auto field = [&u](const TensorF&, double) { return u; };
        REQUIRE(rel_l2(flow::euler_invert(z_s, 1, field), z_x) < 1e-5);
        REQUIRE(rel_l2(flow::euler_invert(z_s, 7, field), z_x) < 1e-5);
    }

    // linear decay field v = -z integrates to z * (1 - dt)^n
    TensorF z0 = TensorF::randn({2, 3}, rng);
    TensorF got = flow::euler_invert(z0, 100, [](const TensorF& z, double) {
        TensorF v = z;
        for (float& x : v.data) x = -x;
        return v;
    });
    double shrink = std::pow(0.99, 100.0);
    for (size_t i = 0; i < got.data.size(); ++i)
        REQUIRE_THAT(static_cast<double>(got.data[i]),
                     Catch::Matchers::WithinRel(shrink * z0.data[i], 1e-4));

    // the solver hands the field the running time, uniformly spaced from 0
    std::vector<double> seen;
    flow::euler_invert(TensorF::zeros({1}), 4, [&seen](const TensorF& z, double t) {
        seen.push_back(t);
        return TensorF::zeros(z.shape);
    });
    REQUIRE(seen == std::vector<double>{0.0, 0.25, 0.5, 0.75});

    REQUIRE_THROWS_AS(flow::euler_invert(z0, 0, [](const TensorF& z, double) { return z; }), ParameterError);
    REQUIRE_THROWS_AS(flow::euler_invert(z0, 2, [](const TensorF&, double) { return TensorF::zeros({5}); }),
                      InputError);
    REQUIRE_THROWS_AS(flow::euler_invert(z0, 3,
                                         [](const TensorF& z, double) {
                                             TensorF v = z;
                                             for (float& x : v.data) x = std::nanf("");
                                             return v;
                                         }),
                      NumericalError);
}

TEST_CASE("field net starts at the zero field") {
    flow::VectorFieldNet net({4, 8, 8}, tiny_config());
    Rng rng(62);
    TensorF z = TensorF::randn({4, 8, 8}, rng);
    TensorF v = net.predict(z, 0.3);
    REQUIRE(v.shape == Shape{4, 8, 8});
    for (float x : v.data) REQUIRE(x == 0.0f);

    // so inversion through an untrained net is the identity, any step count
    REQUIRE(flow::invert(net, z, 1).data == z.data);
    REQUIRE(flow::invert(net, z, 5).data == z.data);
}

TEST_CASE("field net input validation") {
    flow::FlowConfig two = tiny_config();
    two.widths = {4, 6};
    REQUIRE_THROWS_AS(flow::VectorFieldNet({4, 8, 8}, two), ConfigError);

    flow::VectorFieldNet net({4, 8, 8}, tiny_config());
    REQUIRE_THROWS_AS(net.predict(TensorF::zeros({4, 4, 4}), 0.5), InputError);
    auto z = ag::constant(TensorF::zeros({2, 4, 8, 8}));
    REQUIRE_THROWS_AS(net.predict_graph(z, {0.5f}), InputError);
    REQUIRE_THROWS_AS(net.predict_graph(z, {0.5f, 1.5f}), ParameterError);
    REQUIRE_THROWS_AS(net.predict_graph(ag::constant(TensorF::zeros({2, 3, 8, 8})), {0.5f, 0.5f}), InputError);
}

TEST_CASE("field-matching loss values") {
    flow::VectorFieldNet net({4, 8, 8}, tiny_config());
    Rng rng(63);
    TensorF z_s = TensorF::randn({4, 8, 8}, rng);
    TensorF z_x = TensorF::randn({4, 8, 8}, rng);
    flow::FlowPath p = flow::make_path(z_s, z_x, 0.4);

    // zero field: the loss is just the mean square of the target
    double want = 0.0;
    for (float u : p.u_t.data) want += static_cast<double>(u) * u;
    want /= static_cast<double>(p.u_t.data.size());
    REQUIRE_THAT(static_cast<double>(flow::fm_loss(net, p)), Catch::Matchers::WithinRel(want, 1e-5));

    // a constant per-channel field via the output bias stays hand-computable
    TensorF bias({4});
    bias.data = {0.1f, -0.2f, 0.3f, 0.05f};
    net.params().set_values("out.b", bias);
    TensorF v = net.predict(z_s, 0.7);
    for (int c = 0; c < 4; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) REQUIRE(v.at(c, y, x) == bias.data[static_cast<size_t>(c)]);
}

TEST_CASE("field-matching loss gradient") {
    flow::FlowConfig cfg = tiny_config();
    flow::VectorFieldNetT<double> net({4, 8, 8}, cfg);
    Rng rng(64);
    Tensor<double> z_t = Tensor<double>::randn({2, 4, 8, 8}, rng);
    Tensor<double> u_t = Tensor<double>::randn({2, 4, 8, 8}, rng);
    std::vector<double> t{0.3, 0.8};

    // an untrained output conv hides most of the net from the loss, so give
    // it a small random value first
    net.params().set_values("out.w", TensorF::randn({4, 4, 3, 3}, rng, 0.1f));

    std::vector<ag::Var<double>> leaves{net.params().get("out.w"), net.params().get("in.b"),
                                        net.params().get("b1.n1.g"), net.params().get("temb.l2.b")};
    auto res = gradcheck::check(leaves, [&] { return flow::fm_loss_graph(net, z_t, t, u_t); });
    REQUIRE(res.checked > 100);
    REQUIRE(res.max_rel_err < 1e-3);
}

TEST_CASE("terminal estimate blends state and field by 1 - t") {
    flow::VectorFieldNet net({4, 8, 8}, tiny_config());
    TensorF bias({4});
    bias.data = {0.1f, -0.2f, 0.3f, 0.05f};
    net.params().set_values("out.b", bias);

    Rng rng(65);
    TensorF z_t = TensorF::randn({3, 4, 8, 8}, rng);
    std::vector<float> t{0.0f, 0.25f, 1.0f};
    TensorF est = flow::terminal_estimate(net, z_t, t)->value;
    REQUIRE(est.shape == z_t.shape);
    for (int n = 0; n < 3; ++n)
        for (int c = 0; c < 4; ++c)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    float want = z_t.at(n, c, y, x) + (1.0f - t[static_cast<size_t>(n)]) * bias.data[static_cast<size_t>(c)];
                    REQUIRE_THAT(est.at(n, c, y, x), Catch::Matchers::WithinAbs(want, 1e-7));
                }

    // at t=1 the estimate is the state itself, bitwise
    std::vector<float> ones{1.0f, 1.0f, 1.0f};
    REQUIRE(flow::terminal_estimate(net, z_t, ones)->value.data == z_t.data);
}

TEST_CASE("reconstruction loss terms") {
    percep::FeatureExtractor ex(66);
    Rng rng(67);
    TensorF x = TensorF::randn({2, 3, 64, 64}, rng);

    REQUIRE_THROWS_AS(flow::rec_loss(ag::constant(x), x, ex), FreezeViolation);
    ex.freeze();

    auto same = flow::rec_loss(ag::constant(x), x, ex);
    REQUIRE(same.l_percep->value.data[0] == 0.0f);
    REQUIRE(same.l_l1->value.data[0] == 0.0f);
    REQUIRE(same.total->value.data[0] == 0.0f);

    TensorF shifted = x;
    for (float& v : shifted.data) v += 0.1f;
    auto off = flow::rec_loss(ag::constant(shifted), x, ex);
    REQUIRE_THAT(static_cast<double>(off.l_l1->value.data[0]), Catch::Matchers::WithinRel(0.1, 1e-4));
    REQUIRE(off.l_percep->value.data[0] >= 0.0f);
    REQUIRE_THAT(static_cast<double>(off.total->value.data[0]),
                 Catch::Matchers::WithinRel(static_cast<double>(off.l_percep->value.data[0]) + off.l_l1->value.data[0],
                                            1e-6));

    REQUIRE_THROWS_AS(flow::rec_loss(ag::constant(TensorF::zeros({2, 3, 32, 32})), x, ex), InputError);
}

TEST_CASE("flow config round trip") {
    flow::FlowConfig cfg;
    cfg.widths = {4, 6, 8};
    cfg.emb_dim = 16;
    cfg.steps = 99;
    cfg.batch = 2;
    cfg.lr = 3e-4;
    cfg.w_fm = 2.0;
    cfg.w_rec = 0.25;
    cfg.seed = 5;

    flow::FlowConfig back = flow::FlowConfig::from_json(cfg.to_json());
    REQUIRE(back.widths == cfg.widths);
    REQUIRE(back.emb_dim == cfg.emb_dim);
    REQUIRE(back.steps == cfg.steps);
    REQUIRE(back.batch == cfg.batch);
    REQUIRE(back.lr == cfg.lr);
    REQUIRE(back.w_fm == cfg.w_fm);
    REQUIRE(back.w_rec == cfg.w_rec);
    REQUIRE(back.seed == cfg.seed);
    REQUIRE(back.hash() == cfg.hash());

    flow::FlowConfig other = cfg;
    other.emb_dim = 32;
    REQUIRE(other.hash() != cfg.hash());
}

TEST_CASE("field net checkpoint round trip") {
    auto dir = fresh_dir("ckpt");
    flow::VectorFieldNet net({4, 8, 8}, tiny_config());
    net.set_dependencies("aa", "bb", "cc");
    Rng rng(68);
    net.params().set_values("out.w", TensorF::randn({4, 4, 3, 3}, rng, 0.1f));
    net.save(dir + "/f.ckpt");

    flow::VectorFieldNet back = flow::VectorFieldNet::load(dir + "/f.ckpt");
    REQUIRE(back.params().digest() == net.params().digest());
    REQUIRE(back.align_digest() == "aa");
    REQUIRE(back.codec_digest() == "bb");
    REQUIRE(back.percep_digest() == "cc");

    TensorF z = TensorF::randn({4, 8, 8}, rng);
    REQUIRE(max_abs_diff(back.predict(z, 0.5), net.predict(z, 0.5)) == 0.0f);

    Checkpoint wrong;
    wrong.meta = {{"kind", "lfsam"}};
    wrong.save(dir + "/kind.ckpt");
    REQUIRE_THROWS_AS(flow::VectorFieldNet::load(dir + "/kind.ckpt"), ConsistencyError);
}

TEST_CASE("stage-2 training contract") {
    codec::Codec codec(70);
    percep::FeatureExtractor ex(71);
    align::AlignConfig acfg;
    acfg.widths = {8, 16};
    align::AlignmentNet align_net({64, 8, 8}, {4, 8, 8}, acfg);

    data::PairCorpus corpus;
    corpus.manifest.feature_shape = {64, 8, 8};
    flow::FlowConfig cfg = tiny_config();
    cfg.steps = 4;
    cfg.batch = 2;
    cfg.lr = 1e-3;

    REQUIRE_THROWS_AS(flow::train_stage2(corpus, align_net, codec, ex, cfg), FreezeViolation);
    codec.freeze();
    REQUIRE_THROWS_AS(flow::train_stage2(corpus, align_net, codec, ex, cfg), FreezeViolation);
    ex.freeze();
    REQUIRE_THROWS_AS(flow::train_stage2(corpus, align_net, codec, ex, cfg), InputError);

    Rng rng(72);
    for (int i = 0; i < 5; ++i) {
        corpus.images.push_back(TensorF::randn({3, 64, 64}, rng));
        corpus.features.push_back(TensorF::randn({64, 8, 8}, rng));
    }
    auto res = flow::train_stage2(corpus, align_net, codec, ex, cfg);
    REQUIRE(res.loss_total.size() == 4);
    REQUIRE(res.loss_fm.size() == 4);
    REQUIRE(res.loss_rec.size() == 4);
    for (double v : res.loss_total) REQUIRE(std::isfinite(v));
    REQUIRE(res.net.latent_shape() == Shape{4, 8, 8});

    // the net records exactly which frozen components it was trained against
    REQUIRE(res.net.align_digest() == align_net.params().digest());
    REQUIRE(res.net.codec_digest() == codec.frozen_digest());
    REQUIRE(res.net.percep_digest() == ex.frozen_digest());

    auto res2 = flow::train_stage2(corpus, align_net, codec, ex, cfg);
    REQUIRE(res2.net.params().digest() == res.net.params().digest());
    REQUIRE(res2.loss_total == res.loss_total);
}
