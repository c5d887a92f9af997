#include <algorithm>
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>

#include "fia/align/lfsam.hpp"
#include "fia/victim/victim.hpp"
#include "gradcheck.hpp"

using namespace fia;

namespace {

std::string fresh_dir(const std::string& tag) {
    auto d = std::filesystem::temp_directory_path() / ("fia-lfsam-" + tag);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d.string();
}

align::AlignConfig tiny_config() {
    align::AlignConfig cfg;
    cfg.widths = {8, 16};
    return cfg;
}

// independent model of the rearrangement: channel c*r*r + a*r + b of the
// (possibly zero-padded) input lands at output offset (r*h + a, r*w + b)
TensorF shuffle_reference(const TensorF& x, int r) {
    int n = x.size(0), c_in = x.size(1), h = x.size(2), w = x.size(3);
    int pad = (r * r - c_in % (r * r)) % (r * r);
    int c_out = (c_in + pad) / (r * r);
    TensorF out = TensorF::zeros({n, c_out, r * h, r * w});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c_in; ++ci)
            for (int y = 0; y < h; ++y)
                for (int z = 0; z < w; ++z) {
                    int co = ci / (r * r), a = (ci % (r * r)) / r, b = ci % r;
                    out.at(ni, co, r * y + a, r * z + b) = x.at(ni, ci, y, z);
                }
    return out;
}

}  // namespace

TEST_CASE("shuffle factor selection") {
    Shape latent{4, 8, 8};
    REQUIRE(align::pick_shuffle_factor({16, 32, 32}, latent) == 1);
    REQUIRE(align::pick_shuffle_factor({64, 8, 8}, latent) == 1);
    REQUIRE(align::pick_shuffle_factor({128, 4, 4}, latent) == 2);
    REQUIRE(align::pick_shuffle_factor({64, 2, 2}, latent) == 4);
    // the factor must lift both axes, so the short one decides
    REQUIRE(align::pick_shuffle_factor({8, 2, 8}, latent) == 4);
    REQUIRE(align::pick_shuffle_factor({8, 8, 3}, latent) == 3);
    REQUIRE_THROWS_AS(align::pick_shuffle_factor({1, 16, 4, 4}, latent), InputError);
}

TEST_CASE("shuffle rearrangement matches index enumeration") {
    // r=1 is a true no-op: the same graph node comes back
    Rng rng(40);
    auto x = ag::constant(TensorF::randn({2, 5, 3, 3}, rng));
    REQUIRE(align::shuffle_rearrange(x, 1).get() == x.get());

    // hand case: four 1x1 channels become one 2x2 block, row-major
    TensorF quad({1, 4, 1, 1});
    quad.data = {0.0f, 1.0f, 2.0f, 3.0f};
    TensorF got = align::shuffle_rearrange(ag::constant(quad), 2)->value;
    REQUIRE(got.shape == Shape{1, 1, 2, 2});
    REQUIRE(got.data == std::vector<float>{0.0f, 1.0f, 2.0f, 3.0f});

    // channels short of a multiple of r^2 pad with zeros at the end
    TensorF three({1, 3, 1, 1});
    three.data = {5.0f, 6.0f, 7.0f};
    TensorF padded = align::shuffle_rearrange(ag::constant(three), 2)->value;
    REQUIRE(padded.shape == Shape{1, 1, 2, 2});
    REQUIRE(padded.data == std::vector<float>{5.0f, 6.0f, 7.0f, 0.0f});

    // sweep small shapes against the reference map; where no padding happens
    // the values must also be a permutation of the input
    for (int c = 1; c <= 9; ++c)
        for (int h = 1; h <= 4; ++h)
            for (int w = 1; w <= 4; ++w)
                for (int r = 1; r <= 2; ++r) {
                    TensorF in = TensorF::randn({2, c, h, w}, rng);
                    TensorF out = align::shuffle_rearrange(ag::constant(in), r)->value;
                    TensorF want = shuffle_reference(in, r);
                    REQUIRE(out.shape == want.shape);
                    REQUIRE(out.data == want.data);
                    if (c % (r * r) == 0) {
                        std::vector<float> a = in.data, b = out.data;
                        std::sort(a.begin(), a.end());
                        std::sort(b.begin(), b.end());
                        REQUIRE(a == b);
                    }
                }
}

TEST_CASE("alignment net geometry across registry splits") {
    Shape latent{4, 8, 8};
    for (const auto& info : victim::victim_registry())
        for (const auto& split : info.splits) {
            align::AlignmentNet net(split.feature_shape, latent, tiny_config());
            REQUIRE(net.levels() == 2);
            REQUIRE(net.feature_shape() == split.feature_shape);
            int r = net.shuffle_factor();
            REQUIRE(split.feature_shape[1] * r >= 8);
            REQUIRE(split.feature_shape[2] * r >= 8);

            Rng rng(50);
            TensorF f = TensorF::randn({2, split.feature_shape[0], split.feature_shape[1], split.feature_shape[2]}, rng);
            TensorF z = net.align(f);
            REQUIRE(z.shape == Shape{2, 4, 8, 8});
            REQUIRE(z.all_finite());
        }
}

TEST_CASE("refine conv starts as the identity") {
    // until trained, spatialize is exactly the pure rearrangement
    align::AlignmentNet net({128, 4, 4}, {4, 8, 8}, tiny_config());
    REQUIRE(net.shuffle_factor() == 2);

    TensorF w = net.params().get_values("refine.w");
    REQUIRE(w.shape == Shape{32, 32, 3, 3});
    for (int o = 0; o < 32; ++o)
        for (int i = 0; i < 32; ++i)
            for (int y = 0; y < 3; ++y)
                for (int x = 0; x < 3; ++x)
                    REQUIRE(w.at(o, i, y, x) == ((o == i && y == 1 && x == 1) ? 1.0f : 0.0f));

    Rng rng(51);
    TensorF f = TensorF::randn({1, 128, 4, 4}, rng);
    TensorF sp = net.spatialize(ag::constant(f))->value;
    TensorF plain = align::shuffle_rearrange(ag::constant(f), 2)->value;
    REQUIRE(sp.shape == Shape{1, 32, 8, 8});
    REQUIRE(max_abs_diff(sp, plain) == 0.0f);
}

TEST_CASE("alignment net single and batch agree") {
    align::AlignmentNet net({64, 8, 8}, {4, 8, 8}, tiny_config());
    Rng rng(52);
    TensorF f = TensorF::randn({64, 8, 8}, rng);
    TensorF single = net.align(f);
    REQUIRE(single.shape == Shape{4, 8, 8});
    TensorF batch = net.align(stack_batch<float>({f, f}));
    // one feature twice in a batch: both rows equal the single result up to
    // GEMM re-blocking noise
    REQUIRE(max_abs_diff(unstack_one(batch, 0), single) < 5e-5f);
    REQUIRE(max_abs_diff(unstack_one(batch, 1), unstack_one(batch, 0)) == 0.0f);
}

TEST_CASE("alignment net structural validation") {
    align::AlignConfig one_level;
    one_level.widths = {8};
    REQUIRE_THROWS_AS(align::AlignmentNet({64, 8, 8}, {4, 8, 8}, one_level), ConfigError);

    align::AlignmentNet net({64, 8, 8}, {4, 8, 8}, tiny_config());
    Rng rng(53);
    auto g = net.spatialize(ag::constant(TensorF::randn({1, 64, 8, 8}, rng)));
    auto levels = net.encode_levels(g);
    REQUIRE(levels.size() == 2);
    REQUIRE(levels[0]->value.shape == Shape{1, 8, 8, 8});
    REQUIRE(levels[1]->value.shape == Shape{1, 16, 4, 4});

    // both branches land on the latent grid before output mapping
    REQUIRE(net.decode_skip(levels)->value.shape == Shape{1, 8, 8, 8});
    REQUIRE(net.fan_aggregate(levels)->value.shape == Shape{1, 8, 8, 8});

    std::vector<ag::Var<float>> short_stack{levels[0]};
    REQUIRE_THROWS_AS(net.decode_skip(short_stack), ConfigError);
    REQUIRE_THROWS_AS(net.fan_aggregate(short_stack), ConfigError);
    REQUIRE_THROWS_AS(net.align_graph(ag::constant(TensorF::zeros({1, 32, 8, 8}))), ConfigError);
    REQUIRE_THROWS_AS(net.align_graph(ag::constant(TensorF::zeros({64, 8, 8}))), ConfigError);
}

TEST_CASE("alignment config round trip") {
    align::AlignConfig cfg;
    cfg.widths = {8, 16, 32};
    cfg.steps = 123;
    cfg.batch = 4;
    cfg.lr = 5e-4;
    cfg.w_fea = 2.0;
    cfg.w_img = 0.5;
    cfg.seed = 77;

    align::AlignConfig back = align::AlignConfig::from_json(cfg.to_json());
    REQUIRE(back.widths == cfg.widths);
    REQUIRE(back.steps == cfg.steps);
    REQUIRE(back.batch == cfg.batch);
    REQUIRE(back.lr == cfg.lr);
    REQUIRE(back.w_fea == cfg.w_fea);
    REQUIRE(back.w_img == cfg.w_img);
    REQUIRE(back.seed == cfg.seed);
    REQUIRE(back.hash() == cfg.hash());

    align::AlignConfig other = cfg;
    other.steps = 124;
    REQUIRE(other.hash() != cfg.hash());

    align::AlignConfig defaults = align::AlignConfig::from_json(nlohmann::json::object());
    REQUIRE(defaults.widths == std::vector<int>{64, 128, 256});
    REQUIRE(defaults.steps == 5000);
}

TEST_CASE("stage-1 loss values") {
    codec::Codec codec(11);
    Rng rng(54);
    TensorF z_x = TensorF::randn({2, 4, 8, 8}, rng);

    // aligned latent offset by a constant 0.1: squared-error term is 0.01
    TensorF off = z_x;
    for (float& v : off.data) v += 0.1f;
    TensorF x = codec.decode(off);
    auto loss = align::stage1_loss(ag::constant(off), z_x, x, codec);
    REQUIRE_THAT(loss.l_fea->value.data[0], Catch::Matchers::WithinRel(0.01, 1e-5));
    // the image term compares decode(z_s) against its own decode: exactly zero
    REQUIRE(loss.l_img->value.data[0] == 0.0f);
    REQUIRE(loss.total->value.data[0] == loss.l_fea->value.data[0]);

    auto weighted = align::stage1_loss(ag::constant(off), z_x, x, codec, 2.0, 3.0);
    REQUIRE_THAT(weighted.total->value.data[0],
                 Catch::Matchers::WithinRel(2.0 * loss.l_fea->value.data[0] + 3.0 * loss.l_img->value.data[0], 1e-6));

    TensorF bad = off;
    bad.data[0] = std::nanf("");
    REQUIRE_THROWS_AS(align::stage1_loss(ag::constant(bad), z_x, x, codec), TrainingError);
    REQUIRE_THROWS_AS(align::stage1_loss(ag::constant(off), bad, x, codec), TrainingError);
}

TEST_CASE("stage-1 loss gradient") {
    codec::CodecT<double> codec(13);
    Rng rng(55);
    auto z_s = ag::leaf(Tensor<double>::randn({1, 4, 8, 8}, rng));
    Tensor<double> z_x = Tensor<double>::randn({1, 4, 8, 8}, rng);
    Tensor<double> x = Tensor<double>::randn({1, 3, 64, 64}, rng);
    auto res = gradcheck::check(
        {z_s}, [&] { return align::stage1_loss(z_s, z_x, x, codec, 1.5, 0.5).total; }, 1e-4);
    REQUIRE(res.checked == 256);
    REQUIRE(res.max_rel_err < 1e-3);
}

TEST_CASE("alignment checkpoint round trip") {
    auto dir = fresh_dir("ckpt");
    align::AlignmentNet net({128, 4, 4}, {4, 8, 8}, tiny_config());
    net.save(dir + "/a.ckpt");

    align::AlignmentNet back = align::AlignmentNet::load(dir + "/a.ckpt");
    REQUIRE(back.params().digest() == net.params().digest());
    REQUIRE(back.shuffle_factor() == net.shuffle_factor());
    REQUIRE(back.config().hash() == net.config().hash());

    Rng rng(56);
    TensorF f = TensorF::randn({1, 128, 4, 4}, rng);
    REQUIRE(max_abs_diff(back.align(f), net.align(f)) == 0.0f);

    Checkpoint wrong;
    wrong.meta = {{"kind", "codec"}};
    wrong.save(dir + "/kind.ckpt");
    REQUIRE_THROWS_AS(align::AlignmentNet::load(dir + "/kind.ckpt"), ConsistencyError);
}

TEST_CASE("stage-1 training contract") {
    codec::Codec codec(14);
    data::PairCorpus corpus;
    corpus.manifest.feature_shape = {64, 8, 8};

    // the codec must be frozen before alignment training starts
    REQUIRE_THROWS_AS(align::train_stage1(corpus, codec, tiny_config()), FreezeViolation);
    codec.freeze();
    REQUIRE_THROWS_AS(align::train_stage1(corpus, codec, tiny_config()), InputError);

    Rng rng(57);
    for (int i = 0; i < 6; ++i) {
        corpus.images.push_back(TensorF::randn({3, 64, 64}, rng));
        corpus.features.push_back(TensorF::randn({64, 8, 8}, rng));
    }
    align::AlignConfig cfg = tiny_config();
    cfg.steps = 12;
    cfg.batch = 2;
    cfg.lr = 1e-3;
    auto res = align::train_stage1(corpus, codec, cfg);
    REQUIRE(res.loss_total.size() == 12);
    REQUIRE(res.loss_fea.size() == 12);
    REQUIRE(res.loss_img.size() == 12);
    for (size_t i = 0; i < res.loss_total.size(); ++i) {
        REQUIRE(std::isfinite(res.loss_total[i]));
        REQUIRE_THAT(res.loss_total[i], Catch::Matchers::WithinRel(res.loss_fea[i] + res.loss_img[i], 1e-5));
    }
    REQUIRE(res.net.feature_shape() == Shape{64, 8, 8});

    // same corpus, same seed: training is a deterministic function
    auto res2 = align::train_stage1(corpus, codec, cfg);
    REQUIRE(res2.net.params().digest() == res.net.params().digest());
    REQUIRE(res2.loss_total == res.loss_total);
}
