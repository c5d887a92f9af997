#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "fia/core/rng.hpp"
#include "fia/data/scenes.hpp"
#include "fia/eval/metrics.hpp"

using namespace fia;

namespace {

// dense 2-D reference SSIM: same 11x11 Gaussian window as the library, but
// with explicit per-position weighted moments instead of separable passes
double ssim_reference(const TensorF& a, const TensorF& b, double range) {
    TensorF ya = eval::luminance(a), yb = eval::luminance(b);
    const int win = 11;
    int h = ya.size(0), w = ya.size(1);
    auto g1 = eval::gaussian_window(win, 1.5);
    std::vector<double> g2(win * win);
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) g2[static_cast<size_t>(i) * win + j] = g1[static_cast<size_t>(i)] * g1[static_cast<size_t>(j)];

    double c1 = (0.01 * range) * (0.01 * range), c2 = (0.03 * range) * (0.03 * range);
    double total = 0;
    int count = 0;
    for (int y = 0; y + win <= h; ++y)
        for (int x = 0; x + win <= w; ++x) {
            double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    double wt = g2[static_cast<size_t>(i) * win + j];
                    double va = ya.at(y + i, x + j), vb = yb.at(y + i, x + j);
                    ma += wt * va;
                    mb += wt * vb;
                    maa += wt * va * va;
                    mbb += wt * vb * vb;
                    mab += wt * va * vb;
                }
            double sa = maa - ma * ma, sb = mbb - mb * mb, cov = mab - ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
            ++count;
        }
    return total / count;
}

TensorF noisy_copy(const TensorF& a, double amp, uint64_t seed) {
    Rng rng(seed);
    TensorF b = a;
    for (auto& v : b.data) v = std::clamp(v + static_cast<float>(rng.uniform(-amp, amp)), -1.0f, 1.0f);
    return b;
}

TensorF random_image(int h, int w, uint64_t seed) {
    Rng rng(seed);
    TensorF t({3, h, w});
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

}  // namespace

TEST_CASE("psnr formula hits 20 dB exactly for mse 0.04 at range 2") {
    // 32 values k*2^-26 (all exact as float); the k were chosen so the squared
    // differences are exact doubles averaging to the double nearest 0.04, which
    // makes 10*log10(4/mse) evaluate to 20.0 with no rounding residue
    std::vector<uint32_t> ks(28, 13421750u);
    ks.insert(ks.end(), {13421751u, 13421751u, 7155237u, 17581492u});
    TensorF a = TensorF::zeros({32}), b({32});
    for (size_t i = 0; i < ks.size(); ++i) b.data[i] = std::ldexp(static_cast<float>(ks[i]), -26);
    REQUIRE(eval::psnr(a, b, 2.0) == 20.0);
    REQUIRE(eval::psnr(a, b) == 20.0);  // range defaults to 2
    REQUIRE(eval::psnr(b, a) == eval::psnr(a, b));
}

TEST_CASE("psnr caps at 100 dB and checks shapes") {
    TensorF a = random_image(8, 8, 3);
    REQUIRE(eval::psnr(a, a) == 100.0);
    TensorF b = a;
    b.data[0] += 1e-7f;
    REQUIRE(eval::psnr(a, b) == 100.0);  // mse below the cap threshold
    b.data[0] = a.data[0] + 0.5f;
    REQUIRE(eval::psnr(a, b) < 100.0);
    // halving the range costs 10*log10(4) dB
    REQUIRE_THAT(eval::psnr(a, b, 2.0) - eval::psnr(a, b, 1.0),
                 Catch::Matchers::WithinAbs(10.0 * std::log10(4.0), 1e-12));
    REQUIRE_THROWS_AS(eval::psnr(a, TensorF::zeros({3, 4, 4})), InputError);
}

TEST_CASE("luminance uses Rec.601 weights") {
    TensorF img({3, 1, 1});
    img.data = {1.0f, 0.0f, 0.0f};
    REQUIRE(eval::luminance(img).data[0] == 0.299f);
    img.data = {0.0f, 1.0f, 0.0f};
    REQUIRE(eval::luminance(img).data[0] == 0.587f);
    img.data = {0.0f, 0.0f, 1.0f};
    REQUIRE(eval::luminance(img).data[0] == 0.114f);
    REQUIRE_THROWS_AS(eval::luminance(TensorF::zeros({1, 4, 4})), InputError);
}

TEST_CASE("ssim identity, degradation and input checks") {
    // a smooth scene: heavy noise should wreck the local structure score
    TensorF a = data::make_scene(5).image;
    REQUIRE(eval::ssim(a, a) == 1.0);
    REQUIRE(eval::ssim(a, noisy_copy(a, 0.6, 6)) < 0.5);
    // mild noise scores better than heavy noise
    REQUIRE(eval::ssim(a, noisy_copy(a, 0.1, 7)) > eval::ssim(a, noisy_copy(a, 0.6, 7)));
    REQUIRE_THROWS_AS(eval::ssim(a, random_image(64, 63, 8)), InputError);
    REQUIRE_THROWS_AS(eval::ssim(random_image(10, 16, 9), random_image(10, 16, 9)), InputError);
}

TEST_CASE("separable ssim matches the dense 2-d reference") {
    for (uint64_t seed : {21ull, 22ull, 23ull, 24ull, 25ull}) {
        TensorF a = random_image(18, 14, seed);
        TensorF b = noisy_copy(a, 0.3, seed + 100);
        double lib = eval::ssim(a, b), ref = ssim_reference(a, b, 2.0);
        INFO("seed " << seed << " lib " << lib << " ref " << ref);
        REQUIRE(std::abs(lib - ref) < 1e-4);
    }
}

TEST_CASE("token overlap f1 on hand cases") {
    // 2 of 3 tokens shared on both sides -> p = r = f1 = 2/3
    double v = eval::token_overlap_f1("red circle here", "red circle there");
    REQUIRE(std::abs(v - 2.0 / 3.0) < 1e-9);
    REQUIRE(eval::token_overlap_f1("blue square", "blue square") == 1.0);
    REQUIRE(eval::token_overlap_f1("blue square", "Blue, Square!") == 1.0);  // case/punct insensitive
    REQUIRE(eval::token_overlap_f1("red circle", "green triangle") == 0.0);
    // multiset semantics: the repeated token only matches once
    double rep = eval::token_overlap_f1("red red circle", "red circle");
    REQUIRE(std::abs(rep - 0.8) < 1e-12);
    REQUIRE(eval::token_overlap_f1("a b", "b a") == 1.0);  // order-free
    REQUIRE_THROWS_AS(eval::token_overlap_f1("", "red"), InputError);
    REQUIRE_THROWS_AS(eval::token_overlap_f1("red", "..."), InputError);
}

TEST_CASE("consistency percentages are exact arithmetic") {
    REQUIRE(eval::lvlm_consistency({1, 0, 1}) == 100.0 * 2.0 / 3.0);
    REQUIRE(eval::lvlm_consistency({1, 1, 1, 1}) == 100.0);
    REQUIRE(eval::lvlm_consistency({0}) == 0.0);
    REQUIRE_THROWS_AS(eval::lvlm_consistency({}), InputError);

    REQUIRE(eval::top1_consistency({1, 2, 3, 4}, {1, 2, 0, 4}) == 75.0);
    REQUIRE(eval::top1_consistency({5, 5}, {5, 5}) == 100.0);
    REQUIRE(eval::top1_consistency({1, 2}, {3, 4}) == 0.0);
    REQUIRE_THROWS_AS(eval::top1_consistency({1}, {1, 2}), InputError);
    REQUIRE_THROWS_AS(eval::top1_consistency({}, {}), InputError);
}
