#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mlpsr/losses.hpp"
#include "test_util.hpp"

using namespace mlpsr;
using testutil::check_gradients;
using testutil::random_tensor;

namespace {
const double kTwoLn2 = 2.0 * std::log(2.0);
}

TEST_CASE("content loss") {
    Rng rng(1);
    Tensor<double> hr = random_tensor({1, 4, 4}, rng);
    CHECK(content_loss(hr, hr).value() == 0.0);

    Tensor<double> shifted = add_scalar(hr.detach(), 0.5);
    CHECK(content_loss(shifted, hr).value() == doctest::Approx(0.5).epsilon(1e-12));

    Tensor<double> a({2}, {0.0, 1.0});
    Tensor<double> b({2}, {1.0, 0.0});
    CHECK(content_loss(a, b).value() == doctest::Approx(1.0));

    CHECK_THROWS_AS(content_loss(a, hr), DimensionError);
}

TEST_CASE("perceptual loss with the identity extractor equals content loss") {
    Rng rng(2);
    Tensor<double> hr = random_tensor({1, 8, 8}, rng);
    Tensor<double> sr = random_tensor({1, 8, 8}, rng);
    auto fe = identity_extractor<double>();
    CHECK(perceptual_loss(sr, hr, fe).value() ==
          doctest::Approx(content_loss(sr, hr).value()).epsilon(1e-15));
    CHECK(perceptual_loss(hr, hr, fe).value() == 0.0);
}

TEST_CASE("perceptual loss matches a brute-force recomputation of the conv stack") {
    RandomConvExtractor<double> ex(77);
    Rng rng(3);
    Tensor<double> hr = random_tensor({1, 16, 16}, rng, 0.5);
    Tensor<double> sr = add_scalar(hr.detach(), 0.05);

    // independent reimplementation: plain loops over the frozen weights
    auto conv_leaky = [](const Tensor<double>& x, const Tensor<double>& w, bool act) {
        Tensor<double> y = testutil::conv2d_oracle(x, w, nullptr, 2, 2, 1, 1);
        if (act)
            for (auto& v : y.mutable_data())
                if (v < 0) v *= 0.2;
        return y;
    };
    auto features = [&](const Tensor<double>& img) {
        Tensor<double> y = conv_leaky(img, ex.w1(), true);
        y = conv_leaky(y, ex.w2(), true);
        return conv_leaky(y, ex.w3(), false);
    };
    Tensor<double> fh = features(hr);
    Tensor<double> fs = features(sr);
    double mae = 0;
    for (std::size_t i = 0; i < fh.size(); ++i) mae += std::fabs(fh[i] - fs[i]);
    mae /= static_cast<double>(fh.size());

    FeatureExtractor<double> fe = [&ex](const Tensor<double>& t) { return ex(t); };
    CHECK(perceptual_loss(sr, hr, fe).value() == doctest::Approx(mae).epsilon(1e-12));
    CHECK(mae > 0);
}

TEST_CASE("extractor returning mismatched feature shapes is a contract error") {
    Rng rng(31);
    Tensor<double> hr = random_tensor({1, 4, 4}, rng);
    Tensor<double> sr = random_tensor({1, 4, 4}, rng);
    int calls = 0;
    FeatureExtractor<double> broken = [&calls](const Tensor<double>& x) {
        return ++calls == 1 ? x : reshape(x, {x.size()});
    };
    CHECK_THROWS_AS(perceptual_loss(sr, hr, broken), ContractError);
}

TEST_CASE("extractor determinism: same seed, bit-identical features") {
    Rng rng(4);
    Tensor<double> img = random_tensor({1, 16, 16}, rng);
    auto f1 = random_conv_extractor<double>(42);
    auto f2 = random_conv_extractor<double>(42);
    CHECK(f1(img).data() == f2(img).data());
}

TEST_CASE("relativistic probability") {
    CHECK(relativistic_probability(1.0, 1.0) == doctest::Approx(0.5));
    CHECK(relativistic_probability(40.0, 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(relativistic_probability(0.5, 0.0) == doctest::Approx(0.62245933120185459).epsilon(1e-12));
}

TEST_CASE("adversarial losses at the symmetric point equal 2 ln 2") {
    Tensor<double> l = Tensor<double>::full({3}, 0.7);
    CHECK(adversarial_g_loss(l, l).value() == doctest::Approx(kTwoLn2).epsilon(1e-12));
    CHECK(adversarial_d_loss(l, l).value() == doctest::Approx(kTwoLn2).epsilon(1e-12));
}

TEST_CASE("adversarial g loss limits") {
    // generated output judged much realer than the reference: loss -> 0
    Tensor<double> lhr = Tensor<double>::full({2}, -30.0);
    Tensor<double> lsr = Tensor<double>::full({2}, 30.0);
    CHECK(adversarial_g_loss(lhr, lsr).value() == doctest::Approx(0.0).epsilon(1e-6));
    // reference judged much realer: discriminator loss -> 0
    CHECK(adversarial_d_loss(lsr, lhr).value() == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("adversarial g loss against a direct recomputation at gap +1") {
    Tensor<double> lhr = Tensor<double>::scalar(1.0);
    Tensor<double> lsr = Tensor<double>::scalar(0.0);
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    double want = -std::log(1.0 - sig(1.0 - 0.0)) - std::log(sig(0.0 - 1.0));
    CHECK(adversarial_g_loss(lhr, lsr).value() == doctest::Approx(want).epsilon(1e-12));
    // swapping the arguments at the symmetric point maps g-loss onto d-loss
    CHECK(adversarial_g_loss(lhr, lsr).value() ==
          doctest::Approx(adversarial_d_loss(lsr, lhr).value()).epsilon(1e-12));
}

TEST_CASE("clamping keeps the losses finite for extreme logits") {
    Tensor<double> lhr = Tensor<double>::full({2}, 1e6);
    Tensor<double> lsr = Tensor<double>::full({2}, -1e6);
    double g = adversarial_g_loss(lhr, lsr).value();
    double d = adversarial_d_loss(lhr, lsr).value();
    CHECK(std::isfinite(g));
    CHECK(std::isfinite(d));
    // bounded by the clamp floor
    CHECK(g <= -2.0 * std::log(kProbClamp) + 1e-9);
    CHECK(d <= -2.0 * std::log(kProbClamp) + 1e-9);
}

TEST_CASE("generator total loss: fixed point and weight selection") {
    Rng rng(5);
    Tensor<double> hr = random_tensor({1, 8, 8}, rng);
    Tensor<double> sr = hr.detach();
    Tensor<double> logits = Tensor<double>::full({2}, 0.25);
    auto fe = identity_extractor<double>();

    LossWeights w;
    auto loss = generator_total_loss(sr, hr, logits, logits, fe, w);
    CHECK(loss.total.value() == doctest::Approx(0.005 * kTwoLn2).epsilon(1e-12));
    CHECK(loss.perceptual == 0.0);
    CHECK(loss.content == 0.0);

    Tensor<double> sr2 = random_tensor({1, 8, 8}, rng);
    LossWeights content_only{.lambda_perceptual = 0, .lambda_content = 1, .lambda_adversarial = 0};
    auto l2 = generator_total_loss(sr2, hr, logits, logits, fe, content_only);
    CHECK(l2.total.value() == doctest::Approx(content_loss(sr2, hr).value()).epsilon(1e-12));

    // components recombine exactly
    LossWeights w3{.lambda_perceptual = 0.3, .lambda_content = 0.5, .lambda_adversarial = 0.2};
    auto l3 = generator_total_loss(sr2, hr, logits, logits, fe, w3);
    CHECK(l3.total.value() ==
          doctest::Approx(0.3 * l3.perceptual + 0.5 * l3.content + 0.2 * l3.adversarial)
              .epsilon(1e-12));
}

TEST_CASE("gradient of the total loss w.r.t. the generated image") {
    Rng rng(6);
    Tensor<double> hr = random_tensor({1, 6, 6}, rng);
    Tensor<double> sr = random_tensor({1, 6, 6}, rng);
    Tensor<double> lhr = random_tensor({2}, rng);
    Tensor<double> lsr = random_tensor({2}, rng);
    sr.set_tracked();
    lsr.set_tracked();
    auto fe = identity_extractor<double>();
    LossWeights w;
    auto fwd = [&] { return generator_total_loss(sr, hr, lhr, lsr, fe, w).total; };
    CHECK(check_gradients(fwd, {sr, lsr}, 24) < 1e-4);
}
