#pragma once

// Generator composite loss, perceptual loss with a pluggable feature
// extractor, and relativistic average adversarial losses.

#include <cmath>
#include <functional>
#include <vector>

#include "mlpsr/errors.hpp"
#include "mlpsr/rng.hpp"
#include "mlpsr/tensor.hpp"

namespace mlpsr {

constexpr double kProbClamp = 1e-7;  // keeps -log terms finite for all logits

struct LossWeights {
    double lambda_perceptual = 1.0;
    double lambda_content = 0.01;
    double lambda_adversarial = 0.005;

    void validate() const {
        if (lambda_perceptual < 0 || lambda_content < 0 || lambda_adversarial < 0)
            throw ContractError("loss weights must be nonnegative");
    }
};

// A feature extractor is a deterministic, fixed (non-trainable) map from a
// 1xHxW image to a feature tensor, built from recorded ops so gradients flow
// to the image.
template <class T>
using FeatureExtractor = std::function<Tensor<T>(const Tensor<T>&)>;

template <class T>
FeatureExtractor<T> identity_extractor() {
    return [](const Tensor<T>& x) { return x; };
}

// Default perceptual features: a fixed-seed 3-layer strided random
// convolution stack with frozen weights.
template <class T>
class RandomConvExtractor {
public:
    explicit RandomConvExtractor(std::uint64_t seed = 1234) {
        Rng rng(Rng::derive(seed, "feature_extractor", 0));
        auto make = [&rng](std::size_t cout, std::size_t cin) {
            double std = std::sqrt(2.0 / static_cast<double>(cin * 9));
            std::vector<T> v(cout * cin * 9);
            for (auto& x : v) x = static_cast<T>(rng.normal(0.0, std));
            return Tensor<T>({cout, cin, 3, 3}, std::move(v));
        };
        w1_ = make(4, 1);
        w2_ = make(8, 4);
        w3_ = make(16, 8);
        b1_ = Tensor<T>::zeros({4});
        b2_ = Tensor<T>::zeros({8});
        b3_ = Tensor<T>::zeros({16});
    }

    Tensor<T> operator()(const Tensor<T>& img) const {
        Tensor<T> y = leaky_relu(conv2d(img, w1_, b1_, 2, 2, 1, 1), T(0.2));
        y = leaky_relu(conv2d(y, w2_, b2_, 2, 2, 1, 1), T(0.2));
        return conv2d(y, w3_, b3_, 2, 2, 1, 1);
    }

    // Frozen weights, exposed so an independent reimplementation can verify
    // the extracted features.
    const Tensor<T>& w1() const { return w1_; }
    const Tensor<T>& w2() const { return w2_; }
    const Tensor<T>& w3() const { return w3_; }

private:
    Tensor<T> w1_, w2_, w3_;
    Tensor<T> b1_, b2_, b3_;
};

template <class T>
FeatureExtractor<T> random_conv_extractor(std::uint64_t seed = 1234) {
    auto ex = std::make_shared<RandomConvExtractor<T>>(seed);
    return [ex](const Tensor<T>& x) { return (*ex)(x); };
}

// Mean absolute error between pixel values.
template <class T>
Tensor<T> content_loss(const Tensor<T>& sr, const Tensor<T>& hr) {
    require_same_shape(sr, hr, "content_loss");
    return mean_all(abs(sub(sr, hr)));
}

// Mean absolute error between extracted features.
template <class T>
Tensor<T> perceptual_loss(const Tensor<T>& sr, const Tensor<T>& hr, const FeatureExtractor<T>& fe) {
    require_same_shape(sr, hr, "perceptual_loss");
    Tensor<T> fsr = fe(sr);
    Tensor<T> fhr = fe(hr);
    if (fsr.shape() != fhr.shape())
        throw ContractError("perceptual_loss: extractor returned mismatched feature shapes");
    return mean_all(abs(sub(fhr, fsr)));
}

// How much realer one logit is than the mean logit of the opposing set.
inline double relativistic_probability(double c_real, double c_fake_mean) {
    return sigmoid_scalar(c_real - c_fake_mean);
}

namespace detail {

// mean_i of -log(sigmoid(a_i - mean(b))), probabilities clamped away from 0/1.
template <class T>
Tensor<T> neg_log_rel(const Tensor<T>& a, const Tensor<T>& b, bool complement) {
    Tensor<T> diff = sub_broadcast_scalar(a, mean_all(b));
    Tensor<T> prob = sigmoid(diff);
    if (complement) prob = add_scalar(neg(prob), T(1));
    prob = clamp(prob, static_cast<T>(kProbClamp), static_cast<T>(1.0 - kProbClamp));
    return neg(mean_all(log(prob)));
}

}  // namespace detail

// Generator adversarial term: -log(1 - D(hr,sr)) - log(D(sr,hr)) with the
// relativistic average discriminator D(a,b) = sigmoid(logit(a) - mean logit(b)).
template <class T>
Tensor<T> adversarial_g_loss(const Tensor<T>& logits_hr, const Tensor<T>& logits_sr) {
    require_same_shape(logits_hr, logits_sr, "adversarial_g_loss");
    return add(detail::neg_log_rel(logits_hr, logits_sr, /*complement=*/true),
               detail::neg_log_rel(logits_sr, logits_hr, /*complement=*/false));
}

// Discriminator term: -log(D(hr,sr)) - log(1 - D(sr,hr)).
template <class T>
Tensor<T> adversarial_d_loss(const Tensor<T>& logits_hr, const Tensor<T>& logits_sr) {
    require_same_shape(logits_hr, logits_sr, "adversarial_d_loss");
    return add(detail::neg_log_rel(logits_hr, logits_sr, /*complement=*/false),
               detail::neg_log_rel(logits_sr, logits_hr, /*complement=*/true));
}

template <class T>
struct GeneratorLoss {
    Tensor<T> total;
    double perceptual = 0;
    double content = 0;
    double adversarial = 0;
};

// Weighted sum of perceptual, content and adversarial terms, with the
// component values returned for logging.
template <class T>
GeneratorLoss<T> generator_total_loss(const Tensor<T>& sr, const Tensor<T>& hr,
                                      const Tensor<T>& logits_hr, const Tensor<T>& logits_sr,
                                      const FeatureExtractor<T>& fe, const LossWeights& w) {
    w.validate();
    GeneratorLoss<T> out;
    Tensor<T> p = perceptual_loss(sr, hr, fe);
    Tensor<T> c = content_loss(sr, hr);
    Tensor<T> a = adversarial_g_loss(logits_hr, logits_sr);
    out.perceptual = static_cast<double>(p.value());
    out.content = static_cast<double>(c.value());
    out.adversarial = static_cast<double>(a.value());
    out.total = add(add(mul_scalar(p, static_cast<T>(w.lambda_perceptual)),
                        mul_scalar(c, static_cast<T>(w.lambda_content))),
                    mul_scalar(a, static_cast<T>(w.lambda_adversarial)));
    return out;
}

}  // namespace mlpsr
