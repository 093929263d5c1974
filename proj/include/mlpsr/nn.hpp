#pragma once

// Generator and discriminator for single-axis 4x super-resolution.
//
// The generator is a stem convolution, a trunk of residual mixer groups
// (rmrdb: three residual MLP-mixer blocks wrapped in an outer scaled
// residual), two nearest+conv 2x upsampling stages, a mid convolution, two
// selective downsampling blocks (5x5 conv, stride 2x1) that halve the first
// spatial axis, and an output convolution. Net effect: (1,H,W) -> (1,H,4W).
//
// The discriminator is a strided conv / batch-norm / leaky-ReLU stack whose
// dense head is replaced by a 1-channel convolution; the scalar logit is the
// spatial mean of that map and no sigmoid is applied inside the network.

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mlpsr/errors.hpp"
#include "mlpsr/rng.hpp"
#include "mlpsr/tensor.hpp"

namespace mlpsr {

constexpr double kLeakySlope = 0.2;
constexpr double kResidualScale = 0.2;  // beta on each rmrdb output

struct MixerConfig {
    std::size_t patch_h = 8;
    std::size_t patch_w = 8;
    std::size_t token_hidden = 0;    // 0 = twice the token count
    std::size_t channel_hidden = 0;  // 0 = twice the token feature width
};

struct GeneratorConfig {
    std::size_t num_rmrdb = 1;      // the N of "D-N"
    std::size_t base_channels = 64;
    std::size_t input_h = 256;      // low-resolution grid the mixers operate on
    std::size_t input_w = 64;
    std::size_t upsample_stages = 2;    // each 2x on both axes
    std::size_t downsample_stages = 2;  // each halves the first axis
    std::size_t down_kernel = 5;
    std::pair<std::size_t, std::size_t> down_stride = {2, 1};
    MixerConfig mixer;

    std::size_t tokens() const { return (input_h / mixer.patch_h) * (input_w / mixer.patch_w); }
    std::size_t token_dim() const { return mixer.patch_h * mixer.patch_w * base_channels; }
    std::size_t token_hidden() const { return mixer.token_hidden ? mixer.token_hidden : 2 * tokens(); }
    std::size_t channel_hidden() const {
        return mixer.channel_hidden ? mixer.channel_hidden : 2 * token_dim();
    }
    std::size_t scale_factor() const { return std::size_t{1} << upsample_stages; }

    void validate() const {
        if (num_rmrdb == 0) throw ConfigError("generator: num_rmrdb must be >= 1");
        if (base_channels == 0) throw ConfigError("generator: base_channels must be >= 1");
        if (mixer.patch_h == 0 || mixer.patch_w == 0)
            throw ConfigError("generator: patch extents must be positive");
        if (input_h % mixer.patch_h != 0 || input_w % mixer.patch_w != 0)
            throw ConfigError("generator: input grid " + std::to_string(input_h) + "x" +
                              std::to_string(input_w) + " not divisible by patch " +
                              std::to_string(mixer.patch_h) + "x" + std::to_string(mixer.patch_w));
        if (upsample_stages != 2 || downsample_stages != 2)
            throw ConfigError("generator: this build implements the 4x single-axis pipeline "
                              "(2 upsample and 2 downsample stages)");
        if (down_kernel != 5 || down_stride.first != 2 || down_stride.second != 1)
            throw ConfigError("generator: selective downsampling uses a 5x5 kernel with 2x1 stride");
    }

    // Small preset used by tests and synthetic runs.
    static GeneratorConfig desk(std::size_t h, std::size_t w, std::size_t channels = 8,
                                std::size_t patch = 4, std::size_t n = 1) {
        GeneratorConfig cfg;
        cfg.num_rmrdb = n;
        cfg.base_channels = channels;
        cfg.input_h = h;
        cfg.input_w = w;
        cfg.mixer.patch_h = patch;
        cfg.mixer.patch_w = patch;
        return cfg;
    }
};

struct DiscriminatorConfig {
    std::size_t base_channels = 64;
    std::size_t min_input = 16;  // smallest spatial extent the stack accepts

    void validate() const {
        if (base_channels == 0) throw ConfigError("discriminator: base_channels must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// parameter trees

// Named visitation over every tensor in a parameter tree. `state` marks
// buffers that are serialized but not trained (batch-norm statistics).
template <class T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&, bool /*state*/)>;

template <class T>
struct MixerBlockParams {
    Tensor<T> proj_in_w, proj_in_b;      // [P,P], [P]
    Tensor<T> ln_token_g, ln_token_b;    // [P]
    Tensor<T> token_w1, token_b1;        // [S,Th], [Th]
    Tensor<T> token_w2, token_b2;        // [Th,S], [S]
    Tensor<T> ln_chan_g, ln_chan_b;      // [P]
    Tensor<T> chan_w1, chan_b1;          // [P,Ch], [Ch]
    Tensor<T> chan_w2, chan_b2;          // [Ch,P], [P]
    Tensor<T> proj_out_w, proj_out_b;    // [P,P], [P]

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        f(prefix + ".proj_in.w", proj_in_w, false);
        f(prefix + ".proj_in.b", proj_in_b, false);
        f(prefix + ".ln_token.g", ln_token_g, false);
        f(prefix + ".ln_token.b", ln_token_b, false);
        f(prefix + ".token.w1", token_w1, false);
        f(prefix + ".token.b1", token_b1, false);
        f(prefix + ".token.w2", token_w2, false);
        f(prefix + ".token.b2", token_b2, false);
        f(prefix + ".ln_chan.g", ln_chan_g, false);
        f(prefix + ".ln_chan.b", ln_chan_b, false);
        f(prefix + ".chan.w1", chan_w1, false);
        f(prefix + ".chan.b1", chan_b1, false);
        f(prefix + ".chan.w2", chan_w2, false);
        f(prefix + ".chan.b2", chan_b2, false);
        f(prefix + ".proj_out.w", proj_out_w, false);
        f(prefix + ".proj_out.b", proj_out_b, false);
    }
};

template <class T>
struct RmrdbParams {
    MixerBlockParams<T> mixers[3];

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        for (int i = 0; i < 3; ++i) mixers[i].visit(prefix + ".mixer" + std::to_string(i), f);
    }
};

template <class T>
struct GeneratorParams {
    Tensor<T> stem_w, stem_b;
    std::vector<RmrdbParams<T>> rmrdbs;
    Tensor<T> up1_w, up1_b;
    Tensor<T> up2_w, up2_b;
    Tensor<T> mid_w, mid_b;
    Tensor<T> sd1_w, sd1_b;
    Tensor<T> sd2_w, sd2_b;
    Tensor<T> out_w, out_b;

    void visit(const ParamVisitor<T>& f) {
        f("stem.w", stem_w, false);
        f("stem.b", stem_b, false);
        for (std::size_t i = 0; i < rmrdbs.size(); ++i)
            rmrdbs[i].visit("rmrdb" + std::to_string(i), f);
        f("up1.w", up1_w, false);
        f("up1.b", up1_b, false);
        f("up2.w", up2_w, false);
        f("up2.b", up2_b, false);
        f("mid.w", mid_w, false);
        f("mid.b", mid_b, false);
        f("sd1.w", sd1_w, false);
        f("sd1.b", sd1_b, false);
        f("sd2.w", sd2_w, false);
        f("sd2.b", sd2_b, false);
        f("out.w", out_w, false);
        f("out.b", out_b, false);
    }

    std::vector<Tensor<T>> trainable() {
        std::vector<Tensor<T>> v;
        visit([&](const std::string&, Tensor<T>& t, bool state) {
            if (!state) v.push_back(t);
        });
        return v;
    }
};

template <class T>
struct DiscLayerParams {
    Tensor<T> conv_w, conv_b;
    bool has_bn = false;
    Tensor<T> bn_g, bn_b;
    Tensor<T> bn_mean, bn_var;  // running statistics (state, untracked)

    void visit(const std::string& prefix, const ParamVisitor<T>& f) {
        f(prefix + ".conv.w", conv_w, false);
        f(prefix + ".conv.b", conv_b, false);
        if (has_bn) {
            f(prefix + ".bn.g", bn_g, false);
            f(prefix + ".bn.b", bn_b, false);
            f(prefix + ".bn.mean", bn_mean, true);
            f(prefix + ".bn.var", bn_var, true);
        }
    }
};

template <class T>
struct DiscriminatorParams {
    std::vector<DiscLayerParams<T>> layers;
    Tensor<T> head_w, head_b;

    void visit(const ParamVisitor<T>& f) {
        for (std::size_t i = 0; i < layers.size(); ++i)
            layers[i].visit("layer" + std::to_string(i), f);
        f("head.w", head_w, false);
        f("head.b", head_b, false);
    }

    std::vector<Tensor<T>> trainable() {
        std::vector<Tensor<T>> v;
        visit([&](const std::string&, Tensor<T>& t, bool state) {
            if (!state) v.push_back(t);
        });
        return v;
    }
};

// Sum of element counts of all tracked tensors.
template <class T, class Params>
std::size_t count_params(Params& params) {
    std::size_t n = 0;
    params.visit([&](const std::string&, Tensor<T>& t, bool state) {
        if (!state && t.tracked()) n += t.size();
    });
    return n;
}

// ---------------------------------------------------------------------------
// initialization

namespace detail {

template <class T>
Tensor<T> he_normal(Rng& rng, Shape shape, std::size_t fan_in) {
    double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal(0.0, std));
    return Tensor<T>(std::move(shape), std::move(v));
}

template <class T>
void init_mixer(Rng& rng, MixerBlockParams<T>& m, std::size_t s, std::size_t p, std::size_t th,
                std::size_t ch) {
    m.proj_in_w = he_normal<T>(rng, {p, p}, p);
    m.proj_in_b = Tensor<T>::zeros({p});
    m.ln_token_g = Tensor<T>::ones({p});
    m.ln_token_b = Tensor<T>::zeros({p});
    m.token_w1 = he_normal<T>(rng, {s, th}, s);
    m.token_b1 = Tensor<T>::zeros({th});
    m.token_w2 = he_normal<T>(rng, {th, s}, th);
    m.token_b2 = Tensor<T>::zeros({s});
    m.ln_chan_g = Tensor<T>::ones({p});
    m.ln_chan_b = Tensor<T>::zeros({p});
    m.chan_w1 = he_normal<T>(rng, {p, ch}, p);
    m.chan_b1 = Tensor<T>::zeros({ch});
    m.chan_w2 = he_normal<T>(rng, {ch, p}, ch);
    m.chan_b2 = Tensor<T>::zeros({p});
    m.proj_out_w = he_normal<T>(rng, {p, p}, p);
    m.proj_out_b = Tensor<T>::zeros({p});
}

}  // namespace detail

// Seed-determined He fan-in initialization; biases zero, norm affine 1/0.
template <class T>
GeneratorParams<T> init_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(Rng::derive(seed, "generator", 0));
    const std::size_t c = cfg.base_channels;
    const std::size_t s = cfg.tokens(), p = cfg.token_dim();
    const std::size_t th = cfg.token_hidden(), ch = cfg.channel_hidden();
    GeneratorParams<T> g;
    g.stem_w = detail::he_normal<T>(rng, {c, 1, 3, 3}, 9);
    g.stem_b = Tensor<T>::zeros({c});
    g.rmrdbs.resize(cfg.num_rmrdb);
    for (auto& r : g.rmrdbs)
        for (auto& m : r.mixers) detail::init_mixer(rng, m, s, p, th, ch);
    g.up1_w = detail::he_normal<T>(rng, {c, c, 3, 3}, c * 9);
    g.up1_b = Tensor<T>::zeros({c});
    g.up2_w = detail::he_normal<T>(rng, {c, c, 3, 3}, c * 9);
    g.up2_b = Tensor<T>::zeros({c});
    g.mid_w = detail::he_normal<T>(rng, {c, c, 3, 3}, c * 9);
    g.mid_b = Tensor<T>::zeros({c});
    g.sd1_w = detail::he_normal<T>(rng, {c, c, 5, 5}, c * 25);
    g.sd1_b = Tensor<T>::zeros({c});
    g.sd2_w = detail::he_normal<T>(rng, {c, c, 5, 5}, c * 25);
    g.sd2_b = Tensor<T>::zeros({c});
    g.out_w = detail::he_normal<T>(rng, {1, c, 3, 3}, c * 9);
    g.out_b = Tensor<T>::zeros({1});
    g.visit([](const std::string&, Tensor<T>& t, bool state) {
        if (!state) t.set_tracked(true);
    });
    return g;
}

template <class T>
DiscriminatorParams<T> init_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(Rng::derive(seed, "discriminator", 0));
    const std::size_t b = cfg.base_channels;
    // channel plan of the 8-layer stack, stride alternating 1 and 2
    const std::size_t chans[8] = {b, b, 2 * b, 2 * b, 4 * b, 4 * b, 8 * b, 8 * b};
    DiscriminatorParams<T> d;
    d.layers.resize(8);
    std::size_t cin = 1;
    for (int i = 0; i < 8; ++i) {
        auto& l = d.layers[i];
        l.conv_w = detail::he_normal<T>(rng, {chans[i], cin, 3, 3}, cin * 9);
        l.conv_b = Tensor<T>::zeros({chans[i]});
        l.has_bn = i > 0;
        if (l.has_bn) {
            l.bn_g = Tensor<T>::ones({chans[i]});
            l.bn_b = Tensor<T>::zeros({chans[i]});
            l.bn_mean = Tensor<T>::zeros({chans[i]});
            l.bn_var = Tensor<T>::ones({chans[i]});
        }
        cin = chans[i];
    }
    d.head_w = detail::he_normal<T>(rng, {1, cin, 3, 3}, cin * 9);
    d.head_b = Tensor<T>::zeros({1});
    d.visit([](const std::string&, Tensor<T>& t, bool state) {
        if (!state) t.set_tracked(true);
    });
    return d;
}

// ---------------------------------------------------------------------------
// forward passes

// Shape-preserving MLP-mixer block: patchify, linear projection, token-mixing
// MLP, channel-mixing MLP (pre-norm, gelu), linear back-projection, and a
// residual connection from block input to output.
template <class T>
Tensor<T> mlp_mixer_block(const Tensor<T>& x, MixerBlockParams<T>& params,
                          const GeneratorConfig& cfg) {
    const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    Tensor<T> tok = patchify(x, cfg.mixer.patch_h, cfg.mixer.patch_w);
    Tensor<T> t1 = linear(tok, params.proj_in_w, params.proj_in_b);
    // token mixing: MLP across the token axis, one column at a time
    {
        Tensor<T> u = layer_norm(t1, params.ln_token_g, params.ln_token_b, T(1e-5));
        Tensor<T> ut = transpose2d(u);
        Tensor<T> h1 = gelu(linear(ut, params.token_w1, params.token_b1));
        Tensor<T> h2 = linear(h1, params.token_w2, params.token_b2);
        t1 = add(t1, transpose2d(h2));
    }
    // channel mixing: MLP across the per-token feature axis
    {
        Tensor<T> v = layer_norm(t1, params.ln_chan_g, params.ln_chan_b, T(1e-5));
        Tensor<T> h1 = gelu(linear(v, params.chan_w1, params.chan_b1));
        Tensor<T> h2 = linear(h1, params.chan_w2, params.chan_b2);
        t1 = add(t1, h2);
    }
    Tensor<T> out_tok = linear(t1, params.proj_out_w, params.proj_out_b);
    return add(unpatchify(out_tok, c, h, w, cfg.mixer.patch_h, cfg.mixer.patch_w), x);
}

// Three mixer blocks in series; the chain output is scaled by the residual
// factor and added to the group input.
template <class T>
Tensor<T> rmrdb(const Tensor<T>& x, RmrdbParams<T>& params, const GeneratorConfig& cfg) {
    Tensor<T> y = x;
    for (int i = 0; i < 3; ++i) y = mlp_mixer_block(y, params.mixers[i], cfg);
    return add(x, mul_scalar(y, static_cast<T>(kResidualScale)));
}

// Nearest-neighbor 2x enlargement followed by 3x3 conv + leaky ReLU.
template <class T>
Tensor<T> upsample_2x(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return leaky_relu(conv2d(nearest_upsample2x(x), w, b, 1, 1, 1, 1), static_cast<T>(kLeakySlope));
}

// 5x5 conv with 2x1 stride + leaky ReLU; halves the first spatial axis.
template <class T>
Tensor<T> selective_downsample(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 3) throw DimensionError("selective_downsample: input must be CxHxW");
    if (x.extent(1) % 2 != 0)
        throw ConfigError("selective_downsample: first spatial extent must be even, got " +
                          std::to_string(x.extent(1)));
    return leaky_relu(conv2d(x, w, b, 2, 1, 2, 2), static_cast<T>(kLeakySlope));
}

template <class T>
Tensor<T> generator_stem(const Tensor<T>& lr, GeneratorParams<T>& params) {
    return conv2d(lr, params.stem_w, params.stem_b, 1, 1, 1, 1);
}

// Rmrdb chain with the long residual from stem output to trunk output.
template <class T>
Tensor<T> generator_trunk(const Tensor<T>& stem_out, GeneratorParams<T>& params,
                          const GeneratorConfig& cfg) {
    Tensor<T> y = stem_out;
    for (auto& r : params.rmrdbs) y = rmrdb(y, r, cfg);
    return add(stem_out, y);
}

template <class T>
Tensor<T> generator_head(const Tensor<T>& trunk_out, GeneratorParams<T>& params) {
    Tensor<T> y = upsample_2x(trunk_out, params.up1_w, params.up1_b);
    y = upsample_2x(y, params.up2_w, params.up2_b);
    y = leaky_relu(conv2d(y, params.mid_w, params.mid_b, 1, 1, 1, 1), static_cast<T>(kLeakySlope));
    y = selective_downsample(y, params.sd1_w, params.sd1_b);
    y = selective_downsample(y, params.sd2_w, params.sd2_b);
    // raw intensities; clamping happens only at image export
    return conv2d(y, params.out_w, params.out_b, 1, 1, 1, 1);
}

// Full pipeline, (1,H,W) -> (1,H,4W). The second image axis is the slice
// direction being upscaled.
template <class T>
Tensor<T> generator_forward(const Tensor<T>& lr, GeneratorParams<T>& params,
                            const GeneratorConfig& cfg) {
    if (lr.rank() != 3 || lr.extent(0) != 1)
        throw ConfigError("generator: stage 'input' expects a 1xHxW image, got " +
                          shape_str(lr.shape()));
    if (lr.extent(1) != cfg.input_h || lr.extent(2) != cfg.input_w)
        throw ConfigError("generator: stage 'mixer' was built for a " + std::to_string(cfg.input_h) +
                          "x" + std::to_string(cfg.input_w) + " grid, got " +
                          std::to_string(lr.extent(1)) + "x" + std::to_string(lr.extent(2)));
    Tensor<T> stem = generator_stem(lr, params);
    Tensor<T> trunk = generator_trunk(stem, params, cfg);
    return generator_head(trunk, params);
}

template <class T>
struct DiscriminatorOut {
    Tensor<T> map;    // 1 x h' x w' realness map
    Tensor<T> logit;  // scalar, spatial mean of the map
};

template <class T>
DiscriminatorOut<T> discriminator_forward(const Tensor<T>& img, DiscriminatorParams<T>& params,
                                          const DiscriminatorConfig& cfg, bool training) {
    if (img.rank() != 3 || img.extent(0) != 1)
        throw ConfigError("discriminator: expects a 1xHxW image, got " + shape_str(img.shape()));
    if (img.extent(1) < cfg.min_input || img.extent(2) < cfg.min_input)
        throw ConfigError("discriminator: input " + std::to_string(img.extent(1)) + "x" +
                          std::to_string(img.extent(2)) + " below the receptive-field minimum " +
                          std::to_string(cfg.min_input));
    Tensor<T> y = img;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& l = params.layers[i];
        std::size_t stride = (i % 2 == 1) ? 2 : 1;
        y = conv2d(y, l.conv_w, l.conv_b, stride, stride, 1, 1);
        if (l.has_bn) y = batch_norm2d(y, l.bn_g, l.bn_b, l.bn_mean, l.bn_var, training);
        y = leaky_relu(y, static_cast<T>(kLeakySlope));
    }
    DiscriminatorOut<T> out;
    out.map = conv2d(y, params.head_w, params.head_b, 1, 1, 1, 1);
    out.logit = reduce_mean(out.map);
    return out;
}

}  // namespace mlpsr
