#pragma once

// Deterministic training loop: a generator-only warm-up phase on content
// loss, then alternating discriminator/generator updates (one each per
// iteration), learning-rate decay at epoch boundaries, and per-epoch
// checkpoints. Everything is a pure function of (dataset, config, seed);
// shuffles derive per-epoch seeds so a resumed run reproduces an
// uninterrupted one exactly.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mlpsr/config.hpp"
#include "mlpsr/data_io.hpp"
#include "mlpsr/losses.hpp"
#include "mlpsr/nn.hpp"
#include "mlpsr/rng.hpp"
#include "mlpsr/tensor.hpp"

namespace mlpsr {

struct LossRecord {
    std::size_t iteration = 0;
    double lr = 0;
    std::optional<double> content;
    std::optional<double> perceptual;
    std::optional<double> adversarial_g;
    std::optional<double> adversarial_d;
    std::optional<double> total;
};

inline std::string history_to_csv(const std::vector<LossRecord>& history) {
    auto fmt = [](const std::optional<double>& v) -> std::string {
        if (!v) return "";
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", *v);
        return buf;
    };
    std::string out = "iteration,lr,content,perceptual,adversarial_g,adversarial_d,total\n";
    for (const auto& r : history) {
        char head[64];
        std::snprintf(head, sizeof head, "%zu,%.17g,", r.iteration, r.lr);
        out += head;
        out += fmt(r.content) + "," + fmt(r.perceptual) + "," + fmt(r.adversarial_g) + "," +
               fmt(r.adversarial_d) + "," + fmt(r.total) + "\n";
    }
    return out;
}

template <class T>
struct Checkpoint {
    TrainConfig config;
    GeneratorParams<T> generator;
    DiscriminatorParams<T> discriminator;
    AdamState<T> opt_g;
    AdamState<T> opt_d;
    std::size_t iteration = 0;  // total generator updates, warm-up included
    int epoch = 0;              // completed post-warm-up epochs
};

template <class T>
void set_tracked_all(GeneratorParams<T>& g, bool tracked) {
    g.visit([tracked](const std::string&, Tensor<T>& t, bool state) {
        if (!state) t.set_tracked(tracked);
    });
}

template <class T>
void set_tracked_all(DiscriminatorParams<T>& d, bool tracked) {
    d.visit([tracked](const std::string&, Tensor<T>& t, bool state) {
        if (!state) t.set_tracked(tracked);
    });
}

template <class T>
void clear_grads(std::vector<Tensor<T>>& params) {
    for (auto& p : params) p.clear_grad();
}

// Tensor handles share nodes; a value copy of a parameter tree aliases the
// original. This rebuilds the tree with cloned leaves.
template <class T, class Params>
Params deep_copy_params(Params& p) {
    Params out = p;
    std::vector<Tensor<T>*> slots;
    out.visit([&](const std::string&, Tensor<T>& t, bool) { slots.push_back(&t); });
    for (auto* t : slots) *t = t->clone();
    return out;
}

template <class T>
Checkpoint<T> deep_copy_checkpoint(Checkpoint<T>& c) {
    Checkpoint<T> out;
    out.config = c.config;
    out.generator = deep_copy_params<T>(c.generator);
    out.discriminator = deep_copy_params<T>(c.discriminator);
    out.opt_g = c.opt_g;  // moment buffers are plain vectors
    out.opt_d = c.opt_d;
    out.iteration = c.iteration;
    out.epoch = c.epoch;
    return out;
}

// Seed-determined parameter initialization for both networks.
template <class T>
std::pair<GeneratorParams<T>, DiscriminatorParams<T>> init_params(const TrainConfig& cfg,
                                                                  std::uint64_t seed) {
    return {init_generator<T>(cfg.generator, seed), init_discriminator<T>(cfg.discriminator, seed)};
}

namespace detail {

template <class T>
Tensor<T> to_precision(const Tensor<double>& x) {
    if constexpr (std::is_same_v<T, double>) {
        return x.detach();
    } else {
        std::vector<float> v(x.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(x.data()[i]);
        return Tensor<float>(x.shape(), std::move(v));
    }
}

// 1xHxW view of a 2-D slice in the training precision.
template <class T>
Tensor<T> slice_input(const Tensor<double>& img) {
    Tensor<T> t = to_precision<T>(img);
    return Tensor<T>({1, img.extent(0), img.extent(1)}, t.data());
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

inline void check_component(double v, const char* name, std::size_t iteration) {
    if (!std::isfinite(v))
        throw NumericError(std::string("train_step: loss component '") + name +
                           "' is non-finite at iteration " + std::to_string(iteration));
}

}  // namespace detail

template <class T>
struct Batch {
    std::vector<Tensor<T>> lr;
    std::vector<Tensor<T>> hr;
};

template <class T>
Batch<T> make_batch(const SliceDataset& ds, const std::vector<std::size_t>& order,
                    std::size_t first, std::size_t count) {
    Batch<T> b;
    for (std::size_t i = 0; i < count; ++i) {
        const SlicePair& p = ds.pairs[order[(first + i) % order.size()]];
        b.lr.push_back(detail::slice_input<T>(p.lr));
        b.hr.push_back(detail::slice_input<T>(p.hr));
    }
    return b;
}

// One generator update on plain (unweighted) content loss. Used by the
// warm-up phase and the no-discriminator ablation.
template <class T>
LossRecord content_only_step(GeneratorParams<T>& g, const Batch<T>& batch, AdamState<T>& opt_g,
                             const TrainConfig& cfg, std::size_t iteration) {
    std::vector<Tensor<T>> losses;
    for (std::size_t i = 0; i < batch.lr.size(); ++i) {
        Tensor<T> sr = generator_forward(batch.lr[i], g, cfg.generator);
        losses.push_back(content_loss(sr, batch.hr[i]));
    }
    Tensor<T> loss = mean_all(stack_scalars(losses));
    double lv = static_cast<double>(loss.value());
    detail::check_component(lv, "content", iteration);
    auto params = g.trainable();
    clear_grads(params);
    backward(loss);
    adam_step(params, opt_g);
    LossRecord rec;
    rec.iteration = iteration;
    rec.lr = opt_g.lr;
    rec.content = lv;
    rec.total = lv;
    return rec;
}

// One discriminator update on the relativistic discriminator loss, then one
// generator update on the composite loss.
template <class T>
LossRecord train_step(GeneratorParams<T>& g, DiscriminatorParams<T>& d, const Batch<T>& batch,
                      AdamState<T>& opt_g, AdamState<T>& opt_d, const FeatureExtractor<T>& fe,
                      const TrainConfig& cfg, std::size_t iteration) {
    if (!cfg.use_discriminator) return content_only_step(g, batch, opt_g, cfg, iteration);

    const std::size_t n = batch.lr.size();
    std::vector<Tensor<T>> sr(n);
    for (std::size_t i = 0; i < n; ++i) {
        sr[i] = generator_forward(batch.lr[i], g, cfg.generator);
        if (!sr[i].all_finite())
            throw NumericError("train_step: loss component 'generator_output' is non-finite at iteration " +
                               std::to_string(iteration));
    }

    LossRecord rec;
    rec.iteration = iteration;
    rec.lr = opt_g.lr;

    // discriminator update; generated images detached so no gradient reaches g
    {
        std::vector<Tensor<T>> lhr, lsr;
        for (std::size_t i = 0; i < n; ++i) {
            lhr.push_back(discriminator_forward(batch.hr[i], d, cfg.discriminator, true).logit);
            lsr.push_back(discriminator_forward(sr[i].detach(), d, cfg.discriminator, true).logit);
        }
        Tensor<T> d_loss = adversarial_d_loss(stack_scalars(lhr), stack_scalars(lsr));
        rec.adversarial_d = static_cast<double>(d_loss.value());
        detail::check_component(*rec.adversarial_d, "adversarial_d", iteration);
        auto params = d.trainable();
        clear_grads(params);
        backward(d_loss);
        adam_step(params, opt_d);
    }

    // generator update on the composite loss
    {
        std::vector<Tensor<T>> lhr, lsr, contents, perceptuals;
        for (std::size_t i = 0; i < n; ++i) {
            lhr.push_back(discriminator_forward(batch.hr[i], d, cfg.discriminator, true).logit);
            lsr.push_back(discriminator_forward(sr[i], d, cfg.discriminator, true).logit);
            contents.push_back(content_loss(sr[i], batch.hr[i]));
            perceptuals.push_back(perceptual_loss(sr[i], batch.hr[i], fe));
        }
        Tensor<T> content = mean_all(stack_scalars(contents));
        Tensor<T> perceptual = mean_all(stack_scalars(perceptuals));
        Tensor<T> adv = adversarial_g_loss(stack_scalars(lhr), stack_scalars(lsr));
        rec.content = static_cast<double>(content.value());
        rec.perceptual = static_cast<double>(perceptual.value());
        rec.adversarial_g = static_cast<double>(adv.value());
        detail::check_component(*rec.content, "content", iteration);
        detail::check_component(*rec.perceptual, "perceptual", iteration);
        detail::check_component(*rec.adversarial_g, "adversarial_g", iteration);
        Tensor<T> total =
            add(add(mul_scalar(perceptual, static_cast<T>(cfg.weights.lambda_perceptual)),
                    mul_scalar(content, static_cast<T>(cfg.weights.lambda_content))),
                mul_scalar(adv, static_cast<T>(cfg.weights.lambda_adversarial)));
        rec.total = static_cast<double>(total.value());
        detail::check_component(*rec.total, "total", iteration);
        auto params = g.trainable();
        clear_grads(params);
        backward(total);
        adam_step(params, opt_g);
    }
    return rec;
}

// Exactly warmup_iters generator steps on content loss over the training
// folds; the discriminator is untouched.
template <class T>
std::vector<LossRecord> warmup_phase(GeneratorParams<T>& g, const SliceDataset& ds,
                                     AdamState<T>& opt_g, const TrainConfig& cfg,
                                     const std::vector<std::size_t>& train_indices,
                                     std::size_t first_iteration = 0) {
    std::vector<LossRecord> history;
    const std::size_t bsz = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t per_pass = (train_indices.size() + bsz - 1) / bsz;
    std::vector<std::size_t> order;
    for (int it = 0; it < cfg.warmup_iters; ++it) {
        const std::size_t pass = static_cast<std::size_t>(it) / per_pass;
        const std::size_t within = static_cast<std::size_t>(it) % per_pass;
        if (within == 0) {
            auto perm = detail::shuffled_indices(train_indices.size(),
                                                 Rng::derive(cfg.seed, "warmup", pass));
            order.clear();
            for (std::size_t i : perm) order.push_back(train_indices[i]);
        }
        const std::size_t first = within * bsz;
        const std::size_t count = std::min(bsz, order.size() - first);
        Batch<T> batch = make_batch<T>(ds, order, first, count);
        history.push_back(content_only_step(g, batch, opt_g, cfg, first_iteration + it));
    }
    return history;
}

// ---------------------------------------------------------------------------
// checkpoint container
//
// Layout: magic "MSR1", u32 version, u32 text length, key=value text (config
// echo plus state.* counters), u32 entry count, then per entry a u16 name
// length, the name, a u32 block length and an ".rt" tensor block.

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

template <class T>
std::vector<unsigned char> encode_block(const Tensor<T>& t) {
    if constexpr (std::is_same_v<T, float>)
        return encode_rt_f32(t);
    else
        return encode_rt_f64(t);
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, Checkpoint<T>& ckpt) {
    std::vector<std::pair<std::string, std::vector<unsigned char>>> blocks;
    ckpt.generator.visit([&](const std::string& name, Tensor<T>& t, bool) {
        blocks.emplace_back("g." + name, detail::encode_block(t));
    });
    ckpt.discriminator.visit([&](const std::string& name, Tensor<T>& t, bool) {
        blocks.emplace_back("d." + name, detail::encode_block(t));
    });
    auto emit_moments = [&](const char* tag, AdamState<T>& st) {
        for (std::size_t i = 0; i < st.m.size(); ++i) {
            Shape shape{st.m[i].size()};
            blocks.emplace_back(std::string(tag) + ".m." + std::to_string(i),
                                detail::encode_block(Tensor<T>(shape, st.m[i])));
            blocks.emplace_back(std::string(tag) + ".v." + std::to_string(i),
                                detail::encode_block(Tensor<T>(shape, st.v[i])));
        }
    };
    emit_moments("og", ckpt.opt_g);
    emit_moments("od", ckpt.opt_d);

    KvFile kv = ckpt.config.to_kv();
    kv.set("state.iteration", std::to_string(ckpt.iteration));
    kv.set("state.epoch", std::to_string(ckpt.epoch));
    kv.set("state.opt_g_step", std::to_string(ckpt.opt_g.step));
    kv.set("state.opt_d_step", std::to_string(ckpt.opt_d.step));
    std::string text = kv.text();

    std::vector<unsigned char> out;
    out.insert(out.end(), {'M', 'S', 'R', '1'});
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    detail::put_u32(out, static_cast<std::uint32_t>(blocks.size()));
    for (auto& [name, block] : blocks) {
        out.push_back(static_cast<unsigned char>(name.size() & 0xff));
        out.push_back(static_cast<unsigned char>((name.size() >> 8) & 0xff));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_u32(out, static_cast<std::uint32_t>(block.size()));
        out.insert(out.end(), block.begin(), block.end());
    }
    write_file_bytes(path, out);
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path);
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "MSR1", 4) != 0)
        throw ParseError("checkpoint: bad magic");
    if (detail::get_u32(bytes.data() + 4) != 1) throw ParseError("checkpoint: unknown version");
    std::uint32_t text_len = detail::get_u32(bytes.data() + 8);
    if (bytes.size() < 12 + static_cast<std::size_t>(text_len) + 4)
        throw ParseError("checkpoint: truncated");
    std::string text(bytes.begin() + 12, bytes.begin() + 12 + text_len);
    std::size_t pos = 12 + text_len;
    std::uint32_t n_entries = detail::get_u32(bytes.data() + pos);
    pos += 4;

    KvFile kv = parse_kv(text);
    Checkpoint<T> ckpt;
    TrainConfig cfg;
    for (const auto& [k, v] : kv.entries)
        if (k.rfind("state.", 0) != 0) cfg.apply_key(k, v);
    ckpt.config = cfg;
    auto state_num = [&](const char* key) -> std::size_t {
        const std::string* s = kv.find(key);
        return s ? std::stoull(*s) : 0;
    };
    ckpt.iteration = state_num("state.iteration");
    ckpt.epoch = static_cast<int>(state_num("state.epoch"));

    ckpt.generator = init_generator<T>(cfg.generator, cfg.seed);
    ckpt.discriminator = init_discriminator<T>(cfg.discriminator, cfg.seed);
    auto g_params = ckpt.generator.trainable();
    auto d_params = ckpt.discriminator.trainable();
    ckpt.opt_g = AdamState<T>::for_params(g_params, cfg.lr);
    ckpt.opt_d = AdamState<T>::for_params(d_params, cfg.lr);
    ckpt.opt_g.step = state_num("state.opt_g_step");
    ckpt.opt_d.step = state_num("state.opt_d_step");

    // index the tensors by name
    std::vector<std::pair<std::string, Tensor<T>*>> slots;
    ckpt.generator.visit([&](const std::string& name, Tensor<T>& t, bool) {
        slots.emplace_back("g." + name, &t);
    });
    ckpt.discriminator.visit([&](const std::string& name, Tensor<T>& t, bool) {
        slots.emplace_back("d." + name, &t);
    });

    for (std::uint32_t e = 0; e < n_entries; ++e) {
        if (bytes.size() < pos + 2) throw ParseError("checkpoint: truncated entry header");
        std::size_t name_len = bytes[pos] | (static_cast<std::size_t>(bytes[pos + 1]) << 8);
        pos += 2;
        if (bytes.size() < pos + name_len + 4) throw ParseError("checkpoint: truncated entry name");
        std::string name(bytes.begin() + pos, bytes.begin() + pos + name_len);
        pos += name_len;
        std::uint32_t block_len = detail::get_u32(bytes.data() + pos);
        pos += 4;
        if (bytes.size() < pos + block_len) throw ParseError("checkpoint: truncated tensor block");
        RtTensor rt = decode_rt(bytes.data() + pos, block_len);
        pos += block_len;

        Tensor<T> value;
        if constexpr (std::is_same_v<T, float>)
            value = rt.as_f32();
        else
            value = rt.as_f64();

        bool placed = false;
        for (auto& [slot_name, slot] : slots) {
            if (slot_name == name) {
                if (slot->shape() != value.shape())
                    throw ParseError("checkpoint: tensor '" + name + "' has shape " +
                                     shape_str(value.shape()) + ", expected " +
                                     shape_str(slot->shape()));
                slot->mutable_data() = value.data();
                placed = true;
                break;
            }
        }
        if (!placed) {
            auto fill_moment = [&](const char* tag, AdamState<T>& st) {
                const std::string prefix = std::string(tag) + ".";
                if (name.rfind(prefix, 0) != 0) return;
                bool is_m = name[prefix.size()] == 'm';
                std::size_t idx = std::stoull(name.substr(prefix.size() + 2));
                auto& buf = is_m ? st.m : st.v;
                if (idx >= buf.size() || buf[idx].size() != value.size())
                    throw ParseError("checkpoint: optimizer block '" + name + "' does not fit");
                buf[idx] = value.data();
                placed = true;
            };
            fill_moment("og", ckpt.opt_g);
            if (!placed) fill_moment("od", ckpt.opt_d);
        }
        if (!placed) throw ParseError("checkpoint: unknown tensor '" + name + "'");
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// full training run

template <class T>
struct TrainResult {
    Checkpoint<T> checkpoint;
    std::vector<LossRecord> history;
};

// Runs warm-up (if not already past it) and then cfg.epochs epochs of
// alternating updates over the training folds (all folds except holdout_fold;
// pass -1 to train on everything). Checkpoints are written per epoch when
// out_dir is non-empty. Resuming from a checkpoint written at an epoch
// boundary reproduces the uninterrupted run exactly.
template <class T>
TrainResult<T> train(const SliceDataset& ds, const TrainConfig& cfg, int holdout_fold = -1,
                     const std::string& out_dir = "", const Checkpoint<T>* resume = nullptr) {
    cfg.validate();
    if (ds.pairs.empty()) throw ConfigError("train: dataset is empty");

    std::vector<std::size_t> train_indices;
    for (std::size_t i = 0; i < ds.pairs.size(); ++i)
        if (holdout_fold < 0 || ds.pairs[i].fold != holdout_fold) train_indices.push_back(i);
    if (train_indices.empty()) throw ConfigError("train: no slices outside the holdout fold");

    TrainResult<T> result;
    if (resume) {
        result.checkpoint = deep_copy_checkpoint(const_cast<Checkpoint<T>&>(*resume));
    } else {
        result.checkpoint.config = cfg;
        auto [g, d] = init_params<T>(cfg, cfg.seed);
        result.checkpoint.generator = g;
        result.checkpoint.discriminator = d;
        auto gp = result.checkpoint.generator.trainable();
        auto dp = result.checkpoint.discriminator.trainable();
        result.checkpoint.opt_g = AdamState<T>::for_params(gp, cfg.lr);
        result.checkpoint.opt_d = AdamState<T>::for_params(dp, cfg.lr);
    }
    Checkpoint<T>& ckpt = result.checkpoint;
    ckpt.config = cfg;

    FeatureExtractor<T> fe = random_conv_extractor<T>(cfg.feature_seed);
    const std::size_t bsz = static_cast<std::size_t>(cfg.batch_size);
    const std::size_t iters_per_epoch = (train_indices.size() + bsz - 1) / bsz;

    auto maybe_save = [&](const std::string& name) {
        if (out_dir.empty()) return;
        std::filesystem::create_directories(out_dir);
        save_checkpoint((std::filesystem::path(out_dir) / name).string(), ckpt);
    };

    // warm-up (checkpoints are only written at phase/epoch boundaries, so a
    // resumed run is either before or after the whole phase)
    if (ckpt.iteration < static_cast<std::size_t>(cfg.warmup_iters)) {
        if (ckpt.iteration != 0)
            throw ConfigError("train: checkpoint stops mid-warm-up; cannot resume");
        std::vector<LossRecord> h =
            warmup_phase(ckpt.generator, ds, ckpt.opt_g, cfg, train_indices, 0);
        for (auto& r : h) result.history.push_back(r);
        ckpt.iteration = static_cast<std::size_t>(cfg.warmup_iters);
        maybe_save("ckpt_warmup.msr");
    }

    // adversarial epochs
    for (int epoch = ckpt.epoch; epoch < cfg.epochs; ++epoch) {
        const double lr_e = cfg.lr_for_epoch(epoch);
        ckpt.opt_g.lr = lr_e;
        ckpt.opt_d.lr = lr_e;
        auto perm = detail::shuffled_indices(train_indices.size(),
                                             Rng::derive(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order;
        order.reserve(perm.size());
        for (std::size_t i : perm) order.push_back(train_indices[i]);
        for (std::size_t b = 0; b < iters_per_epoch; ++b) {
            const std::size_t first = b * bsz;
            const std::size_t count = std::min(bsz, order.size() - first);
            Batch<T> batch = make_batch<T>(ds, order, first, count);
            result.history.push_back(train_step(ckpt.generator, ckpt.discriminator, batch,
                                                ckpt.opt_g, ckpt.opt_d, fe, cfg, ckpt.iteration));
            ckpt.iteration += 1;
        }
        ckpt.epoch = epoch + 1;
        char name[48];
        std::snprintf(name, sizeof name, "ckpt_epoch%04d.msr", ckpt.epoch);
        maybe_save(name);
    }
    maybe_save("checkpoint.msr");
    return result;
}

// ---------------------------------------------------------------------------
// inference

// Per-sagittal-slice generator pass reassembled into a volume. The slice axis
// (third voxel axis) extent is multiplied by 4 and its spacing divided by 4;
// outputs are clamped to [0,1].
template <class T>
Volume upscale_volume(const Volume& lr_volume, Checkpoint<T>& ckpt) {
    if (lr_volume.data.rank() != 3) throw ContractError("upscale_volume: volume must be rank 3");
    const GeneratorConfig& gcfg = ckpt.config.generator;
    const std::size_t nx = lr_volume.data.extent(0), ny = lr_volume.data.extent(1),
                      nz = lr_volume.data.extent(2);
    if (ny != gcfg.input_h || nz != gcfg.input_w)
        throw ConfigError("upscale_volume: sagittal slices are " + std::to_string(ny) + "x" +
                          std::to_string(nz) + " but the checkpoint was trained for " +
                          std::to_string(gcfg.input_h) + "x" + std::to_string(gcfg.input_w));
    // inference pass: no gradient recording
    set_tracked_all(ckpt.generator, false);
    Volume out;
    out.source_id = lr_volume.source_id;
    out.spacing = lr_volume.spacing;
    out.spacing[2] /= 4.0;
    out.data = Tensor<double>({nx, ny, nz * 4});
    auto& od = out.data.mutable_data();
    const auto& id = lr_volume.data.data();
    for (std::size_t x = 0; x < nx; ++x) {
        std::vector<T> slice(ny * nz);
        for (std::size_t i = 0; i < ny * nz; ++i)
            slice[i] = static_cast<T>(id[x * ny * nz + i]);
        Tensor<T> inp({1, ny, nz}, std::move(slice));
        Tensor<T> sr = generator_forward(inp, ckpt.generator, gcfg);
        const auto& sd = sr.data();
        for (std::size_t i = 0; i < ny * nz * 4; ++i) {
            double v = static_cast<double>(sd[i]);
            od[x * ny * nz * 4 + i] = std::min(1.0, std::max(0.0, v));
        }
    }
    set_tracked_all(ckpt.generator, true);
    return out;
}

// Elementwise blend of two generators trained from the same config:
// (1-alpha)*a + alpha*b. Exposed for weight-space interpolation between a
// warm-up checkpoint and an adversarially trained one.
template <class T>
void blend_generator(GeneratorParams<T>& a, GeneratorParams<T>& b, double alpha,
                     GeneratorParams<T>& out) {
    std::vector<Tensor<T>*> av, bv, ov;
    a.visit([&](const std::string&, Tensor<T>& t, bool) { av.push_back(&t); });
    b.visit([&](const std::string&, Tensor<T>& t, bool) { bv.push_back(&t); });
    out.visit([&](const std::string&, Tensor<T>& t, bool) { ov.push_back(&t); });
    if (av.size() != bv.size() || av.size() != ov.size())
        throw ContractError("blend_generator: parameter trees differ");
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (av[i]->shape() != bv[i]->shape())
            throw ContractError("blend_generator: tensor shapes differ");
        auto& od = ov[i]->mutable_data();
        const auto& ad = av[i]->data();
        const auto& bd = bv[i]->data();
        for (std::size_t j = 0; j < od.size(); ++j)
            od[j] = static_cast<T>((1.0 - alpha) * static_cast<double>(ad[j]) +
                                   alpha * static_cast<double>(bd[j]));
    }
}

}  // namespace mlpsr
