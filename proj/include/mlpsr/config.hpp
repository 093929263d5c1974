#pragma once

// Canonical line-based key=value configuration shared by the trainer, the
// checkpoint echo, and the CLI. Unknown keys are rejected by name.

#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "mlpsr/errors.hpp"
#include "mlpsr/losses.hpp"
#include "mlpsr/nn.hpp"

namespace mlpsr {

struct KvFile {
    std::vector<std::pair<std::string, std::string>> entries;

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return &v;
        return nullptr;
    }

    void set(const std::string& key, const std::string& value) {
        for (auto& [k, v] : entries)
            if (k == key) {
                v = value;
                return;
            }
        entries.emplace_back(key, value);
    }

    std::string text() const {
        std::string out;
        for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
        return out;
    }
};

inline KvFile parse_kv(const std::string& text) {
    KvFile kv;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        std::string line = text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
        pos = end == std::string::npos ? text.size() + 1 : end + 1;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        std::size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        line = line.substr(start);
        if (line.empty() || line[0] == '#') continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key=value, got '" + line + "'");
        kv.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return kv;
}

enum class Precision { F32, F64 };

inline std::string precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

inline Precision precision_from(const std::string& s) {
    if (s == "f32") return Precision::F32;
    if (s == "f64") return Precision::F64;
    throw ConfigError("config: precision must be f32 or f64, got '" + s + "'");
}

struct TrainConfig {
    int batch_size = 8;
    double lr = 2e-4;
    int decay_start_epoch = 100;
    int decay_interval_epochs = 50;
    double decay_factor = 0.5;
    int warmup_iters = 500;
    int epochs = 1;
    std::uint64_t seed = 0;
    LossWeights weights;
    bool use_discriminator = true;
    std::uint64_t feature_seed = 1234;
    Precision precision = Precision::F32;
    GeneratorConfig generator;
    DiscriminatorConfig discriminator;

    void validate() const {
        if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
        if (!(lr > 0)) throw ConfigError("config: lr must be positive");
        if (warmup_iters < 0 || epochs < 0) throw ConfigError("config: negative iteration counts");
        if (decay_start_epoch < 0 || decay_interval_epochs < 1)
            throw ConfigError("config: bad decay schedule");
        if (!(decay_factor > 0 && decay_factor <= 1))
            throw ConfigError("config: decay_factor must lie in (0,1]");
        weights.validate();
        generator.validate();
        discriminator.validate();
    }

    // Non-increasing schedule: base rate before decay_start_epoch, then one
    // decay_factor per completed interval boundary.
    double lr_for_epoch(int epoch) const {
        if (epoch < decay_start_epoch) return lr;
        int steps = 1 + (epoch - decay_start_epoch) / decay_interval_epochs;
        double v = lr;
        for (int i = 0; i < steps; ++i) v *= decay_factor;
        return v;
    }

    KvFile to_kv() const {
        KvFile kv;
        auto num = [](double v) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", v);
            return std::string(buf);
        };
        kv.set("batch_size", std::to_string(batch_size));
        kv.set("lr", num(lr));
        kv.set("decay_start_epoch", std::to_string(decay_start_epoch));
        kv.set("decay_interval_epochs", std::to_string(decay_interval_epochs));
        kv.set("decay_factor", num(decay_factor));
        kv.set("warmup_iters", std::to_string(warmup_iters));
        kv.set("epochs", std::to_string(epochs));
        kv.set("seed", std::to_string(seed));
        kv.set("lambda_perceptual", num(weights.lambda_perceptual));
        kv.set("lambda_content", num(weights.lambda_content));
        kv.set("lambda_adversarial", num(weights.lambda_adversarial));
        kv.set("use_discriminator", use_discriminator ? "1" : "0");
        kv.set("feature_seed", std::to_string(feature_seed));
        kv.set("precision", precision_name(precision));
        kv.set("rmrdb", std::to_string(generator.num_rmrdb));
        kv.set("base_channels", std::to_string(generator.base_channels));
        kv.set("input_h", std::to_string(generator.input_h));
        kv.set("input_w", std::to_string(generator.input_w));
        kv.set("patch_h", std::to_string(generator.mixer.patch_h));
        kv.set("patch_w", std::to_string(generator.mixer.patch_w));
        kv.set("token_hidden", std::to_string(generator.mixer.token_hidden));
        kv.set("channel_hidden", std::to_string(generator.mixer.channel_hidden));
        kv.set("d_base_channels", std::to_string(discriminator.base_channels));
        kv.set("d_min_input", std::to_string(discriminator.min_input));
        return kv;
    }

    void apply_kv(const KvFile& kv) {
        for (const auto& [key, value] : kv.entries) apply_key(key, value);
    }

    void apply_key(const std::string& key, const std::string& value) {
        try {
            if (key == "batch_size") batch_size = std::stoi(value);
            else if (key == "lr") lr = std::stod(value);
            else if (key == "decay_start_epoch") decay_start_epoch = std::stoi(value);
            else if (key == "decay_interval_epochs") decay_interval_epochs = std::stoi(value);
            else if (key == "decay_factor") decay_factor = std::stod(value);
            else if (key == "warmup_iters") warmup_iters = std::stoi(value);
            else if (key == "epochs") epochs = std::stoi(value);
            else if (key == "seed") seed = std::stoull(value);
            else if (key == "lambda_perceptual") weights.lambda_perceptual = std::stod(value);
            else if (key == "lambda_content") weights.lambda_content = std::stod(value);
            else if (key == "lambda_adversarial") weights.lambda_adversarial = std::stod(value);
            else if (key == "use_discriminator") use_discriminator = value != "0" && value != "false";
            else if (key == "feature_seed") feature_seed = std::stoull(value);
            else if (key == "precision") precision = precision_from(value);
            else if (key == "rmrdb") generator.num_rmrdb = std::stoul(value);
            else if (key == "base_channels") generator.base_channels = std::stoul(value);
            else if (key == "input_h") generator.input_h = std::stoul(value);
            else if (key == "input_w") generator.input_w = std::stoul(value);
            else if (key == "patch_h") generator.mixer.patch_h = std::stoul(value);
            else if (key == "patch_w") generator.mixer.patch_w = std::stoul(value);
            else if (key == "token_hidden") generator.mixer.token_hidden = std::stoul(value);
            else if (key == "channel_hidden") generator.mixer.channel_hidden = std::stoul(value);
            else if (key == "d_base_channels") discriminator.base_channels = std::stoul(value);
            else if (key == "d_min_input") discriminator.min_input = std::stoul(value);
            else throw ConfigError("config: unknown key '" + key + "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("config: bad value for key '" + key + "': '" + value + "'");
        }
    }

    static TrainConfig from_kv(const KvFile& kv) {
        TrainConfig cfg;
        cfg.apply_kv(kv);
        return cfg;
    }
};

}  // namespace mlpsr
