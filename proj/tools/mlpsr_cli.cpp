// Command-line front end wiring the library into the full workflow:
// degrade -> train -> upscale -> metrics -> compare -> report.
//
// Exit codes: 0 success, 2 usage/config error, 1 runtime fault.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlpsr/config.hpp"
#include "mlpsr/data_io.hpp"
#include "mlpsr/evalstats.hpp"
#include "mlpsr/metrics.hpp"
#include "mlpsr/resample.hpp"
#include "mlpsr/trainer.hpp"

namespace fs = std::filesystem;
using namespace mlpsr;

namespace {

std::string fmt_num(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void echo_config(const fs::path& out, bool out_is_dir, const KvFile& kv) {
    fs::path target;
    if (out_is_dir) {
        fs::create_directories(out);
        target = out / "effective_config.txt";
    } else {
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        target = out;
        target += ".config.txt";
    }
    write_file_text(target.string(), kv.text());
}

std::vector<std::string> list_files(const std::string& dir, const std::vector<std::string>& exts) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        if (std::find(exts.begin(), exts.end(), ext) != exts.end())
            out.push_back(e.path().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

Volume load_volume(const std::string& path) {
    std::string ext = fs::path(path).extension().string();
    if (ext == ".nii") return read_nifti(path);
    if (ext == ".rt") {
        Tensor<double> t = read_rt_f64(path);
        if (t.rank() != 3) throw ConfigError("volume tensor must be rank 3: " + path);
        Volume v;
        v.data = t;
        v.source_id = fs::path(path).stem().string();
        return v;
    }
    throw ConfigError("unsupported volume format (want .nii or .rt): " + path);
}

struct LoadedImage {
    Image pixels;
    double max_val = 1.0;
};

LoadedImage load_image(const std::string& path) {
    std::string ext = fs::path(path).extension().string();
    if (ext == ".rt") {
        Tensor<double> t = read_rt_f64(path);
        if (t.rank() == 3 && t.extent(0) == 1)
            t = Tensor<double>({t.extent(1), t.extent(2)}, t.data());
        if (t.rank() != 2) throw ConfigError("image tensor must be rank 2: " + path);
        return {t, 1.0};
    }
    if (ext == ".pgm") {
        PgmImage p = read_pgm(path);
        return {p.pixels, static_cast<double>(p.max_val)};
    }
    throw ConfigError("unsupported image format (want .rt or .pgm): " + path);
}

// ---------------------------------------------------------------------------

struct DegradeArgs {
    std::string in;
    std::string out;
    unsigned factor = 4;
    int folds = 5;
    double blank_threshold = 0.01;
    std::string precision = "f64";
};

int cmd_degrade(const DegradeArgs& a) {
    std::vector<std::string> volume_paths;
    if (fs::is_directory(a.in)) {
        volume_paths = list_files(a.in, {".nii", ".rt"});
    } else if (fs::exists(a.in)) {
        volume_paths.push_back(a.in);
    }
    if (volume_paths.empty()) throw ConfigError("no volumes found under '" + a.in + "'");
    if (a.factor == 0) throw ConfigError("factor must be >= 1");

    std::vector<Volume> volumes;
    volumes.reserve(volume_paths.size());
    for (const auto& p : volume_paths) volumes.push_back(normalize_volume(load_volume(p)));

    const int folds = std::min<int>(a.folds, static_cast<int>(volumes.size()));
    SliceDataset ds = build_dataset(volumes, folds, a.factor, a.blank_threshold);

    fs::path out(a.out);
    fs::create_directories(out / "slices");
    const bool f32 = a.precision == "f32";
    std::vector<std::array<std::string, 4>> manifest;
    for (const auto& pair : ds.pairs) {
        std::string lr_rel = "slices/" + pair.id + ".lr.rt";
        std::string hr_rel = "slices/" + pair.id + ".hr.rt";
        if (f32) {
            write_rt_f32((out / lr_rel).string(), detail::to_precision<float>(pair.lr));
            write_rt_f32((out / hr_rel).string(), detail::to_precision<float>(pair.hr));
        } else {
            write_rt_f64((out / lr_rel).string(), pair.lr);
            write_rt_f64((out / hr_rel).string(), pair.hr);
        }
        manifest.push_back({pair.id, std::to_string(pair.fold), lr_rel, hr_rel});
    }
    write_manifest((out / "manifest.tsv").string(), manifest);

    KvFile kv;
    kv.set("command", "degrade");
    kv.set("factor", std::to_string(a.factor));
    kv.set("folds", std::to_string(folds));
    kv.set("blank_threshold", fmt_num(a.blank_threshold));
    kv.set("precision", a.precision);
    echo_config(out, true, kv);
    std::cout << "degrade: " << volumes.size() << " volume(s) -> " << ds.pairs.size()
              << " slice pair(s) in " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string manifest;
    std::string config_file;
    std::string out = "train_out";
    int holdout_fold = -1;
    std::vector<std::string> overrides;  // key=value
    std::optional<unsigned> rmrdb;
    bool no_discriminator = false;
};

template <class T>
int run_train(const SliceDataset& ds, const TrainConfig& cfg, const TrainArgs& a) {
    TrainResult<T> result = train<T>(ds, cfg, a.holdout_fold, a.out);
    write_file_text((fs::path(a.out) / "history.csv").string(), history_to_csv(result.history));
    echo_config(a.out, true, cfg.to_kv());
    std::cout << "train: " << result.history.size() << " iteration(s), checkpoint in " << a.out
              << "\n";
    return 0;
}

int cmd_train(const TrainArgs& a) {
    TrainConfig cfg;
    if (!a.config_file.empty()) cfg.apply_kv(parse_kv(read_file_text(a.config_file)));
    for (const auto& kv : a.overrides) {
        std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.apply_key(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (a.rmrdb) cfg.generator.num_rmrdb = *a.rmrdb;
    if (a.no_discriminator) cfg.use_discriminator = false;
    cfg.validate();

    SliceDataset ds = load_dataset(a.manifest);
    if (ds.pairs.empty()) throw ConfigError("manifest lists no slice pairs");
    // the generator grid must match the data
    const auto& first = ds.pairs.front();
    if (first.lr.extent(0) != cfg.generator.input_h || first.lr.extent(1) != cfg.generator.input_w)
        throw ConfigError("config input grid " + std::to_string(cfg.generator.input_h) + "x" +
                          std::to_string(cfg.generator.input_w) + " does not match manifest slices " +
                          std::to_string(first.lr.extent(0)) + "x" +
                          std::to_string(first.lr.extent(1)) +
                          " (set input_h/input_w)");

    if (cfg.precision == Precision::F32) return run_train<float>(ds, cfg, a);
    return run_train<double>(ds, cfg, a);
}

// ---------------------------------------------------------------------------

struct UpscaleArgs {
    std::string in;
    std::string ckpt;
    std::string out;
    std::string blend_with;
    double blend_alpha = 0.0;
    bool no_normalize = false;
};

template <class T>
int run_upscale(const UpscaleArgs& a) {
    Checkpoint<T> ckpt = load_checkpoint<T>(a.ckpt);
    if (!a.blend_with.empty()) {
        Checkpoint<T> other = load_checkpoint<T>(a.blend_with);
        blend_generator(ckpt.generator, other.generator, a.blend_alpha, ckpt.generator);
    }
    Volume in = load_volume(a.in);
    if (!a.no_normalize) in = normalize_volume(in);
    Volume sr = upscale_volume(in, ckpt);

    std::string ext = fs::path(a.out).extension().string();
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    if (ext == ".nii")
        write_nifti(a.out, sr);
    else if (ext == ".rt")
        write_rt_f64(a.out, sr.data);
    else
        throw ConfigError("unsupported output format (want .nii or .rt): " + a.out);

    KvFile kv;
    kv.set("command", "upscale");
    kv.set("checkpoint", a.ckpt);
    kv.set("normalize", a.no_normalize ? "0" : "1");
    if (!a.blend_with.empty()) {
        kv.set("blend_with", a.blend_with);
        kv.set("blend_alpha", fmt_num(a.blend_alpha));
    }
    echo_config(a.out, false, kv);
    std::cout << "upscale: " << shape_str(in.data.shape()) << " -> " << shape_str(sr.data.shape())
              << " in " << a.out << "\n";
    return 0;
}

int cmd_upscale(const UpscaleArgs& a) {
    // the checkpoint's config echo names its precision
    TrainConfig cfg;
    {
        auto bytes = read_file_bytes(a.ckpt);
        if (bytes.size() < 12 || std::memcmp(bytes.data(), "MSR1", 4) != 0)
            throw ParseError("checkpoint: bad magic");
        std::uint32_t text_len = detail::get_u32(bytes.data() + 8);
        std::string text(bytes.begin() + 12, bytes.begin() + 12 + text_len);
        for (const auto& [k, v] : parse_kv(text).entries)
            if (k.rfind("state.", 0) != 0) cfg.apply_key(k, v);
    }
    if (cfg.precision == Precision::F32) return run_upscale<float>(a);
    return run_upscale<double>(a);
}

// ---------------------------------------------------------------------------

struct MetricsArgs {
    std::string gen;
    std::string ref;
    std::string out = "metrics.csv";
    double max_val = 0.0;  // 0 = per-image default
    unsigned bins = 256;
    int wavelet_order = 2;
    int wavelet_levels = 5;
    bool periodized = false;
};

int cmd_metrics(const MetricsArgs& a) {
    std::vector<std::string> gen_files = list_files(a.gen, {".rt", ".pgm"});
    if (gen_files.empty()) throw ConfigError("no images found under '" + a.gen + "'");
    std::vector<MetricReport> reports;
    for (const auto& path : gen_files) {
        LoadedImage gen = load_image(path);
        MetricOptions opts;
        opts.max_val = a.max_val > 0 ? a.max_val : gen.max_val;
        opts.entropy_bins = a.bins;
        opts.wavelet_order = a.wavelet_order;
        opts.wavelet_levels = a.wavelet_levels;
        opts.boundary = a.periodized ? DwtBoundary::Periodized : DwtBoundary::Symmetric;
        std::string id = fs::path(path).stem().string();
        if (!a.ref.empty()) {
            fs::path ref_path = fs::path(a.ref) / fs::path(path).filename();
            if (!fs::exists(ref_path))
                throw ConfigError("reference image missing for '" + id + "': " + ref_path.string());
            LoadedImage ref = load_image(ref_path.string());
            reports.push_back(compute_metrics(id, gen.pixels, &ref.pixels, opts));
        } else {
            reports.push_back(compute_metrics(id, gen.pixels, nullptr, opts));
        }
    }
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    write_file_text(a.out, metrics_to_csv(reports));

    KvFile kv;
    kv.set("command", "metrics");
    kv.set("max_val", a.max_val > 0 ? fmt_num(a.max_val) : "auto");
    kv.set("entropy_bins", std::to_string(a.bins));
    kv.set("wavelet_order", std::to_string(a.wavelet_order));
    kv.set("wavelet_levels", std::to_string(a.wavelet_levels));
    kv.set("boundary", a.periodized ? "periodized" : "symmetric");
    echo_config(a.out, false, kv);
    std::cout << "metrics: " << reports.size() << " image(s) -> " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_compare(const std::string& a_csv, const std::string& b_csv, const std::string& out) {
    auto a = metrics_from_csv(read_file_text(a_csv));
    auto b = metrics_from_csv(read_file_text(b_csv));
    auto rows = compare_methods(a, b);
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    write_file_text(out, comparison_to_csv(rows));
    KvFile kv;
    kv.set("command", "compare");
    kv.set("a", a_csv);
    kv.set("b", b_csv);
    echo_config(out, false, kv);
    std::cout << "compare: " << rows.size() << " metric row(s) -> " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
    struct MethodStats {
        std::string name;
        std::map<std::string, std::pair<double, std::size_t>> acc;  // metric -> (sum, count)
        bool psnr_inf = false;
    };
    std::vector<MethodStats> methods;
    for (const auto& spec : inputs) {
        std::size_t eq = spec.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--in expects name=metrics.csv, got '" + spec + "'");
        MethodStats m;
        m.name = spec.substr(0, eq);
        auto reports = metrics_from_csv(read_file_text(spec.substr(eq + 1)));
        auto add = [&m](const std::string& key, std::optional<double> v) {
            if (!v) return;
            if (std::isinf(*v)) {
                if (key == "psnr") m.psnr_inf = true;
                return;
            }
            auto& slot = m.acc[key];
            slot.first += *v;
            slot.second += 1;
        };
        for (const auto& r : reports) {
            add("psnr", r.psnr);
            add("ssim", r.ssim);
            add("sharpness", r.sharpness);
            add("entropy", r.entropy);
            add("wavelet_low", r.wavelet_low);
        }
        methods.push_back(std::move(m));
    }
    if (methods.empty()) throw ConfigError("report: no inputs given");

    const std::vector<std::pair<std::string, std::string>> columns = {
        {"psnr", "PSNR"}, {"ssim", "SSIM"}, {"sharpness", "Sharpness"},
        {"entropy", "Entropy"}, {"wavelet_low", "Wavelet"}};
    std::ostringstream os;
    os << "Per-method means over the evaluated images\n\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-24s %10s %10s %10s %10s %10s\n", "Method", "PSNR", "SSIM",
                  "Sharpness", "Entropy", "Wavelet");
    os << line;
    for (const auto& m : methods) {
        std::string cells[5];
        for (std::size_t c = 0; c < columns.size(); ++c) {
            auto it = m.acc.find(columns[c].first);
            if (it == m.acc.end() || it->second.second == 0) {
                cells[c] = (columns[c].first == "psnr" && m.psnr_inf) ? "inf" : "-";
            } else {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.4f", it->second.first / it->second.second);
                cells[c] = buf;
            }
        }
        std::snprintf(line, sizeof line, "%-24s %10s %10s %10s %10s %10s\n", m.name.c_str(),
                      cells[0].c_str(), cells[1].c_str(), cells[2].c_str(), cells[3].c_str(),
                      cells[4].c_str());
        os << line;
    }
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    write_file_text(out, os.str());
    std::cout << os.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-axis MRI super-resolution: degrade, train, upscale, score, compare"};
    app.require_subcommand(1);

    DegradeArgs deg;
    auto* c_deg = app.add_subcommand("degrade", "synthesize LR/HR slice pairs from volumes");
    c_deg->add_option("--in", deg.in, "volume file or directory (.nii, .rt)")->required();
    c_deg->add_option("--out", deg.out, "output dataset directory")->required();
    c_deg->add_option("--factor", deg.factor, "slice-axis downsampling factor");
    c_deg->add_option("--folds", deg.folds, "cross-validation folds (volume-level)");
    c_deg->add_option("--blank-threshold", deg.blank_threshold, "max intensity below which a slice is blank");
    c_deg->add_option("--precision", deg.precision, "f32 or f64 slice files")
        ->check(CLI::IsMember({"f32", "f64"}));

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "train the generator/discriminator pair");
    c_tr->add_option("--manifest", tr.manifest, "dataset manifest")->required();
    c_tr->add_option("--config", tr.config_file, "key=value config file");
    c_tr->add_option("--out", tr.out, "output directory");
    c_tr->add_option("--rmrdb", tr.rmrdb, "number of residual mixer groups (D-N)");
    c_tr->add_option("--holdout-fold", tr.holdout_fold, "fold excluded from training (-1 = none)");
    c_tr->add_option("--set", tr.overrides, "config override key=value (repeatable)");
    c_tr->add_flag("--no-discriminator", tr.no_discriminator,
                   "content-only ablation: no adversarial or perceptual terms");

    UpscaleArgs up;
    auto* c_up = app.add_subcommand("upscale", "4x upscale a volume along the slice axis");
    c_up->add_option("--in", up.in, "input volume (.nii, .rt)")->required();
    c_up->add_option("--ckpt", up.ckpt, "trained checkpoint")->required();
    c_up->add_option("--out", up.out, "output volume (.nii, .rt)")->required();
    c_up->add_option("--blend-with", up.blend_with, "second checkpoint for weight-space blending");
    c_up->add_option("--blend-alpha", up.blend_alpha, "blend weight toward the second checkpoint");
    c_up->add_flag("--no-normalize", up.no_normalize, "skip min-max intensity normalization");

    MetricsArgs me;
    auto* c_me = app.add_subcommand("metrics", "image-quality metrics over a directory");
    c_me->add_option("--gen", me.gen, "directory of generated images (.rt, .pgm)")->required();
    c_me->add_option("--ref", me.ref, "directory of reference images (matching filenames)");
    c_me->add_option("--out", me.out, "output CSV");
    c_me->add_option("--max-val", me.max_val, "intensity ceiling (default: 1.0 for .rt, maxval for .pgm)");
    c_me->add_option("--bins", me.bins, "entropy histogram bins");
    c_me->add_option("--wavelet-order", me.wavelet_order, "Daubechies order 1..8");
    c_me->add_option("--wavelet-levels", me.wavelet_levels, "decomposition levels");
    c_me->add_flag("--periodized", me.periodized, "periodized wavelet boundary");

    std::string cmp_a, cmp_b, cmp_out = "compare.csv";
    auto* c_cmp = app.add_subcommand("compare", "paired log t-tests between two metric CSVs");
    c_cmp->add_option("--a", cmp_a, "first metrics CSV")->required();
    c_cmp->add_option("--b", cmp_b, "second metrics CSV")->required();
    c_cmp->add_option("--out", cmp_out, "output CSV");

    std::vector<std::string> rep_in;
    std::string rep_out = "report.txt";
    auto* c_rep = app.add_subcommand("report", "plain-text summary of per-method metric means");
    c_rep->add_option("--in", rep_in, "name=metrics.csv (repeatable)")->required();
    c_rep->add_option("--out", rep_out, "output text file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (c_deg->parsed()) return cmd_degrade(deg);
        if (c_tr->parsed()) return cmd_train(tr);
        if (c_up->parsed()) return cmd_upscale(up);
        if (c_me->parsed()) return cmd_metrics(me);
        if (c_cmp->parsed()) return cmd_compare(cmp_a, cmp_b, cmp_out);
        if (c_rep->parsed()) return cmd_report(rep_in, rep_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
