#include "mlpsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <sstream>

#include "mlpsr/errors.hpp"

namespace mlpsr {

namespace {

void require_image(const Image& img, const char* who) {
    if (img.rank() != 2)
        throw DimensionError(std::string(who) + ": expected a rank-2 image, got " +
                             shape_str(img.shape()));
}

void require_pair(const Image& a, const Image& b, const char* who) {
    require_image(a, who);
    require_image(b, who);
    if (a.shape() != b.shape())
        throw DimensionError(std::string(who) + ": image shapes differ, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

struct Moments {
    double mean_a = 0, mean_b = 0, var_a = 0, var_b = 0, cov = 0;
};

Moments global_moments(const Image& a, const Image& b) {
    const auto& av = a.data();
    const auto& bv = b.data();
    const double n = static_cast<double>(av.size());
    Moments m;
    for (std::size_t i = 0; i < av.size(); ++i) {
        m.mean_a += av[i];
        m.mean_b += bv[i];
    }
    m.mean_a /= n;
    m.mean_b /= n;
    for (std::size_t i = 0; i < av.size(); ++i) {
        double da = av[i] - m.mean_a;
        double db = bv[i] - m.mean_b;
        m.var_a += da * da;
        m.var_b += db * db;
        m.cov += da * db;
    }
    m.var_a /= n;
    m.var_b /= n;
    m.cov /= n;
    return m;
}

double ssim_from_moments(const Moments& m, double c1, double c2) {
    double num = (2.0 * m.mean_a * m.mean_b + c1) * (2.0 * m.cov + c2);
    double den = (m.mean_a * m.mean_a + m.mean_b * m.mean_b + c1) * (m.var_a + m.var_b + c2);
    return num / den;
}

}  // namespace

double psnr(const Image& gen, const Image& ref, double max_val) {
    require_pair(gen, ref, "psnr");
    if (!(max_val > 0)) throw ContractError("psnr: max_val must be positive");
    const auto& a = gen.data();
    const auto& b = ref.data();
    double mse = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

double ssim(const Image& gen, const Image& ref, double c1, double c2) {
    require_pair(gen, ref, "ssim");
    return ssim_from_moments(global_moments(gen, ref), c1, c2);
}

double ssim(const Image& gen, const Image& ref, double max_val) {
    double c1 = 0.01 * max_val, c2 = 0.03 * max_val;
    return ssim(gen, ref, c1 * c1, c2 * c2);
}

double ssim_windowed(const Image& gen, const Image& ref, double max_val, std::size_t window) {
    require_pair(gen, ref, "ssim_windowed");
    if (window == 0) throw ContractError("ssim_windowed: window must be positive");
    const std::size_t h = gen.extent(0), w = gen.extent(1);
    if (window > h || window > w) return ssim(gen, ref, max_val);
    double c1 = 0.01 * max_val, c2 = 0.03 * max_val;
    c1 *= c1;
    c2 *= c2;
    double acc = 0;
    std::size_t count = 0;
    const auto& a = gen.data();
    const auto& b = ref.data();
    for (std::size_t i = 0; i + window <= h; i += window)
        for (std::size_t j = 0; j + window <= w; j += window) {
            Moments m;
            const double n = static_cast<double>(window * window);
            for (std::size_t di = 0; di < window; ++di)
                for (std::size_t dj = 0; dj < window; ++dj) {
                    m.mean_a += a[(i + di) * w + j + dj];
                    m.mean_b += b[(i + di) * w + j + dj];
                }
            m.mean_a /= n;
            m.mean_b /= n;
            for (std::size_t di = 0; di < window; ++di)
                for (std::size_t dj = 0; dj < window; ++dj) {
                    double da = a[(i + di) * w + j + dj] - m.mean_a;
                    double db = b[(i + di) * w + j + dj] - m.mean_b;
                    m.var_a += da * da;
                    m.var_b += db * db;
                    m.cov += da * db;
                }
            m.var_a /= n;
            m.var_b /= n;
            m.cov /= n;
            acc += ssim_from_moments(m, c1, c2);
            ++count;
        }
    return acc / static_cast<double>(count);
}

double shannon_entropy(const Image& img, std::size_t bins, double max_val) {
    require_image(img, "shannon_entropy");
    if (bins < 2) throw ContractError("shannon_entropy: need at least 2 bins");
    if (!(max_val > 0)) throw ContractError("shannon_entropy: max_val must be positive");
    std::vector<std::size_t> hist(bins, 0);
    const auto& v = img.data();
    for (double x : v) {
        double t = x / max_val * static_cast<double>(bins);
        long long bin = static_cast<long long>(std::floor(t));
        bin = std::max(0ll, std::min(static_cast<long long>(bins) - 1, bin));
        ++hist[static_cast<std::size_t>(bin)];
    }
    const double n = static_cast<double>(v.size());
    double h = 0;
    for (std::size_t c : hist) {
        if (c == 0) continue;  // 0*log(0) := 0
        double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h;
}

double sharpness(const Image& img) {
    require_image(img, "sharpness");
    const std::size_t h = img.extent(0), w = img.extent(1);
    if (h < 3 || w < 3) throw ContractError("sharpness: image must be at least 3x3");
    const auto& v = img.data();
    // half-sample reflection: -1 -> 0, n -> n-1
    auto refl = [](std::ptrdiff_t i, std::size_t n) -> std::size_t {
        if (i < 0) i = -1 - i;
        std::ptrdiff_t sn = static_cast<std::ptrdiff_t>(n);
        if (i >= sn) i = 2 * sn - 1 - i;
        return static_cast<std::size_t>(i);
    };
    auto px = [&](std::ptrdiff_t i, std::ptrdiff_t j) { return v[refl(i, h) * w + refl(j, w)]; };
    double acc = 0;
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i);
            std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j);
            double gx = -px(si - 1, sj - 1) + px(si - 1, sj + 1) - 2.0 * px(si, sj - 1) +
                        2.0 * px(si, sj + 1) - px(si + 1, sj - 1) + px(si + 1, sj + 1);
            double gy = -px(si - 1, sj - 1) - 2.0 * px(si - 1, sj) - px(si - 1, sj + 1) +
                        px(si + 1, sj - 1) + 2.0 * px(si + 1, sj) + px(si + 1, sj + 1);
            acc += std::sqrt(gx * gx + gy * gy);
        }
    return acc / static_cast<double>(h * w);
}

// ---------------------------------------------------------------------------
// Daubechies filters
//
// Built by spectral factorization: roots of the Bernstein-form polynomial
// Q(y) = sum_k C(p-1+k,k) y^k are mapped into the z-plane, the minimum-phase
// half is kept, convolved with (1+z)^p and normalized to sum sqrt(2).
// Self-checking: unit energy and even-shift orthogonality are verified after
// construction.

namespace {

using cplx = std::complex<double>;

std::vector<cplx> durand_kerner(std::vector<cplx> monic) {
    const std::size_t deg = monic.size() - 1;
    std::vector<cplx> roots(deg);
    cplx seed(0.4, 0.9);
    cplx acc(1.0, 0.0);
    for (std::size_t i = 0; i < deg; ++i) {
        acc *= seed;
        roots[i] = acc;
    }
    auto eval = [&](cplx x) {
        cplx r = monic[deg];
        for (std::size_t k = deg; k-- > 0;) r = r * x + monic[k];
        return r;
    };
    for (int iter = 0; iter < 500; ++iter) {
        double delta = 0;
        for (std::size_t i = 0; i < deg; ++i) {
            cplx den(1.0, 0.0);
            for (std::size_t j = 0; j < deg; ++j)
                if (j != i) den *= roots[i] - roots[j];
            cplx step = eval(roots[i]) / den;
            roots[i] -= step;
            delta = std::max(delta, std::abs(step));
        }
        if (delta < 1e-15) break;
    }
    return roots;
}

double binom(int n, int k) {
    double r = 1;
    for (int i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
    return r;
}

}  // namespace

std::vector<double> daubechies_filter(int order) {
    if (order < 1 || order > 8)
        throw ConfigError("daubechies_filter: order must lie in 1..8, got " + std::to_string(order));
    if (order == 1) {
        const double s = std::sqrt(0.5);
        return {s, s};
    }
    const int p = order;
    // Q(y), degree p-1, made monic.
    std::vector<cplx> q(p);
    for (int k = 0; k < p; ++k) q[k] = cplx(binom(p - 1 + k, k), 0.0);
    cplx lead = q[p - 1];
    for (auto& c : q) c /= lead;
    std::vector<cplx> yroots = durand_kerner(q);

    // Map y -> z via y = (2 - z - 1/z)/4 and keep |z| < 1.
    std::vector<cplx> zroots;
    zroots.reserve(yroots.size());
    for (cplx y : yroots) {
        cplx b = 2.0 - 4.0 * y;
        cplx disc = std::sqrt(b * b - 4.0);
        cplx z1 = (b + disc) / 2.0;
        cplx z2 = (b - disc) / 2.0;
        zroots.push_back(std::abs(z1) < 1.0 ? z1 : z2);
    }

    // (1+z)^p coefficients.
    std::vector<cplx> poly(p + 1);
    for (int k = 0; k <= p; ++k) poly[k] = cplx(binom(p, k), 0.0);
    // Multiply by (z - z_i) for each retained root.
    for (cplx zr : zroots) {
        std::vector<cplx> next(poly.size() + 1, cplx(0.0, 0.0));
        for (std::size_t k = 0; k < poly.size(); ++k) {
            next[k + 1] += poly[k];
            next[k] -= poly[k] * zr;
        }
        poly = std::move(next);
    }

    std::vector<double> h(poly.size());
    double sum = 0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        h[i] = poly[i].real();
        sum += h[i];
    }
    const double target = std::sqrt(2.0);
    for (auto& x : h) x *= target / sum;

    // sanity: unit energy and even-shift orthogonality
    for (std::size_t shift = 0; shift < h.size(); shift += 2) {
        double dot = 0;
        for (std::size_t i = shift; i < h.size(); ++i) dot += h[i] * h[i - shift];
        double want = shift == 0 ? 1.0 : 0.0;
        if (std::fabs(dot - want) > 1e-9)
            throw NumericError("daubechies_filter: factorization failed orthonormality check");
    }
    return h;
}

// ---------------------------------------------------------------------------
// separable analysis

namespace {

// One analysis step of a length-n signal read with stride `stride` from
// `src`; writes ceil(n/2) approx values and the same number of details.
void dwt_step(const double* src, std::size_t n, std::size_t stride, const std::vector<double>& h,
              DwtBoundary boundary, double* approx, double* detail, std::size_t out_stride) {
    const std::size_t taps = h.size();
    const std::size_t half = (n + 1) / 2;
    auto sample = [&](std::ptrdiff_t t) -> double {
        if (boundary == DwtBoundary::Periodized) {
            std::ptrdiff_t m = t % static_cast<std::ptrdiff_t>(n);
            if (m < 0) m += static_cast<std::ptrdiff_t>(n);
            return src[static_cast<std::size_t>(m) * stride];
        }
        // half-sample reflection, repeated for short signals
        std::ptrdiff_t sn = static_cast<std::ptrdiff_t>(n);
        while (t < 0 || t >= sn) {
            if (t < 0) t = -1 - t;
            if (t >= sn) t = 2 * sn - 1 - t;
        }
        return src[static_cast<std::size_t>(t) * stride];
    };
    for (std::size_t i = 0; i < half; ++i) {
        double a = 0, d = 0;
        for (std::size_t k = 0; k < taps; ++k) {
            double x = sample(static_cast<std::ptrdiff_t>(2 * i + k));
            a += h[k] * x;
            // g[k] = (-1)^k h[taps-1-k]
            double g = (k % 2 == 0 ? 1.0 : -1.0) * h[taps - 1 - k];
            d += g * x;
        }
        approx[i * out_stride] = a;
        detail[i * out_stride] = d;
    }
}

DwtBand dwt2_level(const Image& img, const std::vector<double>& h, DwtBoundary boundary) {
    const std::size_t ih = img.extent(0), iw = img.extent(1);
    const std::size_t oh = (ih + 1) / 2, ow = (iw + 1) / 2;
    // rows first
    std::vector<double> low(ih * ow), high(ih * ow);
    for (std::size_t r = 0; r < ih; ++r)
        dwt_step(img.data().data() + r * iw, iw, 1, h, boundary, low.data() + r * ow,
                 high.data() + r * ow, 1);
    // then columns of each half
    Image a({oh, ow}), dh({oh, ow}), dv({oh, ow}), dd({oh, ow});
    for (std::size_t c = 0; c < ow; ++c) {
        dwt_step(low.data() + c, ih, ow, h, boundary, a.mutable_data().data() + c,
                 dh.mutable_data().data() + c, ow);
        dwt_step(high.data() + c, ih, ow, h, boundary, dv.mutable_data().data() + c,
                 dd.mutable_data().data() + c, ow);
    }
    return DwtBand{std::move(a), std::move(dh), std::move(dv), std::move(dd)};
}

}  // namespace

DwtPyramid dwt2_multilevel(const Image& img, int levels, int wavelet_order, DwtBoundary boundary) {
    require_image(img, "dwt2_multilevel");
    if (levels < 1) throw ContractError("dwt2_multilevel: levels must be >= 1");
    std::vector<double> h = daubechies_filter(wavelet_order);
    DwtPyramid pyr;
    pyr.wavelet_order = wavelet_order;
    pyr.boundary = boundary;
    Image cur = img;
    for (int s = 0; s < levels; ++s) {
        if (cur.extent(0) < 2 || cur.extent(1) < 2)
            throw ContractError("dwt2_multilevel: image too small for " + std::to_string(levels) +
                                " levels (level " + std::to_string(s + 1) + " input is " +
                                shape_str(cur.shape()) + ")");
        DwtBand band = dwt2_level(cur, h, boundary);
        cur = band.approx;
        pyr.levels.push_back(std::move(band));
    }
    return pyr;
}

double wavelet_low(const Image& img, int levels, int wavelet_order, DwtBoundary boundary) {
    DwtPyramid pyr = dwt2_multilevel(img, levels, wavelet_order, boundary);
    const double n = static_cast<double>(img.size());
    double total = 0;
    for (const DwtBand& band : pyr.levels) {
        double e = 0;
        for (double v : band.approx.data()) e += v * v;
        total += e / n;
    }
    return total;
}

// ---------------------------------------------------------------------------
// batch evaluation / CSV

MetricReport compute_metrics(const std::string& image_id, const Image& gen, const Image* ref,
                             const MetricOptions& opts) {
    MetricReport r;
    r.image_id = image_id;
    if (ref) {
        r.psnr = psnr(gen, *ref, opts.max_val);
        r.ssim = ssim(gen, *ref, opts.max_val);
    }
    r.sharpness = sharpness(gen);
    r.entropy = shannon_entropy(gen, opts.entropy_bins, opts.max_val);
    r.wavelet_low = wavelet_low(gen, opts.wavelet_levels, opts.wavelet_order, opts.boundary);
    return r;
}

namespace {

std::string fmt_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string metrics_to_csv(const std::vector<MetricReport>& reports) {
    std::ostringstream os;
    os << "image_id,psnr,ssim,sharpness,entropy,wavelet_low\n";
    for (const auto& r : reports) {
        os << r.image_id << ',';
        if (r.psnr) os << fmt_double(*r.psnr);
        os << ',';
        if (r.ssim) os << fmt_double(*r.ssim);
        os << ',' << fmt_double(r.sharpness) << ',' << fmt_double(r.entropy) << ','
           << fmt_double(r.wavelet_low) << '\n';
    }
    return os.str();
}

std::vector<MetricReport> metrics_from_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line)) throw ParseError("metrics csv: empty input");
    if (line.rfind("image_id,", 0) != 0)
        throw ParseError("metrics csv: missing header row");
    std::vector<MetricReport> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                f.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur += c;
            }
        }
        f.push_back(cur);
        if (f.size() != 6) throw ParseError("metrics csv: expected 6 fields, got line '" + line + "'");
        MetricReport r;
        r.image_id = f[0];
        auto num = [](const std::string& s) -> double {
            if (s == "inf") return std::numeric_limits<double>::infinity();
            if (s == "-inf") return -std::numeric_limits<double>::infinity();
            return std::stod(s);
        };
        if (!f[1].empty()) r.psnr = num(f[1]);
        if (!f[2].empty()) r.ssim = num(f[2]);
        r.sharpness = num(f[3]);
        r.entropy = num(f[4]);
        r.wavelet_low = num(f[5]);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace mlpsr
