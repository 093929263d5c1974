#include "mlpsr/resample.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mlpsr/errors.hpp"

namespace mlpsr {

double bicubic_weight(double t) {
    const double a = -0.5;
    double x = std::fabs(t);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

namespace {

// Resamples one axis of a row-major grid. `n_lines` independent lines of
// `in_len` samples with stride `stride` become lines of `out_len` samples.
void resample_axis(const std::vector<double>& in, std::vector<double>& out, std::size_t n_lines,
                   std::size_t in_len, std::size_t out_len, std::size_t in_stride,
                   std::size_t line_stride_in, std::size_t out_stride,
                   std::size_t line_stride_out) {
    const double scale = static_cast<double>(in_len) / static_cast<double>(out_len);
    // precompute taps per output sample
    std::vector<std::ptrdiff_t> base(out_len);
    std::vector<double> weights(out_len * 4);
    for (std::size_t o = 0; o < out_len; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        double fl = std::floor(src);
        std::ptrdiff_t i0 = static_cast<std::ptrdiff_t>(fl) - 1;
        base[o] = i0;
        for (int k = 0; k < 4; ++k)
            weights[o * 4 + k] = bicubic_weight(src - static_cast<double>(i0 + k));
    }
    auto clamp_idx = [&](std::ptrdiff_t i) {
        return static_cast<std::size_t>(
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(in_len) - 1, std::max<std::ptrdiff_t>(0, i)));
    };
    for (std::size_t line = 0; line < n_lines; ++line) {
        const double* src = in.data() + line * line_stride_in;
        double* dst = out.data() + line * line_stride_out;
        for (std::size_t o = 0; o < out_len; ++o) {
            double acc = 0;
            for (int k = 0; k < 4; ++k)
                acc += weights[o * 4 + k] * src[clamp_idx(base[o] + k) * in_stride];
            dst[o * out_stride] = acc;
        }
    }
}

}  // namespace

Image bicubic_resize(const Image& img, std::size_t out_h, std::size_t out_w) {
    if (img.rank() != 2) throw DimensionError("bicubic_resize: expected a rank-2 image");
    if (out_h == 0 || out_w == 0) throw ContractError("bicubic_resize: output extents must be >= 1");
    const std::size_t h = img.extent(0), w = img.extent(1);
    // rows (second axis) first, then columns
    std::vector<double> tmp(h * out_w);
    resample_axis(img.data(), tmp, h, w, out_w, 1, w, 1, out_w);
    Image out({out_h, out_w});
    resample_axis(tmp, out.mutable_data(), out_w, h, out_h, out_w, 1, out_w, 1);
    return out;
}

Image degrade(const Image& hr_slice, std::size_t factor) {
    if (hr_slice.rank() != 2) throw DimensionError("degrade: expected a rank-2 image");
    if (factor == 0) throw ContractError("degrade: factor must be >= 1");
    const std::size_t w = hr_slice.extent(1);
    if (w % factor != 0)
        throw ConfigError("degrade: slice-axis extent " + std::to_string(w) +
                          " not divisible by factor " + std::to_string(factor));
    return bicubic_resize(hr_slice, hr_slice.extent(0), w / factor);
}

}  // namespace mlpsr
