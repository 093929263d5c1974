#pragma once

// Reference metrics (PSNR, SSIM with global statistics) and no-reference
// structural metrics: Shannon entropy, Sobel sharpness, and the normalized
// low-frequency energy of a multi-level 2-D discrete wavelet transform.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mlpsr/tensor.hpp"

namespace mlpsr {

using Image = Tensor<double>;  // rank-2, H x W

// ---------------------------------------------------------------------------
// reference metrics

// 10*log10(max^2 / MSE); +inf when the images are identical.
double psnr(const Image& gen, const Image& ref, double max_val);

// Single-window SSIM over global image statistics. c1=(0.01*L)^2,
// c2=(0.03*L)^2 with L = max_val.
double ssim(const Image& gen, const Image& ref, double c1, double c2);
double ssim(const Image& gen, const Image& ref, double max_val = 1.0);

// Sliding-window mean SSIM, exposed as an option (not the default).
double ssim_windowed(const Image& gen, const Image& ref, double max_val = 1.0,
                     std::size_t window = 8);

// ---------------------------------------------------------------------------
// no-reference metrics

// Histogram entropy in bits over equal-width bins spanning [0, max_val].
double shannon_entropy(const Image& img, std::size_t bins = 256, double max_val = 1.0);

// Mean Sobel gradient magnitude with reflected borders.
double sharpness(const Image& img);

// ---------------------------------------------------------------------------
// discrete wavelet transform

enum class DwtBoundary {
    Symmetric,   // half-sample reflection (default)
    Periodized,  // circular; orthonormal, exact energy conservation
};

struct DwtBand {
    Image approx;    // low-pass both axes
    Image detail_h;  // row-low / column-high (horizontal edges)
    Image detail_v;  // row-high / column-low (vertical edges)
    Image detail_d;  // high-pass both axes
};

struct DwtPyramid {
    std::vector<DwtBand> levels;  // levels[s-1] holds scale s
    int wavelet_order = 2;
    DwtBoundary boundary = DwtBoundary::Symmetric;
};

// Orthonormal Daubechies scaling filter of the given order (2*order taps,
// sum sqrt(2), unit energy). Orders 1..8.
std::vector<double> daubechies_filter(int order);

// Separable analysis recursing on the approximation band. Band extents halve
// (rounded up) per level; every level requires extents >= 2.
DwtPyramid dwt2_multilevel(const Image& img, int levels, int wavelet_order,
                           DwtBoundary boundary = DwtBoundary::Symmetric);

// Sum over scales s=1..levels of the squared approximation coefficients,
// normalized by the pixel count of the original image.
double wavelet_low(const Image& img, int levels = 5, int wavelet_order = 2,
                   DwtBoundary boundary = DwtBoundary::Symmetric);

// ---------------------------------------------------------------------------
// batch evaluation

struct MetricOptions {
    double max_val = 1.0;
    std::size_t entropy_bins = 256;
    int wavelet_levels = 5;
    int wavelet_order = 2;
    DwtBoundary boundary = DwtBoundary::Symmetric;
};

struct MetricReport {
    std::string image_id;
    std::optional<double> psnr;  // present iff a ground truth was supplied
    std::optional<double> ssim;
    double sharpness = 0;
    double entropy = 0;
    double wavelet_low = 0;
};

MetricReport compute_metrics(const std::string& image_id, const Image& gen, const Image* ref,
                             const MetricOptions& opts = {});

// One CSV row per image; header mandatory; empty fields for absent reference
// metrics; +inf printed as "inf".
std::string metrics_to_csv(const std::vector<MetricReport>& reports);
std::vector<MetricReport> metrics_from_csv(const std::string& csv);

}  // namespace mlpsr
