#pragma once

// Bicubic interpolation: LR synthesis (single-axis degrade) and the bicubic
// upsampling baseline. Separable cubic convolution with a = -0.5 (Catmull-Rom),
// half-pixel-center coordinate mapping, edge clamping.

#include <cstddef>

#include "mlpsr/metrics.hpp"  // Image alias

namespace mlpsr {

// Cubic convolution kernel weight at offset t (a = -0.5).
double bicubic_weight(double t);

Image bicubic_resize(const Image& img, std::size_t out_h, std::size_t out_w);

// Downsamples only the second (slice) axis by `factor`; the first axis is
// untouched.
Image degrade(const Image& hr_slice, std::size_t factor = 4);

}  // namespace mlpsr
