#pragma once

#include "hidiff/tensor.hpp"

#include <filesystem>
#include <limits>

namespace hidiff {

// [3, H, W] with values in [0, 1].
using Image = Tensor<float>;

void check_image(const Image& img, const char* what);
Image clamp01(const Image& img);

// 8-bit PNG. Grayscale and alpha inputs are expanded/stripped to RGB.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

// 10 log10(range^2 / MSE); +inf for identical images.
double psnr(const Image& a, const Image& b, double data_range = 1.0);
// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03) over the valid
// region, per channel, averaged.
double ssim(const Image& a, const Image& b, double data_range = 1.0);

inline bool is_infinite_psnr(double v) { return v == std::numeric_limits<double>::infinity(); }

}  // namespace hidiff
