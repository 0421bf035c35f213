#pragma once

// Image quality metrics on {H, W, C} images with values in [0, 1].

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "planesynth/errors.hpp"
#include "planesynth/tensor.hpp"

namespace planesynth {

// 10 log10(1 / MSE); identical images give +infinity.
inline double psnr(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "psnr");
  if (a.empty()) throw DimensionMismatch("psnr of empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / double(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5) evaluated
// at every position where the window fits. Images smaller than the window use
// the largest odd window that fits.
inline double ssim(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  if (a.rank() != 3) throw DimensionMismatch("ssim expects {H, W, C} images");
  const std::size_t h = a.dim(0), w = a.dim(1), ch = a.dim(2);
  const std::size_t radius = std::min<std::size_t>(5, (std::min(h, w) - 1) / 2);
  const std::size_t size = 2 * radius + 1;
  std::vector<double> kernel(size * size);
  double ksum = 0.0;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const double di = double(i) - double(radius), dj = double(j) - double(radius);
      kernel[i * size + j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
      ksum += kernel[i * size + j];
    }
  for (double& k : kernel) k /= ksum;
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t y = 0; y + size <= h; ++y)
      for (std::size_t x = 0; x + size <= w; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (std::size_t i = 0; i < size; ++i)
          for (std::size_t j = 0; j < size; ++j) {
            const double k = kernel[i * size + j];
            const double va = a.at(y + i, x + j, c), vb = b.at(y + i, x + j, c);
            ma += k * va;
            mb += k * vb;
            saa += k * va * va;
            sbb += k * vb * vb;
            sab += k * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / double(count);
}

}  // namespace planesynth
