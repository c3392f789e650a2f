#pragma once

// Behavior-duration alignment and haptic resampling.

#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mosaic/diffcore.hpp"
#include "mosaic/error.hpp"

namespace mosaic {

inline constexpr double kCameraFrameRate = 10.0;  // images per second
inline constexpr double kRawHapticRate = 500.0;   // joint-torque sampling, Hz
inline constexpr double kHapticRate = 50.0;       // after resampling, Hz

struct BehaviorTiming {
  std::string behavior;
  double duration_s = 0.0;
  std::map<std::string, std::size_t> target_frames;  // modality -> frames
};

// Nearest integer, halves away from zero.
inline std::size_t round_frames(double x) { return static_cast<std::size_t>(std::round(x)); }

// Duration is the mean image count divided by the camera rate; each modality
// then gets round(duration * rate) frames.
inline BehaviorTiming compute_timing(std::string behavior, std::span<const std::size_t> image_counts,
                                     const std::map<std::string, double>& modality_rates) {
  require(!image_counts.empty(), ErrorKind::kData,
          "compute_timing: no trials for behavior '" + behavior + "'");
  std::size_t total = 0;
  for (std::size_t c : image_counts) {
    require(c > 0, ErrorKind::kData,
            "compute_timing: trial with zero images for behavior '" + behavior + "'");
    total += c;
  }
  BehaviorTiming timing;
  timing.behavior = std::move(behavior);
  timing.duration_s =
      static_cast<double>(total) / static_cast<double>(image_counts.size()) / kCameraFrameRate;
  for (const auto& [modality, rate] : modality_rates) {
    require(rate > 0.0, ErrorKind::kData, "compute_timing: rate for " + modality + " must be positive");
    timing.target_frames[modality] = std::max<std::size_t>(1, round_frames(timing.duration_s * rate));
  }
  return timing;
}

enum class Interpolation { kLinear };

// Per-row interpolation of a d x t signal onto target_t points spanning the
// same time extent. Endpoints are reproduced exactly, and resampling to the
// original length returns the input unchanged.
inline Tensor resample(const Tensor& signal, std::size_t target_t,
                       Interpolation method = Interpolation::kLinear) {
  require(signal.rank() == 2, ErrorKind::kDimension,
          "resample: expected a d x t matrix, got " + shape_string(signal.shape()));
  const std::size_t d = signal.rows(), t = signal.cols();
  require(t >= 2, ErrorKind::kContract,
          "resample: need at least 2 samples per row, got " + std::to_string(t));
  require(target_t >= 1, ErrorKind::kContract, "resample: target length must be positive");
  require(method == Interpolation::kLinear, ErrorKind::kContract, "resample: unknown method");
  const auto x = signal.values();
  std::vector<double> out(d * target_t);
  const double span = static_cast<double>(t - 1);
  for (std::size_t k = 0; k < target_t; ++k) {
    const double pos =
        target_t == 1 ? 0.0 : static_cast<double>(k) * span / static_cast<double>(target_t - 1);
    std::size_t i = static_cast<std::size_t>(pos);
    if (i >= t - 1) i = t - 1;
    const double frac = pos - static_cast<double>(i);
    for (std::size_t r = 0; r < d; ++r) {
      const double a = x[r * t + i];
      out[r * target_t + k] = (frac == 0.0) ? a : a + frac * (x[r * t + i + 1] - a);
    }
  }
  return Tensor::matrix(d, target_t, std::move(out));
}

inline Tensor resample_linear(const Tensor& signal, std::size_t target_t) {
  return resample(signal, target_t, Interpolation::kLinear);
}

}  // namespace mosaic
