#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "micronet/image.hpp"

namespace micronet::augment {

enum class DistortionKind { barrel, pincushion, moustache };

DistortionKind parse_distortion_kind(const std::string& name);
std::string to_string(DistortionKind kind);

/// Radial lens model r_src = r (1 + k1 r^2 + k2 r^4), r normalised so the
/// half-diagonal is 1. k1 = k2 = 0 is accepted for every kind as the identity.
struct DistortionParams {
  DistortionKind kind = DistortionKind::barrel;
  double k1 = 0.0;
  double k2 = 0.0;

  static constexpr double max_abs_k1 = 0.2;
  static constexpr double max_abs_k2 = 0.1;

  /// Sign pattern, caps, and monotonicity of r_src over [0, 1].
  void validate() const;
  /// Smallest value of d r_src / d r over [0, 1] (closed form).
  double min_radial_slope() const;
};

struct NoiseParams {
  double mean = 0.0;
  std::array<double, 2> variance_range{0.0007, 0.001};
  void validate() const;
};

struct BlurParams {
  int kernel_size = 12;
  std::array<double, 2> sigma_range{0.2, 2.0};
  void validate() const;
};

using Sample = std::pair<Image, InstanceMask>;

/// Maps output pixel (y, x) to its source position under the distortion.
std::array<double, 2> distortion_source(const DistortionParams& params, int height, int width, double y, double x);

/// Bilinear for the image, nearest for the truth; out-of-range samples reflect.
Sample distort(const Image& image, const InstanceMask& truth, const DistortionParams& params);

/// Image plus noise, before clipping. The variance is drawn from the range with the same seed.
Image add_noise_unclipped(const Image& image, const NoiseParams& params, std::uint64_t seed);
Image add_noise(const Image& image, const NoiseParams& params, std::uint64_t seed);

inline constexpr double snr_clean = std::numeric_limits<double>::infinity();

/// Mean of squared intensities over all channels.
double signal_power(const Image& image);
/// Noise variance giving the requested SNR for this image.
double noise_variance_for_snr(const Image& image, double snr_db);
Image add_noise_at_snr_unclipped(const Image& image, double snr_db, std::uint64_t seed);
Image add_noise_at_snr(const Image& image, double snr_db, std::uint64_t seed);

/// Normalised size x size Gaussian; taps sit at offsets i - (size-1)/2.
std::vector<double> gaussian_kernel(int size, double sigma);
/// Filters with `gaussian_kernel(size, sigma)`, anchored at (size-1)/2 (integer division), mirror border.
Image blur_with_sigma(const Image& image, int kernel_size, double sigma);
Image blur(const Image& image, const BlurParams& params, std::uint64_t seed);

enum class FlipOp { none, lr, ud, rot90, rot180, rot270 };
inline constexpr std::array<FlipOp, 6> all_flip_ops{FlipOp::none, FlipOp::lr, FlipOp::ud,
                                                    FlipOp::rot90, FlipOp::rot180, FlipOp::rot270};

/// rot90 is counter-clockwise. Rotations by 90/270 swap height and width.
Sample flip_rotate(const Image& image, const InstanceMask& truth, FlipOp op);

/// Per-op switches and ranges; each enabled op fires with `probability`.
struct Recipe {
  bool distortion = true;
  std::array<double, 2> k1_magnitude{0.02, 0.12};
  std::array<double, 2> k2_magnitude{0.005, 0.05};
  bool noise = false;
  NoiseParams noise_params;
  bool blur = false;
  BlurParams blur_params;
  bool flip_rotate = true;
  double probability = 0.5;

  void validate() const;
  /// Noise for fluorescence, blur for H&E; distortion and flips for both.
  static Recipe for_modality(Modality modality);
};

/// Draws distortion parameters for one patch from the recipe ranges.
DistortionParams draw_distortion(const Recipe& recipe, std::uint64_t seed);

/// Applies the recipe to one training patch. The truth only sees geometric ops.
Sample apply(const Recipe& recipe, const Image& image, const InstanceMask& truth, std::uint64_t seed);

}  // namespace micronet::augment
