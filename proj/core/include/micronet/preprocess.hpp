#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "micronet/image.hpp"

namespace micronet::preprocess {

/// Target colour statistics in the decorrelated log-LMS (l, alpha, beta) space.
struct StainTarget {
  std::array<double, 3> means{};
  std::array<double, 3> stds{1.0, 1.0, 1.0};

  void validate() const;
  /// Six numbers on one line: three means then three standard deviations.
  void save(const std::filesystem::path& path) const;
  static StainTarget load(const std::filesystem::path& path);
};

/// RGB in [0,1] (3 x H x W) to l-alpha-beta and back. Zero intensities are offset by
/// a small constant before the logarithm; the inverse removes it exactly.
Image rgb_to_lab(const Image& rgb);
Image lab_to_rgb(const Image& lab);

/// Per-channel mean and population std of an image in l-alpha-beta space.
StainTarget lab_statistics(const Image& lab);
StainTarget stain_target_from(const Image& rgb);

/// Statistics transfer in l-alpha-beta space, before conversion back to RGB.
/// Throws DegenerateImage when a source channel has zero spread.
Image reinhard_transfer_lab(const Image& rgb, const StainTarget& target);

/// Full normalisation: transfer, convert back, clip to [0,1].
Image reinhard_normalize(const Image& rgb, const StainTarget& target);

enum class StrideMode { random_center, tiled };

struct PatchSpec {
  int sample_size = 300;
  int crop_size = 252;
  StrideMode stride_mode = StrideMode::random_center;

  void validate() const;
  static PatchSpec for_crop(int crop_size);
};

/// Symmetric (edge-inclusive) mirror index into [0, n), valid for any integer.
int mirror_index(int i, int n);

/// Pads bottom/right by mirroring so both sides are at least `min_size`.
/// Truth, when present, is padded with the same index map.
ImageSample pad_symmetric(const ImageSample& sample, int min_size);

struct Patch {
  Image image;
  InstanceMask truth;  // empty (0x0) when the sample carries no truth
  int top = 0;         // crop origin in the source sample
  int left = 0;
};

/// Chooses a sample_size window (uniformly random origin) and centre-crops it to
/// crop_size. The sample must already be padded to at least sample_size.
Patch sample_patch(const ImageSample& sample, const PatchSpec& spec, std::uint64_t seed);

/// Grid of non-overlapping crop x crop tiles covering the sample, after mirror-padding
/// it up to a multiple of the crop size. Tiles are in row-major order.
std::vector<Patch> tile_patches(const ImageSample& sample, int crop_size);

}  // namespace micronet::preprocess
