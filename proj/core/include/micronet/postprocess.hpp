#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "micronet/image.hpp"

namespace micronet::postprocess {

struct PostprocessParams {
  int min_area_px = 100;
  bool fill_holes = true;
  int connectivity = 4;  // foreground connectivity; background uses the complement

  void validate() const;
};

/// Per-pixel argmax of a 2 x H x W probability map; ties go to background.
BinaryMask binarize(const Image& probabilities);

/// Area opening (components with area < min_area_px removed), then filling of
/// background regions that touch a single component and not the border, then
/// labelling 1..K in raster order.
InstanceMask clean(const BinaryMask& mask, const PostprocessParams& params);

struct OverlayPalette {
  std::array<std::uint8_t, 3> truth{0, 255, 0};
  std::array<std::uint8_t, 3> prediction{255, 0, 0};
  std::array<std::uint8_t, 3> overlap{255, 255, 0};
  double alpha = 0.45;
};

/// RGB preview: grey base (H&E kept in colour) with truth-only, prediction-only and
/// overlap pixels tinted. `truth` may be empty.
Image overlay(const Image& base, const InstanceMask& truth, const InstanceMask& prediction,
              const OverlayPalette& palette = {});
void write_overlay_png(const Image& rgb, const std::filesystem::path& path);

}  // namespace micronet::postprocess
