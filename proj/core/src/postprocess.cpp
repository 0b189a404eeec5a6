#include "micronet/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <vector>

#include "micronet/errors.hpp"

namespace micronet::postprocess {

void PostprocessParams::validate() const {
  if (min_area_px < 0) throw InvalidArgument("min_area_px must be >= 0");
  if (connectivity != 4 && connectivity != 8) throw InvalidArgument("connectivity must be 4 or 8");
}

BinaryMask binarize(const Image& probabilities) {
  if (probabilities.channels != 2) throw ShapeError("binarize expects a 2-channel probability map");
  BinaryMask out(probabilities.height, probabilities.width);
  const double* bg = probabilities.plane(0);
  const double* fg = probabilities.plane(1);
  for (std::size_t p = 0; p < out.size(); ++p) out.values[p] = fg[p] > bg[p] ? 1 : 0;
  return out;
}

InstanceMask clean(const BinaryMask& mask, const PostprocessParams& params) {
  params.validate();
  const int h = mask.height;
  const int w = mask.width;
  InstanceMask comps = label_components(mask, params.connectivity);
  const auto k = static_cast<std::size_t>(comps.max_label());
  std::vector<std::size_t> area(k + 1, 0);
  for (auto v : comps.labels) ++area[v];
  for (auto& v : comps.labels)
    if (v > 0 && area[v] < static_cast<std::size_t>(params.min_area_px)) v = 0;

  if (params.fill_holes) {
    BinaryMask background(h, w);
    for (std::size_t p = 0; p < comps.size(); ++p) background.values[p] = comps.labels[p] == 0 ? 1 : 0;
    const int bg_conn = params.connectivity == 4 ? 8 : 4;
    const InstanceMask regions = label_components(background, bg_conn);
    const auto nr = static_cast<std::size_t>(regions.max_label());
    // Per region: the single enclosing component, -1 once a second one or the border is seen.
    std::vector<std::int32_t> owner(nr + 1, 0);
    static constexpr int dy[] = {-1, 1, 0, 0, -1, -1, 1, 1};
    static constexpr int dx[] = {0, 0, -1, 1, -1, 1, -1, 1};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const auto r = regions.at(y, x);
        if (r == 0 || owner[r] < 0) continue;
        if (y == 0 || x == 0 || y == h - 1 || x == w - 1) {
          owner[r] = -1;
          continue;
        }
        for (int n = 0; n < bg_conn; ++n) {
          const auto c = comps.at(y + dy[n], x + dx[n]);
          if (c == 0) continue;
          if (owner[r] == 0) owner[r] = c;
          else if (owner[r] != c) {
            owner[r] = -1;
            break;
          }
        }
      }
    for (std::size_t p = 0; p < comps.size(); ++p) {
      const auto r = regions.labels[p];
      if (r > 0 && owner[r] > 0) comps.labels[p] = owner[r];
    }
  }
  BinaryMask kept(h, w);
  for (std::size_t p = 0; p < comps.size(); ++p) kept.values[p] = comps.labels[p] > 0 ? 1 : 0;
  return label_components(kept, params.connectivity);
}

Image overlay(const Image& base, const InstanceMask& truth, const InstanceMask& prediction,
              const OverlayPalette& palette) {
  const int h = base.height;
  const int w = base.width;
  if (prediction.height != h || prediction.width != w) throw ShapeError("overlay: prediction size differs from image");
  const bool has_truth = truth.size() != 0;
  if (has_truth && (truth.height != h || truth.width != w)) throw ShapeError("overlay: truth size differs from image");
  if (!(palette.alpha >= 0.0 && palette.alpha <= 1.0)) throw InvalidArgument("overlay alpha must be in [0,1]");
  Image out(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double rgb[3];
      if (base.channels == 3) {
        for (int c = 0; c < 3; ++c) rgb[c] = base.at(c, y, x);
      } else {
        double g = 0.0;
        for (int c = 0; c < base.channels; ++c) g = std::max(g, base.at(c, y, x));
        rgb[0] = rgb[1] = rgb[2] = g;
      }
      const bool t = has_truth && truth.at(y, x) > 0;
      const bool p = prediction.at(y, x) > 0;
      const std::array<std::uint8_t, 3>* tint = t && p ? &palette.overlap : t ? &palette.truth : p ? &palette.prediction : nullptr;
      for (int c = 0; c < 3; ++c) {
        double v = rgb[c];
        if (tint) v = (1.0 - palette.alpha) * v + palette.alpha * ((*tint)[c] / 255.0);
        out.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
  return out;
}

void write_overlay_png(const Image& rgb, const std::filesystem::path& path) {
  if (rgb.channels != 3) throw ShapeError("overlay must have 3 channels");
  cv::Mat m(rgb.height, rgb.width, CV_8UC3);
  for (int y = 0; y < rgb.height; ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < rgb.width; ++x)
      for (int c = 0; c < 3; ++c)
        row[3 * x + (2 - c)] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb.at(c, y, x), 0.0, 1.0) * 255.0));
  }
  if (!cv::imwrite(path.string(), m)) throw IoError(path.string() + ": cannot write overlay");
}

}  // namespace micronet::postprocess
