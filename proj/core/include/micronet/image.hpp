#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace micronet {

enum class Modality { fluorescence, he_rgb };

/// Number of channels a modality carries (membrane+nuclear, or RGB).
int channel_count(Modality m);
Modality parse_modality(const std::string& name);
std::string to_string(Modality m);

/// Planar multi-channel raster of doubles, laid out channel-major (C, H, W).
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  double& at(int c, int y, int x) { return data[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  double at(int c, int y, int x) const { return data[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  double* plane(int c) { return data.data() + c * plane_size(); }
  const double* plane(int c) const { return data.data() + c * plane_size(); }
  bool empty() const { return data.empty(); }

  bool operator==(const Image&) const = default;
};

/// Integer label raster: 0 is background, k > 0 is object k.
struct InstanceMask {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> labels;

  InstanceMask() = default;
  InstanceMask(int h, int w, std::int32_t fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::int32_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::int32_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return labels.size(); }

  /// Largest label present (K for a canonical mask).
  std::int32_t max_label() const;

  bool operator==(const InstanceMask&) const = default;
};

/// Binary raster (0/1), used for semantic masks.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }

  bool operator==(const BinaryMask&) const = default;
};

/// Canonical form: every 4-connected component of every positive label becomes its
/// own object; objects are numbered 1..K ordered by (original label, first pixel in
/// raster order). Idempotent.
InstanceMask canonicalize(const InstanceMask& mask);

/// True when labels are exactly {0} ∪ {1..K}, each object 4-connected.
bool is_canonical(const InstanceMask& mask);

BinaryMask foreground(const InstanceMask& mask);

/// Labels 4- or 8-connected components of a binary mask as 1..K in raster order of
/// their first pixel.
InstanceMask label_components(const BinaryMask& mask, int connectivity = 4);

/// One unit of ingestion: channels plus optional instance truth.
struct ImageSample {
  std::string id;
  Image channels;
  std::optional<InstanceMask> truth;
  Modality modality = Modality::fluorescence;

  /// Throws if any documented invariant (shape agreement, channel count, value range) is broken.
  void validate() const;
};

}  // namespace micronet
