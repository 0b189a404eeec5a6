#include "micronet/image.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <vector>

#include "micronet/errors.hpp"

namespace micronet {

int channel_count(Modality m) { return m == Modality::fluorescence ? 2 : 3; }

Modality parse_modality(const std::string& name) {
  if (name == "fluorescence") return Modality::fluorescence;
  if (name == "he_rgb" || name == "he") return Modality::he_rgb;
  throw InvalidArgument("unknown modality '" + name + "' (expected fluorescence or he_rgb)");
}

std::string to_string(Modality m) { return m == Modality::fluorescence ? "fluorescence" : "he_rgb"; }

std::int32_t InstanceMask::max_label() const {
  std::int32_t k = 0;
  for (auto v : labels) k = std::max(k, v);
  return k;
}

namespace {

// Flood-fills the component containing `seed` whose pixels satisfy `same`, writing `id`.
template <typename Same>
void flood(int h, int w, std::size_t seed, std::vector<std::int32_t>& out, std::int32_t id, int connectivity,
           Same same, std::vector<std::size_t>& stack) {
  stack.clear();
  stack.push_back(seed);
  out[seed] = id;
  static constexpr int dy8[] = {-1, 1, 0, 0, -1, -1, 1, 1};
  static constexpr int dx8[] = {0, 0, -1, 1, -1, 1, -1, 1};
  const int n = connectivity == 8 ? 8 : 4;
  while (!stack.empty()) {
    const std::size_t p = stack.back();
    stack.pop_back();
    const int y = static_cast<int>(p / w);
    const int x = static_cast<int>(p % w);
    for (int k = 0; k < n; ++k) {
      const int ny = y + dy8[k];
      const int nx = x + dx8[k];
      if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
      const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
      if (out[q] != 0 || !same(q)) continue;
      out[q] = id;
      stack.push_back(q);
    }
  }
}

}  // namespace

InstanceMask canonicalize(const InstanceMask& mask) {
  const int h = mask.height;
  const int w = mask.width;
  std::vector<std::int32_t> comp(mask.size(), 0);
  std::vector<std::size_t> stack;
  // Component id per pixel, plus (original label, first pixel) for ordering.
  struct Key {
    std::int32_t label;
    std::size_t first;
  };
  std::vector<Key> keys;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const auto lab = mask.labels[p];
    if (lab <= 0 || comp[p] != 0) continue;
    keys.push_back({lab, p});
    const auto id = static_cast<std::int32_t>(keys.size());
    flood(h, w, p, comp, id, 4, [&](std::size_t q) { return mask.labels[q] == lab; }, stack);
  }
  std::vector<std::int32_t> order(keys.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int32_t>(i);
  std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
    if (keys[a].label != keys[b].label) return keys[a].label < keys[b].label;
    return keys[a].first < keys[b].first;
  });
  std::vector<std::int32_t> remap(keys.size() + 1, 0);
  for (std::size_t rank = 0; rank < order.size(); ++rank) remap[order[rank] + 1] = static_cast<std::int32_t>(rank + 1);
  InstanceMask out(h, w);
  for (std::size_t p = 0; p < comp.size(); ++p) out.labels[p] = remap[comp[p]];
  return out;
}

bool is_canonical(const InstanceMask& mask) {
  for (auto v : mask.labels)
    if (v < 0) return false;
  return canonicalize(mask) == mask;
}

BinaryMask foreground(const InstanceMask& mask) {
  BinaryMask out(mask.height, mask.width);
  for (std::size_t p = 0; p < mask.size(); ++p) out.values[p] = mask.labels[p] > 0 ? 1 : 0;
  return out;
}

InstanceMask label_components(const BinaryMask& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8) throw InvalidArgument("connectivity must be 4 or 8");
  InstanceMask out(mask.height, mask.width);
  std::vector<std::size_t> stack;
  std::int32_t next = 0;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask.values[p] || out.labels[p] != 0) continue;
    flood(mask.height, mask.width, p, out.labels, ++next, connectivity,
          [&](std::size_t q) { return mask.values[q] != 0; }, stack);
  }
  return out;
}

void ImageSample::validate() const {
  const int expected = channel_count(modality);
  if (channels.channels != expected) {
    std::ostringstream msg;
    msg << "sample '" << id << "': modality " << to_string(modality) << " expects " << expected
        << " channels, got " << channels.channels;
    throw ShapeError(msg.str());
  }
  if (channels.data.size() != static_cast<std::size_t>(channels.channels) * channels.height * channels.width)
    throw ShapeError("sample '" + id + "': raster buffer size does not match its shape");
  if (truth && (truth->height != channels.height || truth->width != channels.width)) {
    std::ostringstream msg;
    msg << "sample '" << id << "': truth " << truth->height << "x" << truth->width << " vs raster "
        << channels.height << "x" << channels.width;
    throw ShapeError(msg.str());
  }
  for (double v : channels.data)
    if (!std::isfinite(v) || v < 0.0 || v > 1.0)
      throw InvalidArgument("sample '" + id + "': intensity outside [0,1] or non-finite");
}

}  // namespace micronet
