#include "micronet/preprocess.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "micronet/errors.hpp"

namespace micronet::preprocess {

namespace {

constexpr double kLogOffset = 1e-6;

const Eigen::Matrix3d& rgb_to_lms() {
  static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 0.3811, 0.5783, 0.0402,  //
                                    0.1967, 0.7244, 0.0782,                      //
                                    0.0241, 0.1288, 0.8444)
                                       .finished();
  return m;
}

const Eigen::Matrix3d& lms_to_lab() {
  static const Eigen::Matrix3d m = [] {
    Eigen::Matrix3d mix;
    mix << 1.0, 1.0, 1.0,  //
        1.0, 1.0, -2.0,    //
        1.0, -1.0, 0.0;
    const Eigen::Vector3d scale(1.0 / std::sqrt(3.0), 1.0 / std::sqrt(6.0), 1.0 / std::sqrt(2.0));
    return Eigen::Matrix3d(scale.asDiagonal() * mix);
  }();
  return m;
}

void require_rgb(const Image& im, const char* what) {
  if (im.channels != 3) throw ShapeError(std::string(what) + ": expected a 3-channel image");
}

}  // namespace

void StainTarget::validate() const {
  for (int c = 0; c < 3; ++c) {
    if (!std::isfinite(means[c]) || !std::isfinite(stds[c])) throw InvalidArgument("stain target is not finite");
    if (!(stds[c] > 0.0)) throw InvalidArgument("stain target standard deviations must be positive");
  }
}

void StainTarget::save(const std::filesystem::path& path) const {
  validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write stain target to " + path.string());
  out.precision(17);
  out << means[0] << ' ' << means[1] << ' ' << means[2] << ' ' << stds[0] << ' ' << stds[1] << ' ' << stds[2]
      << '\n';
}

StainTarget StainTarget::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read stain target from " + path.string());
  StainTarget t;
  if (!(in >> t.means[0] >> t.means[1] >> t.means[2] >> t.stds[0] >> t.stds[1] >> t.stds[2]))
    throw IoError(path.string() + ": expected six numbers");
  t.validate();
  return t;
}

Image rgb_to_lab(const Image& rgb) {
  require_rgb(rgb, "rgb_to_lab");
  const Eigen::Matrix3d& a = rgb_to_lms();
  const Eigen::Matrix3d& b = lms_to_lab();
  Image lab(3, rgb.height, rgb.width);
  const std::size_t n = rgb.plane_size();
  for (std::size_t p = 0; p < n; ++p) {
    const Eigen::Vector3d v(rgb.plane(0)[p], rgb.plane(1)[p], rgb.plane(2)[p]);
    Eigen::Vector3d lms = a * v;
    for (int c = 0; c < 3; ++c) lms[c] = std::log10(std::max(lms[c], 0.0) + kLogOffset);
    const Eigen::Vector3d out = b * lms;
    for (int c = 0; c < 3; ++c) lab.plane(c)[p] = out[c];
  }
  return lab;
}

Image lab_to_rgb(const Image& lab) {
  require_rgb(lab, "lab_to_rgb");
  static const Eigen::Matrix3d lab_inv = lms_to_lab().inverse();
  static const Eigen::Matrix3d lms_inv = rgb_to_lms().inverse();
  Image rgb(3, lab.height, lab.width);
  const std::size_t n = lab.plane_size();
  for (std::size_t p = 0; p < n; ++p) {
    const Eigen::Vector3d v(lab.plane(0)[p], lab.plane(1)[p], lab.plane(2)[p]);
    Eigen::Vector3d lms = lab_inv * v;
    for (int c = 0; c < 3; ++c) lms[c] = std::pow(10.0, lms[c]) - kLogOffset;
    const Eigen::Vector3d out = lms_inv * lms;
    for (int c = 0; c < 3; ++c) rgb.plane(c)[p] = out[c];
  }
  return rgb;
}

StainTarget lab_statistics(const Image& lab) {
  require_rgb(lab, "lab_statistics");
  StainTarget t;
  const std::size_t n = lab.plane_size();
  if (n == 0) throw DegenerateImage("empty image has no colour statistics");
  for (int c = 0; c < 3; ++c) {
    const double* p = lab.plane(c);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    const double mean = s / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (p[i] - mean) * (p[i] - mean);
    t.means[c] = mean;
    t.stds[c] = std::sqrt(ss / static_cast<double>(n));
  }
  return t;
}

namespace {

// Exact test; the rounded std of a constant channel can be a tiny positive number.
bool is_constant(const Image& img, int c) {
  const double* p = img.plane(c);
  return std::all_of(p, p + img.plane_size(), [&](double v) { return v == p[0]; });
}

}  // namespace

StainTarget stain_target_from(const Image& rgb) {
  const Image lab = rgb_to_lab(rgb);
  StainTarget t = lab_statistics(lab);
  for (int c = 0; c < 3; ++c)
    if (is_constant(lab, c) || !(t.stds[c] > 0.0))
      throw DegenerateImage("reference image has a constant colour channel");
  return t;
}

Image reinhard_transfer_lab(const Image& rgb, const StainTarget& target) {
  target.validate();
  for (double v : rgb.data)
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("reinhard_normalize: intensities must lie in [0,1]");
  Image lab = rgb_to_lab(rgb);
  const StainTarget source = lab_statistics(lab);
  for (int c = 0; c < 3; ++c) {
    if (is_constant(lab, c) || !(source.stds[c] > 0.0))
      throw DegenerateImage("reinhard_normalize: source channel " + std::to_string(c) + " has zero variance");
  }
  const std::size_t n = lab.plane_size();
  for (int c = 0; c < 3; ++c) {
    double* p = lab.plane(c);
    const double scale = target.stds[c] / source.stds[c];
    for (std::size_t i = 0; i < n; ++i) p[i] = (p[i] - source.means[c]) * scale + target.means[c];
  }
  return lab;
}

Image reinhard_normalize(const Image& rgb, const StainTarget& target) {
  Image out = lab_to_rgb(reinhard_transfer_lab(rgb, target));
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

void PatchSpec::validate() const {
  if (crop_size != 252 && crop_size != 508)
    throw InvalidArgument("crop size must be 252 or 508, got " + std::to_string(crop_size));
  if (crop_size >= sample_size)
    throw InvalidArgument("crop size " + std::to_string(crop_size) + " must be smaller than sample size " +
                          std::to_string(sample_size));
}

PatchSpec PatchSpec::for_crop(int crop_size) {
  PatchSpec s;
  s.crop_size = crop_size;
  s.sample_size = crop_size == 508 ? 600 : 300;
  return s;
}

int mirror_index(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

ImageSample pad_symmetric(const ImageSample& sample, int min_size) {
  if (min_size <= 0) throw InvalidArgument("pad_symmetric: min_size must be positive");
  const Image& src = sample.channels;
  const int h = std::max(src.height, min_size);
  const int w = std::max(src.width, min_size);
  if (h == src.height && w == src.width) return sample;
  ImageSample out;
  out.id = sample.id;
  out.modality = sample.modality;
  out.channels = Image(src.channels, h, w);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < h; ++y) {
      const int sy = mirror_index(y, src.height);
      for (int x = 0; x < w; ++x) out.channels.at(c, y, x) = src.at(c, sy, mirror_index(x, src.width));
    }
  if (sample.truth) {
    const InstanceMask& t = *sample.truth;
    InstanceMask padded(h, w);
    for (int y = 0; y < h; ++y) {
      const int sy = mirror_index(y, t.height);
      for (int x = 0; x < w; ++x) padded.at(y, x) = t.at(sy, mirror_index(x, t.width));
    }
    out.truth = std::move(padded);
  }
  return out;
}

namespace {

Patch crop(const ImageSample& sample, int top, int left, int size) {
  Patch p;
  p.top = top;
  p.left = left;
  const Image& src = sample.channels;
  p.image = Image(src.channels, size, size);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < size; ++y)
      std::copy_n(src.plane(c) + static_cast<std::size_t>(top + y) * src.width + left, size, &p.image.at(c, y, 0));
  if (sample.truth) {
    p.truth = InstanceMask(size, size);
    for (int y = 0; y < size; ++y)
      std::copy_n(sample.truth->labels.data() + static_cast<std::size_t>(top + y) * sample.truth->width + left, size,
                  &p.truth.at(y, 0));
  }
  return p;
}

}  // namespace

Patch sample_patch(const ImageSample& sample, const PatchSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Image& src = sample.channels;
  if (src.height < spec.sample_size || src.width < spec.sample_size) {
    std::ostringstream msg;
    msg << "sample '" << sample.id << "' is " << src.height << "x" << src.width << ", smaller than the "
        << spec.sample_size << " sampling window; pad it first";
    throw ShapeError(msg.str());
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ys(0, src.height - spec.sample_size);
  std::uniform_int_distribution<int> xs(0, src.width - spec.sample_size);
  const int wy = ys(rng);
  const int wx = xs(rng);
  const int offset = (spec.sample_size - spec.crop_size) / 2;
  return crop(sample, wy + offset, wx + offset, spec.crop_size);
}

std::vector<Patch> tile_patches(const ImageSample& sample, int crop_size) {
  if (crop_size <= 0) throw InvalidArgument("tile size must be positive");
  const Image& src = sample.channels;
  const int rows = (src.height + crop_size - 1) / crop_size;
  const int cols = (src.width + crop_size - 1) / crop_size;
  const ImageSample padded = pad_symmetric(sample, std::max(rows, cols) * crop_size);
  std::vector<Patch> tiles;
  tiles.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) tiles.push_back(crop(padded, r * crop_size, c * crop_size, crop_size));
  return tiles;
}

}  // namespace micronet::preprocess
