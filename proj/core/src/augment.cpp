#include "micronet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "micronet/errors.hpp"
#include "micronet/preprocess.hpp"
#include "micronet/random.hpp"

namespace micronet::augment {

using preprocess::mirror_index;

namespace {

void check_truth(const Image& image, const InstanceMask& truth) {
  if (truth.size() == 0) return;
  if (truth.height != image.height || truth.width != image.width)
    throw ShapeError("truth and image sizes differ");
}

void check_range(const std::array<double, 2>& r, const char* what) {
  if (!std::isfinite(r[0]) || !std::isfinite(r[1]) || r[0] > r[1])
    throw InvalidArgument(std::string(what) + ": range must be finite with lo <= hi");
}

double draw_uniform(std::mt19937_64& rng, const std::array<double, 2>& range) {
  if (range[0] == range[1]) return range[0];
  return std::uniform_real_distribution<double>(range[0], range[1])(rng);
}

template <typename MapFn>
Sample remap_exact(const Image& image, const InstanceMask& truth, int out_h, int out_w, MapFn map) {
  Image out(image.channels, out_h, out_w);
  InstanceMask out_truth;
  const bool has_truth = truth.size() != 0;
  if (has_truth) out_truth = InstanceMask(out_h, out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const auto [sy, sx] = map(y, x);
      for (int c = 0; c < image.channels; ++c) out.at(c, y, x) = image.at(c, sy, sx);
      if (has_truth) out_truth.at(y, x) = truth.at(sy, sx);
    }
  return {std::move(out), std::move(out_truth)};
}

}  // namespace

DistortionKind parse_distortion_kind(const std::string& name) {
  if (name == "barrel") return DistortionKind::barrel;
  if (name == "pincushion") return DistortionKind::pincushion;
  if (name == "moustache") return DistortionKind::moustache;
  throw InvalidArgument("unknown distortion kind '" + name + "'");
}

std::string to_string(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::barrel: return "barrel";
    case DistortionKind::pincushion: return "pincushion";
    case DistortionKind::moustache: return "moustache";
  }
  return "?";
}

double DistortionParams::min_radial_slope() const {
  // d/dr [r (1 + k1 r^2 + k2 r^4)] = 1 + 3 k1 u + 5 k2 u^2 with u = r^2 in [0, 1].
  auto slope = [&](double u) { return 1.0 + 3.0 * k1 * u + 5.0 * k2 * u * u; };
  double m = std::min(slope(0.0), slope(1.0));
  if (k2 != 0.0) {
    const double u = -3.0 * k1 / (10.0 * k2);
    if (u > 0.0 && u < 1.0) m = std::min(m, slope(u));
  }
  return m;
}

void DistortionParams::validate() const {
  if (!std::isfinite(k1) || !std::isfinite(k2)) throw InvalidArgument("distortion coefficients must be finite");
  if (std::abs(k1) > max_abs_k1 || std::abs(k2) > max_abs_k2)
    throw InvalidArgument("distortion coefficients exceed the realistic caps |k1| <= 0.2, |k2| <= 0.1");
  const bool identity = k1 == 0.0 && k2 == 0.0;
  if (!identity) {
    switch (kind) {
      case DistortionKind::barrel:
        if (!(k1 < 0.0 && k2 == 0.0)) throw InvalidArgument("barrel distortion needs k1 < 0 and k2 = 0");
        break;
      case DistortionKind::pincushion:
        if (!(k1 > 0.0 && k2 == 0.0)) throw InvalidArgument("pincushion distortion needs k1 > 0 and k2 = 0");
        break;
      case DistortionKind::moustache:
        if (!(k1 * k2 < 0.0)) throw InvalidArgument("moustache distortion needs k1 and k2 of opposite sign");
        break;
    }
  }
  if (!(min_radial_slope() > 0.0)) throw InvalidArgument("distortion folds: radius map is not monotone");
}

std::array<double, 2> distortion_source(const DistortionParams& params, int height, int width, double y,
                                        double x) {
  const double cy = (height - 1) / 2.0;
  const double cx = (width - 1) / 2.0;
  const double radius = std::sqrt(cy * cy + cx * cx);
  if (radius == 0.0) return {y, x};
  const double dy = y - cy;
  const double dx = x - cx;
  const double r2 = (dy * dy + dx * dx) / (radius * radius);
  const double s = 1.0 + params.k1 * r2 + params.k2 * r2 * r2;
  return {cy + dy * s, cx + dx * s};
}

Sample distort(const Image& image, const InstanceMask& truth, const DistortionParams& params) {
  params.validate();
  check_truth(image, truth);
  const int h = image.height;
  const int w = image.width;
  Image out(image.channels, h, w);
  const bool has_truth = truth.size() != 0;
  InstanceMask out_truth;
  if (has_truth) out_truth = InstanceMask(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto [sy, sx] = distortion_source(params, h, w, y, x);
      const double fy = std::floor(sy);
      const double fx = std::floor(sx);
      const double ty = sy - fy;
      const double tx = sx - fx;
      const int y0 = mirror_index(static_cast<int>(fy), h);
      const int y1 = mirror_index(static_cast<int>(fy) + 1, h);
      const int x0 = mirror_index(static_cast<int>(fx), w);
      const int x1 = mirror_index(static_cast<int>(fx) + 1, w);
      for (int c = 0; c < image.channels; ++c) {
        const double top = (1.0 - tx) * image.at(c, y0, x0) + tx * image.at(c, y0, x1);
        const double bottom = (1.0 - tx) * image.at(c, y1, x0) + tx * image.at(c, y1, x1);
        out.at(c, y, x) = (1.0 - ty) * top + ty * bottom;
      }
      if (has_truth) {
        const int ny = mirror_index(static_cast<int>(std::floor(sy + 0.5)), h);
        const int nx = mirror_index(static_cast<int>(std::floor(sx + 0.5)), w);
        out_truth.at(y, x) = truth.at(ny, nx);
      }
    }
  return {std::move(out), std::move(out_truth)};
}

void NoiseParams::validate() const {
  if (!std::isfinite(mean)) throw InvalidArgument("noise mean must be finite");
  check_range(variance_range, "noise variance");
  if (!(variance_range[0] > 0.0)) throw InvalidArgument("noise variance must be positive");
}

Image add_noise_unclipped(const Image& image, const NoiseParams& params, std::uint64_t seed) {
  params.validate();
  std::mt19937_64 rng(seed);
  const double variance = draw_uniform(rng, params.variance_range);
  std::normal_distribution<double> noise(params.mean, std::sqrt(variance));
  Image out = image;
  for (double& v : out.data) v += noise(rng);
  return out;
}

Image add_noise(const Image& image, const NoiseParams& params, std::uint64_t seed) {
  Image out = add_noise_unclipped(image, params, seed);
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

double signal_power(const Image& image) {
  if (image.data.empty()) return 0.0;
  double s = 0.0;
  for (double v : image.data) s += v * v;
  return s / static_cast<double>(image.data.size());
}

double noise_variance_for_snr(const Image& image, double snr_db) {
  if (std::isnan(snr_db)) throw InvalidArgument("SNR must be a number");
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  if (std::isinf(snr_db)) throw InvalidArgument("SNR of -inf dB is undefined");
  const double power = signal_power(image);
  if (!(power > 0.0)) throw DegenerateImage("cannot set an SNR on a zero-power image");
  return power / std::pow(10.0, snr_db / 10.0);
}

Image add_noise_at_snr_unclipped(const Image& image, double snr_db, std::uint64_t seed) {
  const double variance = noise_variance_for_snr(image, snr_db);
  if (variance == 0.0) return image;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, std::sqrt(variance));
  Image out = image;
  for (double& v : out.data) v += noise(rng);
  return out;
}

Image add_noise_at_snr(const Image& image, double snr_db, std::uint64_t seed) {
  Image out = add_noise_at_snr_unclipped(image, snr_db, seed);
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

void BlurParams::validate() const {
  if (kernel_size < 3) throw InvalidArgument("blur kernel size must be at least 3");
  check_range(sigma_range, "blur sigma");
  if (!(sigma_range[0] > 0.0) || !(sigma_range[1] < kernel_size))
    throw InvalidArgument("blur sigma range must lie within (0, kernel_size)");
}

namespace {

std::vector<double> gaussian_taps(int size, double sigma) {
  if (size < 1) throw InvalidArgument("kernel size must be positive");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be positive");
  std::vector<double> g(static_cast<std::size_t>(size));
  const double centre = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double t = i - centre;
    g[i] = std::exp(-t * t / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

}  // namespace

std::vector<double> gaussian_kernel(int size, double sigma) {
  const std::vector<double> g = gaussian_taps(size, sigma);
  std::vector<double> k(static_cast<std::size_t>(size) * size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) k[static_cast<std::size_t>(i) * size + j] = g[i] * g[j];
  return k;
}

Image blur_with_sigma(const Image& image, int kernel_size, double sigma) {
  const std::vector<double> g = gaussian_taps(kernel_size, sigma);
  const int anchor = (kernel_size - 1) / 2;
  const int h = image.height;
  const int w = image.width;
  Image tmp(image.channels, h, w);
  Image out(image.channels, h, w);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int j = 0; j < kernel_size; ++j) s += g[j] * image.at(c, y, mirror_index(x + j - anchor, w));
        tmp.at(c, y, x) = s;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0.0;
        for (int i = 0; i < kernel_size; ++i) s += g[i] * tmp.at(c, mirror_index(y + i - anchor, h), x);
        out.at(c, y, x) = std::clamp(s, 0.0, 1.0);
      }
  }
  return out;
}

Image blur(const Image& image, const BlurParams& params, std::uint64_t seed) {
  params.validate();
  std::mt19937_64 rng(seed);
  return blur_with_sigma(image, params.kernel_size, draw_uniform(rng, params.sigma_range));
}

Sample flip_rotate(const Image& image, const InstanceMask& truth, FlipOp op) {
  check_truth(image, truth);
  const int h = image.height;
  const int w = image.width;
  switch (op) {
    case FlipOp::none: return {image, truth};
    case FlipOp::lr:
      return remap_exact(image, truth, h, w, [&](int y, int x) { return std::pair{y, w - 1 - x}; });
    case FlipOp::ud:
      return remap_exact(image, truth, h, w, [&](int y, int x) { return std::pair{h - 1 - y, x}; });
    case FlipOp::rot180:
      return remap_exact(image, truth, h, w, [&](int y, int x) { return std::pair{h - 1 - y, w - 1 - x}; });
    case FlipOp::rot90:
      return remap_exact(image, truth, w, h, [&](int y, int x) { return std::pair{x, w - 1 - y}; });
    case FlipOp::rot270:
      return remap_exact(image, truth, w, h, [&](int y, int x) { return std::pair{h - 1 - x, y}; });
  }
  throw InvalidArgument("unknown flip/rotate op");
}

void Recipe::validate() const {
  check_range(k1_magnitude, "k1 magnitude");
  check_range(k2_magnitude, "k2 magnitude");
  if (k1_magnitude[0] < 0.0 || k2_magnitude[0] < 0.0) throw InvalidArgument("distortion magnitudes must be >= 0");
  noise_params.validate();
  blur_params.validate();
  if (!(probability >= 0.0 && probability <= 1.0)) throw InvalidArgument("augment probability must be in [0,1]");
  if (distortion) {
    // The extreme corners of the ranges must not fold.
    for (double a : k1_magnitude)
      for (double b : k2_magnitude) {
        DistortionParams{DistortionKind::barrel, -a, 0.0}.validate();
        DistortionParams{DistortionKind::pincushion, a, 0.0}.validate();
        if (a > 0.0 && b > 0.0) {
          DistortionParams{DistortionKind::moustache, -a, b}.validate();
          DistortionParams{DistortionKind::moustache, a, -b}.validate();
        }
      }
  }
}

Recipe Recipe::for_modality(Modality modality) {
  Recipe r;
  r.noise = modality == Modality::fluorescence;
  r.blur = modality == Modality::he_rgb;
  return r;
}

DistortionParams draw_distortion(const Recipe& recipe, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto kind = static_cast<DistortionKind>(std::uniform_int_distribution<int>(0, 2)(rng));
  const double a = draw_uniform(rng, recipe.k1_magnitude);
  const double b = draw_uniform(rng, recipe.k2_magnitude);
  const bool positive = std::bernoulli_distribution(0.5)(rng);
  switch (kind) {
    case DistortionKind::barrel: return {kind, -a, 0.0};
    case DistortionKind::pincushion: return {kind, a, 0.0};
    case DistortionKind::moustache: return {kind, positive ? a : -a, positive ? -b : b};
  }
  return {};
}

Sample apply(const Recipe& recipe, const Image& image, const InstanceMask& truth, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution fire(recipe.probability);
  Sample s{image, truth};
  if (recipe.flip_rotate && fire(rng)) {
    const auto op = all_flip_ops[std::uniform_int_distribution<std::size_t>(1, all_flip_ops.size() - 1)(rng)];
    s = flip_rotate(s.first, s.second, op);
  }
  if (recipe.distortion && fire(rng)) s = distort(s.first, s.second, draw_distortion(recipe, mix_seed(seed, 1)));
  if (recipe.noise && fire(rng)) s.first = add_noise(s.first, recipe.noise_params, mix_seed(seed, 2));
  if (recipe.blur && fire(rng)) s.first = blur(s.first, recipe.blur_params, mix_seed(seed, 3));
  return s;
}

}  // namespace micronet::augment
