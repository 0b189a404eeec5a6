#include "micronet/dataset_io.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <numbers>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <random>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "micronet/errors.hpp"
#include "micronet/random.hpp"

namespace micronet::io {

namespace fs = std::filesystem;

namespace {

std::string shape_str(int h, int w, int c) {
  std::ostringstream s;
  s << h << "x" << w << "x" << c;
  return s.str();
}

bool is_tiff(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".tif" || ext == ".tiff";
}

std::vector<cv::Mat> read_pages(const fs::path& path) {
  if (!fs::exists(path)) throw IoError(path.string() + ": no such file");
  std::vector<cv::Mat> pages;
  if (is_tiff(path)) {
    if (!cv::imreadmulti(path.string(), pages, cv::IMREAD_UNCHANGED)) pages.clear();
  } else {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (!m.empty()) pages.push_back(m);
  }
  if (pages.empty()) throw IoError(path.string() + ": cannot decode raster");
  return pages;
}

double depth_max(const cv::Mat& m, const fs::path& path) {
  switch (m.depth()) {
    case CV_8U: return 255.0;
    case CV_16U: return 65535.0;
    case CV_32F:
    case CV_64F: return 1.0;
    default: throw IoError(path.string() + ": unsupported pixel depth (expected 8/16-bit or float)");
  }
}

// Appends every channel of `m` as planes of `out`, in RGB order for colour rasters.
void append_planes(const cv::Mat& m, const fs::path& path, std::vector<std::vector<double>>& planes) {
  const double scale = 1.0 / depth_max(m, path);
  cv::Mat f;
  m.convertTo(f, CV_64F, scale);
  std::vector<cv::Mat> split;
  cv::split(f, split);
  if (split.size() >= 3) std::swap(split[0], split[2]);  // BGR(A) -> RGB(A)
  for (const cv::Mat& p : split) {
    std::vector<double> plane(static_cast<std::size_t>(p.rows) * p.cols);
    for (int y = 0; y < p.rows; ++y) std::copy_n(p.ptr<double>(y), p.cols, plane.data() + static_cast<std::size_t>(y) * p.cols);
    planes.push_back(std::move(plane));
  }
}

std::optional<fs::path> mask_sibling(const fs::path& image) {
  for (const char* ext : {".png", ".tif", ".tiff"}) {
    fs::path p = image.parent_path() / (image.stem().string() + "_mask" + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

void min_max(Image& im) {
  for (int c = 0; c < im.channels; ++c) {
    double* p = im.plane(c);
    const auto [lo, hi] = std::minmax_element(p, p + im.plane_size());
    const double a = *lo;
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < im.plane_size(); ++i) p[i] = range > 0.0 ? (p[i] - a) / range : 0.0;
  }
}

cv::Mat to_u16(const double* plane, int h, int w) {
  cv::Mat m(h, w, CV_16UC1);
  for (int y = 0; y < h; ++y) {
    auto* row = m.ptr<std::uint16_t>(y);
    for (int x = 0; x < w; ++x) {
      const double v = std::clamp(plane[static_cast<std::size_t>(y) * w + x], 0.0, 1.0);
      row[x] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    }
  }
  return m;
}

}  // namespace

InstanceMask read_labels(const fs::path& path) {
  const std::vector<cv::Mat> pages = read_pages(path);
  const cv::Mat& m = pages.front();
  if (m.channels() != 1)
    throw IoError(path.string() + ": label raster must have 1 channel, got " + std::to_string(m.channels()));
  if (m.depth() != CV_8U && m.depth() != CV_16U) throw IoError(path.string() + ": label raster must be 8 or 16 bit");
  cv::Mat l;
  m.convertTo(l, CV_32S);
  InstanceMask out(l.rows, l.cols);
  for (int y = 0; y < l.rows; ++y) std::copy_n(l.ptr<std::int32_t>(y), l.cols, &out.at(y, 0));
  return out;
}

void write_labels(const InstanceMask& mask, const fs::path& path) {
  cv::Mat m(mask.height, mask.width, CV_16UC1);
  for (int y = 0; y < mask.height; ++y) {
    auto* row = m.ptr<std::uint16_t>(y);
    for (int x = 0; x < mask.width; ++x) {
      const auto v = mask.at(y, x);
      if (v < 0 || v > 65535) throw IoError(path.string() + ": label " + std::to_string(v) + " does not fit 16 bits");
      row[x] = static_cast<std::uint16_t>(v);
    }
  }
  if (!cv::imwrite(path.string(), m)) throw IoError(path.string() + ": cannot write label raster");
}

ImageSample load_sample(const fs::path& path, Modality modality, Scaling scaling) {
  const std::vector<cv::Mat> pages = read_pages(path);
  std::vector<std::vector<double>> planes;
  for (const cv::Mat& m : pages) {
    if (m.size() != pages.front().size())
      throw IoError(path.string() + ": pages differ in size");
    append_planes(m, path, planes);
  }
  const int expected = channel_count(modality);
  const int h = pages.front().rows;
  const int w = pages.front().cols;
  if (static_cast<int>(planes.size()) != expected) {
    throw ShapeError(path.string() + ": " + to_string(modality) + " expects " + shape_str(h, w, expected) +
                     ", got " + shape_str(h, w, static_cast<int>(planes.size())));
  }
  ImageSample s;
  s.id = path.stem().string();
  s.modality = modality;
  s.channels = Image(expected, h, w);
  for (int c = 0; c < expected; ++c) std::copy(planes[c].begin(), planes[c].end(), s.channels.plane(c));
  if (scaling == Scaling::min_max || (scaling == Scaling::automatic && modality == Modality::fluorescence))
    min_max(s.channels);
  for (double& v : s.channels.data)
    if (!std::isfinite(v)) throw IoError(path.string() + ": non-finite intensity");
    else v = std::clamp(v, 0.0, 1.0);
  if (const auto mp = mask_sibling(path)) {
    InstanceMask t = read_labels(*mp);
    if (t.height != h || t.width != w)
      throw ShapeError(mp->string() + ": truth is " + shape_str(t.height, t.width, 1) + " but raster " +
                       path.string() + " is " + shape_str(h, w, expected));
    s.truth = canonicalize(t);
  }
  return s;
}

fs::path save_sample(const ImageSample& sample, const fs::path& dir) {
  sample.validate();
  if (sample.id.empty()) throw InvalidArgument("sample id is empty");
  fs::create_directories(dir);
  const Image& im = sample.channels;
  fs::path out;
  if (sample.modality == Modality::fluorescence) {
    out = dir / (sample.id + ".tif");
    std::vector<cv::Mat> pages;
    for (int c = 0; c < im.channels; ++c) pages.push_back(to_u16(im.plane(c), im.height, im.width));
    if (!cv::imwritemulti(out.string(), pages)) throw IoError(out.string() + ": cannot write TIFF");
  } else {
    out = dir / (sample.id + ".png");
    std::vector<cv::Mat> bgr{to_u16(im.plane(2), im.height, im.width), to_u16(im.plane(1), im.height, im.width),
                             to_u16(im.plane(0), im.height, im.width)};
    cv::Mat m;
    cv::merge(bgr, m);
    if (!cv::imwrite(out.string(), m)) throw IoError(out.string() + ": cannot write PNG");
  }
  if (sample.truth) write_labels(*sample.truth, dir / (sample.id + "_mask.png"));
  return out;
}

DatasetSplit make_split(const std::vector<std::string>& ids, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw InvalidArgument("validation fraction must lie in [0, 1)");
  if (ids.empty()) throw InvalidArgument("cannot split an empty id list");
  std::set<std::string> seen;
  for (const auto& id : ids)
    if (!seen.insert(id).second) throw InvalidArgument("duplicate sample id '" + id + "'");
  const std::size_t n = ids.size();
  const auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  DatasetSplit s;
  s.seed = seed;
  for (std::size_t i = 0; i < n; ++i) (is_val[i] ? s.validation : s.train).push_back(ids[i]);
  return s;
}

void SynthOptions::validate() const {
  if (n_images < 1) throw InvalidArgument("synth: n_images must be >= 1");
  if (size < 64) throw InvalidArgument("synth: size must be >= 64");
  if (!(density > 0.0 && density <= 1.0)) throw InvalidArgument("synth: density must lie in (0, 1]");
  if (min_objects < 0) throw InvalidArgument("synth: min_objects must be >= 0");
}

namespace {

struct Cell {
  double cy, cx, a, b, cos_t, sin_t;
  double ny, nx, na, nb;  // nucleus centre and semi-axes
  double rim, cyto, nucleus;  // brightness jitter
};

// Normalised elliptical radius of (y, x) for an ellipse with the given frame.
double rho(double y, double x, double cy, double cx, double a, double b, double c, double s) {
  const double dy = y - cy;
  const double dx = x - cx;
  const double u = dx * c + dy * s;
  const double v = -dx * s + dy * c;
  return std::sqrt((u * u) / (a * a) + (v * v) / (b * b));
}

ImageSample synth_one(const SynthOptions& opt, int index) {
  std::mt19937_64 rng(mix_seed(opt.seed, static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = opt.size;
  const double a_lo = 0.045 * n;
  const double a_hi = 0.075 * n;
  const double mean_a = 0.5 * (a_lo + a_hi);
  const double mean_area = std::numbers::pi * mean_a * (0.8 * mean_a);
  const int target = std::max(opt.min_objects,
                              static_cast<int>(std::lround(opt.density * n * n / mean_area)));
  InstanceMask truth(n, n);
  std::vector<Cell> cells;
  const int max_attempts = 200 * std::max(target, 1);
  std::vector<std::size_t> pixels;
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(cells.size()) < target; ++attempt) {
    Cell c{};
    c.a = a_lo + (a_hi - a_lo) * unit(rng);
    c.b = c.a * (0.6 + 0.4 * unit(rng));
    const double theta = std::numbers::pi * unit(rng);
    c.cos_t = std::cos(theta);
    c.sin_t = std::sin(theta);
    c.cy = c.a + (n - 1 - 2 * c.a) * unit(rng);
    c.cx = c.a + (n - 1 - 2 * c.a) * unit(rng);
    const double off = 0.25 * c.b * unit(rng);
    const double phi = 2.0 * std::numbers::pi * unit(rng);
    c.ny = c.cy + off * std::sin(phi);
    c.nx = c.cx + off * std::cos(phi);
    c.na = 0.4 * c.a;
    c.nb = 0.4 * c.b;
    c.rim = 0.6 + 0.3 * unit(rng);
    c.cyto = 0.12 + 0.08 * unit(rng);
    c.nucleus = 0.5 + 0.4 * unit(rng);
    pixels.clear();
    int overlap = 0;
    const int y0 = std::max(0, static_cast<int>(std::floor(c.cy - c.a)));
    const int y1 = std::min(n - 1, static_cast<int>(std::ceil(c.cy + c.a)));
    const int x0 = std::max(0, static_cast<int>(std::floor(c.cx - c.a)));
    const int x1 = std::min(n - 1, static_cast<int>(std::ceil(c.cx + c.a)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (rho(y, x, c.cy, c.cx, c.a, c.b, c.cos_t, c.sin_t) <= 1.0) {
          if (truth.at(y, x) != 0) ++overlap;
          else pixels.push_back(static_cast<std::size_t>(y) * n + x);
        }
    // A sliver of overlap makes neighbours touch; more than that is rejected.
    if (overlap > 0.08 * static_cast<double>(pixels.size() + overlap)) continue;
    cells.push_back(c);
    const auto id = static_cast<std::int32_t>(cells.size());
    for (std::size_t p : pixels) truth.labels[p] = id;
  }
  if (static_cast<int>(cells.size()) < target) {
    std::ostringstream msg;
    msg << "synth: density " << opt.density << " is infeasible at size " << n << "; placed "
        << cells.size() << " of " << target << " cells";
    throw Error(msg.str());
  }

  ImageSample s;
  s.id = "synth_" + std::string(index < 10 ? "00" : index < 100 ? "0" : "") + std::to_string(index);
  s.modality = opt.modality;
  std::normal_distribution<double> grain(0.0, 0.01);
  const bool he = opt.modality == Modality::he_rgb;
  s.channels = Image(channel_count(opt.modality), n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const auto id = truth.at(y, x);
      double membrane = 0.04;
      double nuclear = 0.02;
      double cyto = 0.0;
      if (id > 0) {
        const Cell& c = cells[id - 1];
        const double r = rho(y, x, c.cy, c.cx, c.a, c.b, c.cos_t, c.sin_t);
        const bool on_rim = r >= 1.0 - 2.5 / c.b;
        membrane = on_rim ? c.rim : c.cyto;
        cyto = 1.0;
        const double rn = rho(y, x, c.ny, c.nx, c.na, c.nb, c.cos_t, c.sin_t);
        if (rn <= 1.0) nuclear = c.nucleus * (1.0 - 0.3 * rn * rn);
      }
      if (!he) {
        s.channels.at(0, y, x) = std::clamp(membrane + grain(rng), 0.0, 1.0);
        s.channels.at(1, y, x) = std::clamp(nuclear + grain(rng), 0.0, 1.0);
      } else {
        // Background, eosin-stained cytoplasm, darker rim, haematoxylin nuclei.
        double rgb[3] = {0.94, 0.90, 0.93};
        if (cyto > 0.0) {
          const double rim = membrane > 0.5 ? 0.1 : 0.0;
          rgb[0] = 0.88 - rim;
          rgb[1] = 0.58 - rim;
          rgb[2] = 0.74 - rim;
        }
        if (nuclear > 0.1) {
          const double t = std::min(1.0, nuclear);
          rgb[0] = rgb[0] * (1 - t) + 0.30 * t;
          rgb[1] = rgb[1] * (1 - t) + 0.20 * t;
          rgb[2] = rgb[2] * (1 - t) + 0.52 * t;
        }
        for (int ch = 0; ch < 3; ++ch) s.channels.at(ch, y, x) = std::clamp(rgb[ch] + grain(rng), 0.0, 1.0);
      }
    }
  s.truth = canonicalize(truth);
  return s;
}

}  // namespace

std::vector<ImageSample> synth_dataset(const SynthOptions& options) {
  options.validate();
  std::vector<ImageSample> out;
  out.reserve(options.n_images);
  for (int i = 0; i < options.n_images; ++i) out.push_back(synth_one(options, i));
  return out;
}

DatasetSplit Manifest::split() const {
  DatasetSplit s;
  for (const auto& e : entries) {
    if (e.split == "train") s.train.push_back(e.id);
    else if (e.split == "validation") s.validation.push_back(e.id);
    else if (e.split == "test") s.test.push_back(e.id);
    else throw InvalidArgument("manifest: sample '" + e.id + "' has unknown split '" + e.split + "'");
  }
  return s;
}

const ManifestEntry& Manifest::entry(const std::string& id) const {
  for (const auto& e : entries)
    if (e.id == id) return e;
  throw InvalidArgument("manifest has no sample '" + id + "'");
}

Manifest read_manifest(const fs::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw IoError("manifest " + path.string() + ": " + e.what());
  }
  Manifest m;
  const auto dataset = tree.get_child_optional("dataset");
  if (!dataset) throw IoError("manifest " + path.string() + ": missing [dataset] section");
  m.modality = parse_modality(dataset->get<std::string>("modality", "fluorescence"));
  const auto images = tree.get_child_optional("images");
  if (!images || images->empty()) throw IoError("manifest " + path.string() + ": no [images] entries");
  const auto splits = tree.get_child_optional("split");
  const fs::path base = path.parent_path();
  for (const auto& [id, value] : *images) {
    ManifestEntry e;
    e.id = id;
    const fs::path p = value.data();
    e.image = p.is_absolute() ? p : base / p;
    e.split = "train";
    if (splits) {
      if (const auto it = splits->find(id); it != splits->not_found()) e.split = it->second.data();
    }
    m.entries.push_back(std::move(e));
  }
  m.split();  // rejects unknown split names early
  return m;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  std::set<std::string> seen;
  std::ostringstream out;
  out << "[dataset]\nmodality = " << to_string(manifest.modality) << "\n\n[images]\n";
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  for (const auto& e : manifest.entries) {
    if (!seen.insert(e.id).second) throw InvalidArgument("manifest: duplicate id '" + e.id + "'");
    fs::path rel = e.image.lexically_proximate(base);
    out << e.id << " = " << rel.generic_string() << "\n";
  }
  out << "\n[split]\n";
  for (const auto& e : manifest.entries) out << e.id << " = " << e.split << "\n";
  std::ofstream f(path);
  if (!f) throw IoError("cannot write manifest " + path.string());
  f << out.str();
}

}  // namespace micronet::io
