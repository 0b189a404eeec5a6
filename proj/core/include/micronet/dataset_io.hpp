#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "micronet/image.hpp"

namespace micronet::io {

/// How raw integer intensities become [0,1] values.
enum class Scaling {
  automatic,  // min_max for fluorescence, native for H&E
  native,     // divide by the bit-depth maximum
  min_max,    // per-channel min-max (a constant channel maps to 0)
};

/// Fluorescence: 2-page TIFF (membrane, nuclear). H&E: 3-channel PNG/TIFF.
/// Truth is read from `<stem>_mask.{png,tif,tiff}` beside the image, when present,
/// and canonicalised.
ImageSample load_sample(const std::filesystem::path& path, Modality modality, Scaling scaling = Scaling::automatic);

/// Writes `<dir>/<id>.tif` (fluorescence) or `<dir>/<id>.png` (H&E) at 16 bits,
/// plus `<dir>/<id>_mask.png` when truth is present. Returns the image path.
std::filesystem::path save_sample(const ImageSample& sample, const std::filesystem::path& dir);

/// Reads a single-channel 8/16-bit label raster without canonicalising it.
InstanceMask read_labels(const std::filesystem::path& path);
void write_labels(const InstanceMask& mask, const std::filesystem::path& path);

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
};

/// Seeded per-image split; validation size is round(fraction * n). Both lists keep
/// the input order.
DatasetSplit make_split(const std::vector<std::string>& ids, double validation_fraction, std::uint64_t seed);

struct SynthOptions {
  int n_images = 4;
  int size = 256;
  double density = 0.35;  // target fraction of the field covered by cells
  std::uint64_t seed = 0;
  int min_objects = 1;
  Modality modality = Modality::fluorescence;

  void validate() const;
};

/// Elliptical cells with bright membrane rims (channel 0) and offset nuclei
/// (channel 1), some touching. H&E renders the same geometry in stain colours.
std::vector<ImageSample> synth_dataset(const SynthOptions& options);

/// Plain-text manifest:
///   [dataset]  modality = fluorescence
///   [images]   <id> = <path relative to the manifest>
///   [split]    <id> = train | validation | test
struct ManifestEntry {
  std::string id;
  std::filesystem::path image;  // resolved against the manifest's directory on read
  std::string split;
};

struct Manifest {
  Modality modality = Modality::fluorescence;
  std::vector<ManifestEntry> entries;

  DatasetSplit split() const;
  const ManifestEntry& entry(const std::string& id) const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

}  // namespace micronet::io
