#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "micronet/augment.hpp"
#include "micronet/dataset_io.hpp"
#include "micronet/errors.hpp"
#include "micronet/graph.hpp"
#include "micronet/postprocess.hpp"
#include "micronet/preprocess.hpp"
#include "micronet/training.hpp"

namespace micronet::cli {

/// Every problem found in a config, reported together.
class ConfigError : public InvalidArgument {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Declarative run description. Sections and keys mirror the INI file; see
/// `micronet defaults` for the full list with default values.
struct RunConfig {
  // [run]
  std::uint64_t seed = 0;
  std::filesystem::path out = "run";

  // [network]
  nn::VariantName variant = nn::VariantName::micronet252;
  double width = 1.0;
  bool network_pinned = false;  // set when the variant or width came from the config or flags

  // [data]
  std::filesystem::path manifest;
  Modality modality = Modality::fluorescence;
  io::Scaling scaling = io::Scaling::automatic;
  double validation_fraction = 0.2;  // used when the manifest lists no validation ids
  std::filesystem::path stain_target;

  // [patch] 0 = derived from the variant (300/252 or 600/508)
  int sample_size = 0;
  int crop_size = 0;

  // [augment] noise/blur: "auto" picks by modality
  bool augment_enabled = true;
  augment::Recipe augment;
  std::string noise_mode = "auto";
  std::string blur_mode = "auto";

  // [train]
  train::TrainConfig train;

  // [postprocess]
  postprocess::PostprocessParams post;
  bool overlay = true;

  // [sweep]
  std::vector<double> snr_grid{20.0, 15.0, 10.0, 5.0, 3.0, 1.0};
  std::vector<std::uint64_t> sweep_seeds{0};
  std::string sweep_split = "test";

  // [synth]
  io::SynthOptions synth;
  double synth_validation_fraction = 0.2;
  double synth_test_fraction = 0.25;

  /// Network variant with channels derived from the modality.
  nn::NetVariant net_variant() const;
  preprocess::PatchSpec patch_spec() const;
  augment::Recipe recipe() const;
  /// TrainConfig with seed, patch spec and recipe filled in.
  train::TrainConfig train_config() const;

  /// All cross-field and range checks; returns the problems found.
  std::vector<std::string> problems() const;
  /// Throws ConfigError listing every problem.
  void validate() const;
};

/// Parses INI text. Unknown keys and malformed values are appended to `problems`
/// when given, otherwise thrown together as ConfigError. Cross-field checks are
/// left to RunConfig::problems().
RunConfig parse_config(const std::string& ini_text, std::vector<std::string>* problems = nullptr);
RunConfig load_config(const std::filesystem::path& path, std::vector<std::string>* problems = nullptr);

/// Sets one key as if it appeared in the file; throws ConfigError for unknown keys or bad values.
void set_key(RunConfig& config, const std::string& section, const std::string& key, const std::string& value);

/// Complete INI rendering (every key, resolved values); parse_config(to_ini(c)) == c.
std::string to_ini(const RunConfig& config);

}  // namespace micronet::cli
