#pragma once

#include <filesystem>
#include <vector>

#include "micronet/metrics.hpp"
#include "micronet/sweep.hpp"
#include "micronet_cli/run_config.hpp"

namespace micronet::cli {

/// Trains into config.out: config.ini snapshot, curves.csv, checkpoints/,
/// best_checkpoint, stain_target.txt (H&E). Returns the run directory.
std::filesystem::path cmd_train(const RunConfig& config);

/// Segments each image (or the manifest's test split when `images` is empty) and
/// writes `<id>_mask.png` plus `<id>_overlay.png` into config.out.
void cmd_predict(const RunConfig& config, const std::filesystem::path& checkpoint,
                 const std::vector<std::filesystem::path>& images);

/// Pairs `<id>_mask.*` files from both directories and writes metrics.csv to `out`.
metrics::MetricsReport cmd_evaluate(const std::filesystem::path& pred_dir, const std::filesystem::path& truth_dir,
                                    const std::filesystem::path& out);

/// Writes sweep.csv, sweep_tables.csv and one metrics_<snr>.csv per grid point.
std::vector<metrics::SweepPoint> cmd_snr_sweep(const RunConfig& config, const std::filesystem::path& checkpoint);

/// Writes a synthetic dataset and manifest.ini into config.out.
std::filesystem::path cmd_synth(const RunConfig& config);

/// Entry point: parses argv, runs a subcommand, maps errors to exit codes
/// (0 success, 1 validation, 2 runtime).
int run(int argc, char** argv);

}  // namespace micronet::cli
