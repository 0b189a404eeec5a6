#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "micronet/metrics.hpp"
#include "micronet/network.hpp"
#include "micronet/postprocess.hpp"

namespace micronet::metrics {

inline const std::vector<double> default_snr_grid{20.0, 15.0, 10.0, 5.0, 3.0, 1.0};

struct SweepPoint {
  double snr_db = 0.0;
  MetricsReport report;
};

/// For every SNR and seed, adds noise to each sample (add_noise_at_snr), segments it
/// and scores it against its truth. With several seeds, image ids get a "#<seed>"
/// suffix. An infinite SNR reproduces the clean evaluation.
std::vector<SweepPoint> snr_sweep(nn::Network& net, const std::vector<ImageSample>& samples,
                                  const std::vector<double>& snr_grid, const std::vector<std::uint64_t>& seeds,
                                  const postprocess::PostprocessParams& params);

/// Rows = SNR, columns = network, snr_db, dice, f1, object_dice, pixel_acc, object_hausdorff.
std::string sweep_csv(const std::vector<SweepPoint>& sweep, const std::string& network);

/// One row per (metric, network), one column per SNR: the per-metric tables stacked.
std::string sweep_tables_csv(const std::vector<SweepPoint>& sweep, const std::string& network);

}  // namespace micronet::metrics
