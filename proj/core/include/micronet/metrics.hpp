#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "micronet/image.hpp"

namespace micronet::metrics {

/// 2|P∩T| / (|P|+|T|); 1 when both are empty.
double dice(const BinaryMask& pred, const BinaryMask& truth);
double pixel_accuracy(const BinaryMask& pred, const BinaryMask& truth);

struct MatchedPair {
  std::int32_t truth = 0;
  std::int32_t pred = 0;
  std::int64_t intersection = 0;

  bool operator==(const MatchedPair&) const = default;
};

struct ObjectMatching {
  std::vector<MatchedPair> pairs;  // in greedy acceptance order
  std::vector<std::int32_t> unmatched_truth;
  std::vector<std::int32_t> unmatched_pred;
};

/// One-to-one greedy matching by descending intersection; ties go to the smaller
/// truth label, then the smaller prediction label. Zero-overlap pairs never match.
ObjectMatching match_objects(const InstanceMask& pred, const InstanceMask& truth);

struct DetectionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
};

/// TP = matched pairs whose intersection exceeds half of the truth object.
DetectionCounts detection_counts(const ObjectMatching& matching, const InstanceMask& truth);
/// 2TP / (2TP + FP + FN); 0 when undefined.
double object_f1(const ObjectMatching& matching, const InstanceMask& truth);

/// Area-weighted symmetric Dice of each object against its best-overlap counterpart.
/// 1 when both masks are empty.
double object_dice(const InstanceMask& pred, const InstanceMask& truth);

/// Area-weighted symmetric Hausdorff between boundary pixel sets. An object without
/// an overlapping counterpart is compared with the nearest object on the other side;
/// when the other side is empty the image diagonal is used. Absent when both are empty.
std::optional<double> object_hausdorff(const InstanceMask& pred, const InstanceMask& truth);

/// 2 Σ_matched |G_i ∩ S_j| / (|G| + |S|) under match_objects; 1 when both are empty.
double dice2_ensemble(const InstanceMask& pred, const InstanceMask& truth);

/// Symmetric Hausdorff distance between two non-empty point sets (y, x).
double hausdorff(const std::vector<std::array<int, 2>>& a, const std::vector<std::array<int, 2>>& b);
/// Pixels of the object with a 4-neighbour outside it (the image edge counts as outside).
std::vector<std::array<int, 2>> boundary_pixels(const InstanceMask& mask, std::int32_t label);

struct ImageMetrics {
  std::string id;
  double dice = 0.0;
  double pixel_acc = 0.0;
  double f1 = 0.0;
  double object_dice = 0.0;
  std::optional<double> object_hausdorff;
  double dice2 = 0.0;
  DetectionCounts counts;
};

ImageMetrics evaluate(const std::string& id, const InstanceMask& pred, const InstanceMask& truth);

struct MetricsReport {
  std::vector<ImageMetrics> per_image;  // sorted by id
  ImageMetrics aggregate;               // unweighted means; id "mean"; counts summed

  void add(ImageMetrics m);
  void finalize();
  /// One row per image plus a final "mean" row; fixed 6-decimal formatting.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

}  // namespace micronet::metrics
