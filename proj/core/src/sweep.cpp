#include "micronet/sweep.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "micronet/augment.hpp"
#include "micronet/errors.hpp"
#include "micronet/inference.hpp"
#include "micronet/random.hpp"

namespace micronet::metrics {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string db_label(double snr) {
  if (std::isinf(snr)) return "clean";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%gdB", snr);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : ""; }

}  // namespace

std::vector<SweepPoint> snr_sweep(nn::Network& net, const std::vector<ImageSample>& samples,
                                  const std::vector<double>& snr_grid, const std::vector<std::uint64_t>& seeds,
                                  const postprocess::PostprocessParams& params) {
  if (snr_grid.empty()) throw InvalidArgument("SNR grid is empty");
  if (seeds.empty()) throw InvalidArgument("seed list is empty");
  if (samples.empty()) throw InvalidArgument("no samples to sweep");
  for (const auto& s : samples)
    if (!s.truth) throw InvalidArgument("sample '" + s.id + "' has no truth");
  std::vector<SweepPoint> out;
  for (std::size_t g = 0; g < snr_grid.size(); ++g) {
    SweepPoint point;
    point.snr_db = snr_grid[g];
    for (std::uint64_t seed : seeds)
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const ImageSample& s = samples[i];
        const Image noisy = augment::add_noise_at_snr(s.channels, snr_grid[g], mix_seed(seed, i));
        const InstanceMask pred = inference::segment(net, noisy, params);
        const std::string id = seeds.size() == 1 ? s.id : s.id + "#" + std::to_string(seed);
        point.report.add(evaluate(id, pred, *s.truth));
      }
    point.report.finalize();
    out.push_back(std::move(point));
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepPoint>& sweep, const std::string& network) {
  std::ostringstream out;
  out << "network,snr_db,dice,f1,object_dice,pixel_acc,object_hausdorff\n";
  for (const auto& p : sweep) {
    const ImageMetrics& m = p.report.aggregate;
    out << network << ',' << (std::isinf(p.snr_db) ? std::string("inf") : num(p.snr_db)) << ',' << num(m.dice)
        << ',' << num(m.f1) << ',' << num(m.object_dice) << ',' << num(m.pixel_acc) << ','
        << opt(m.object_hausdorff) << '\n';
  }
  return out.str();
}

std::string sweep_tables_csv(const std::vector<SweepPoint>& sweep, const std::string& network) {
  std::ostringstream out;
  out << "metric,network";
  for (const auto& p : sweep) out << ',' << db_label(p.snr_db);
  out << '\n';
  const char* names[] = {"dice", "f1", "object_dice", "pixel_acc", "object_hausdorff"};
  for (int k = 0; k < 5; ++k) {
    out << names[k] << ',' << network;
    for (const auto& p : sweep) {
      const ImageMetrics& m = p.report.aggregate;
      switch (k) {
        case 0: out << ',' << num(m.dice); break;
        case 1: out << ',' << num(m.f1); break;
        case 2: out << ',' << num(m.object_dice); break;
        case 3: out << ',' << num(m.pixel_acc); break;
        default: out << ',' << opt(m.object_hausdorff); break;
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace micronet::metrics
