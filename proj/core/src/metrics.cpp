#include "micronet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "micronet/errors.hpp"

namespace micronet::metrics {

namespace {

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    std::ostringstream msg;
    msg << what << ": shape mismatch " << a.height << "x" << a.width << " vs " << b.height << "x" << b.width;
    throw ShapeError(msg.str());
  }
}

struct Box {
  int y0 = std::numeric_limits<int>::max(), x0 = std::numeric_limits<int>::max();
  int y1 = -1, x1 = -1;
  void add(int y, int x) {
    y0 = std::min(y0, y);
    x0 = std::min(x0, x);
    y1 = std::max(y1, y);
    x1 = std::max(x1, x);
  }
};

struct Objects {
  std::vector<std::int64_t> area;  // index = label; [0] unused
  std::vector<Box> box;
  std::vector<std::vector<std::array<int, 2>>> boundary;
  std::int64_t total = 0;
  std::int32_t count() const { return static_cast<std::int32_t>(area.size()) - 1; }
};

Objects describe(const InstanceMask& m, bool with_boundary) {
  Objects o;
  const auto k = std::max<std::int32_t>(0, m.max_label());
  o.area.assign(k + 1, 0);
  o.box.assign(k + 1, Box{});
  if (with_boundary) o.boundary.assign(k + 1, {});
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const auto v = m.at(y, x);
      if (v < 0) throw InvalidArgument("instance mask has negative labels");
      if (v == 0) continue;
      ++o.area[v];
      ++o.total;
      o.box[v].add(y, x);
      if (with_boundary) {
        const bool edge = y == 0 || x == 0 || y == m.height - 1 || x == m.width - 1 || m.at(y - 1, x) != v ||
                          m.at(y + 1, x) != v || m.at(y, x - 1) != v || m.at(y, x + 1) != v;
        if (edge) o.boundary[v].push_back({y, x});
      }
    }
  return o;
}

// (truth, pred) -> intersection area, ordered.
std::map<std::pair<std::int32_t, std::int32_t>, std::int64_t> intersections(const InstanceMask& pred,
                                                                            const InstanceMask& truth) {
  std::map<std::pair<std::int32_t, std::int32_t>, std::int64_t> inter;
  for (std::size_t p = 0; p < truth.size(); ++p) {
    const auto t = truth.labels[p];
    const auto s = pred.labels[p];
    if (t > 0 && s > 0) ++inter[{t, s}];
  }
  return inter;
}

// Best-overlap counterpart per object on each side: (label, intersection), label 0 when none.
struct Counterparts {
  std::vector<std::pair<std::int32_t, std::int64_t>> of_truth;
  std::vector<std::pair<std::int32_t, std::int64_t>> of_pred;
};

Counterparts best_overlaps(const std::map<std::pair<std::int32_t, std::int32_t>, std::int64_t>& inter,
                           std::int32_t n_truth, std::int32_t n_pred) {
  Counterparts c;
  c.of_truth.assign(n_truth + 1, {0, 0});
  c.of_pred.assign(n_pred + 1, {0, 0});
  // Map iteration is ascending in (truth, pred), so strict > keeps the smaller label on ties.
  for (const auto& [key, n] : inter) {
    auto& bt = c.of_truth[key.first];
    if (n > bt.second) bt = {key.second, n};
    auto& bp = c.of_pred[key.second];
    if (n > bp.second) bp = {key.first, n};
  }
  return c;
}

double squared(const std::array<int, 2>& a, const std::array<int, 2>& b) {
  const double dy = a[0] - b[0];
  const double dx = a[1] - b[1];
  return dy * dy + dx * dx;
}

double directed_sq(const std::vector<std::array<int, 2>>& a, const std::vector<std::array<int, 2>>& b) {
  double worst = 0.0;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) {
      best = std::min(best, squared(p, q));
      if (best <= worst) break;  // p cannot raise the maximum
    }
    worst = std::max(worst, best);
  }
  return worst;
}

double min_distance_sq(const std::vector<std::array<int, 2>>& a, const std::vector<std::array<int, 2>>& b) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : a)
    for (const auto& q : b) best = std::min(best, squared(p, q));
  return best;
}

double box_gap_sq(const Box& a, const Box& b) {
  const double dy = std::max({0, a.y0 - b.y1, b.y0 - a.y1});
  const double dx = std::max({0, a.x0 - b.x1, b.x0 - a.x1});
  return dy * dy + dx * dx;
}

// Label on `other` nearest to object `label` of `self` (smallest label on ties).
std::int32_t nearest_object(const Objects& self, std::int32_t label, const Objects& other) {
  std::vector<std::pair<double, std::int32_t>> order;
  for (std::int32_t j = 1; j <= other.count(); ++j)
    if (other.area[j] > 0) order.push_back({box_gap_sq(self.box[label], other.box[j]), j});
  std::sort(order.begin(), order.end());
  std::int32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& [bound, j] : order) {
    if (bound > best_d) break;
    const double d = min_distance_sq(self.boundary[label], other.boundary[j]);
    if (d < best_d || (d == best_d && j < best)) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double dice(const BinaryMask& pred, const BinaryMask& truth) {
  require_same_shape(pred, truth, "dice");
  std::int64_t p = 0, t = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred.values[i] != 0;
    const bool b = truth.values[i] != 0;
    p += a;
    t += b;
    both += a && b;
  }
  if (p + t == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + t);
}

double pixel_accuracy(const BinaryMask& pred, const BinaryMask& truth) {
  require_same_shape(pred, truth, "pixel_accuracy");
  if (pred.size() == 0) return 1.0;
  std::int64_t agree = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) agree += (pred.values[i] != 0) == (truth.values[i] != 0);
  return static_cast<double>(agree) / static_cast<double>(pred.size());
}

ObjectMatching match_objects(const InstanceMask& pred, const InstanceMask& truth) {
  require_same_shape(pred, truth, "match_objects");
  const auto inter = intersections(pred, truth);
  std::vector<MatchedPair> cand;
  cand.reserve(inter.size());
  for (const auto& [key, n] : inter) cand.push_back({key.first, key.second, n});
  std::stable_sort(cand.begin(), cand.end(), [](const MatchedPair& a, const MatchedPair& b) {
    if (a.intersection != b.intersection) return a.intersection > b.intersection;
    if (a.truth != b.truth) return a.truth < b.truth;
    return a.pred < b.pred;
  });
  const auto nt = std::max<std::int32_t>(0, truth.max_label());
  const auto np = std::max<std::int32_t>(0, pred.max_label());
  std::vector<bool> used_t(nt + 1, false), used_p(np + 1, false);
  std::vector<bool> present_t(nt + 1, false), present_p(np + 1, false);
  for (auto v : truth.labels) present_t[std::max(0, v)] = true;
  for (auto v : pred.labels) present_p[std::max(0, v)] = true;
  ObjectMatching m;
  for (const auto& c : cand) {
    if (used_t[c.truth] || used_p[c.pred]) continue;
    used_t[c.truth] = used_p[c.pred] = true;
    m.pairs.push_back(c);
  }
  for (std::int32_t i = 1; i <= nt; ++i)
    if (present_t[i] && !used_t[i]) m.unmatched_truth.push_back(i);
  for (std::int32_t j = 1; j <= np; ++j)
    if (present_p[j] && !used_p[j]) m.unmatched_pred.push_back(j);
  return m;
}

DetectionCounts detection_counts(const ObjectMatching& matching, const InstanceMask& truth) {
  const Objects t = describe(truth, false);
  DetectionCounts c;
  for (const auto& p : matching.pairs)
    if (2 * p.intersection > t.area.at(p.truth)) ++c.tp;
  const auto n_truth = static_cast<std::int64_t>(matching.pairs.size() + matching.unmatched_truth.size());
  const auto n_pred = static_cast<std::int64_t>(matching.pairs.size() + matching.unmatched_pred.size());
  c.fp = n_pred - c.tp;
  c.fn = n_truth - c.tp;
  return c;
}

double object_f1(const ObjectMatching& matching, const InstanceMask& truth) {
  const DetectionCounts c = detection_counts(matching, truth);
  const std::int64_t denom = 2 * c.tp + c.fp + c.fn;
  if (c.tp == 0 || denom == 0) return 0.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double object_dice(const InstanceMask& pred, const InstanceMask& truth) {
  require_same_shape(pred, truth, "object_dice");
  const Objects g = describe(truth, false);
  const Objects s = describe(pred, false);
  if (g.total == 0 && s.total == 0) return 1.0;
  const Counterparts cp = best_overlaps(intersections(pred, truth), g.count(), s.count());
  double truth_side = 0.0;
  for (std::int32_t i = 1; i <= g.count(); ++i) {
    if (g.area[i] == 0) continue;
    const auto [j, n] = cp.of_truth[i];
    const double d = j == 0 ? 0.0 : 2.0 * n / static_cast<double>(g.area[i] + s.area[j]);
    truth_side += static_cast<double>(g.area[i]) / static_cast<double>(g.total) * d;
  }
  double pred_side = 0.0;
  for (std::int32_t j = 1; j <= s.count(); ++j) {
    if (s.area[j] == 0) continue;
    const auto [i, n] = cp.of_pred[j];
    const double d = i == 0 ? 0.0 : 2.0 * n / static_cast<double>(s.area[j] + g.area[i]);
    pred_side += static_cast<double>(s.area[j]) / static_cast<double>(s.total) * d;
  }
  return 0.5 * (truth_side + pred_side);
}

double hausdorff(const std::vector<std::array<int, 2>>& a, const std::vector<std::array<int, 2>>& b) {
  if (a.empty() || b.empty()) throw InvalidArgument("hausdorff of an empty point set");
  return std::sqrt(std::max(directed_sq(a, b), directed_sq(b, a)));
}

std::vector<std::array<int, 2>> boundary_pixels(const InstanceMask& mask, std::int32_t label) {
  std::vector<std::array<int, 2>> out;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(y, x) != label) continue;
      const bool edge = y == 0 || x == 0 || y == mask.height - 1 || x == mask.width - 1 ||
                        mask.at(y - 1, x) != label || mask.at(y + 1, x) != label || mask.at(y, x - 1) != label ||
                        mask.at(y, x + 1) != label;
      if (edge) out.push_back({y, x});
    }
  return out;
}

std::optional<double> object_hausdorff(const InstanceMask& pred, const InstanceMask& truth) {
  require_same_shape(pred, truth, "object_hausdorff");
  const Objects g = describe(truth, true);
  const Objects s = describe(pred, true);
  if (g.total == 0 && s.total == 0) return std::nullopt;
  const double diagonal = std::hypot(static_cast<double>(truth.height), static_cast<double>(truth.width));
  const Counterparts cp = best_overlaps(intersections(pred, truth), g.count(), s.count());
  auto side = [&](const Objects& self, const Objects& other, const auto& best) {
    double sum = 0.0;
    for (std::int32_t i = 1; i <= self.count(); ++i) {
      if (self.area[i] == 0) continue;
      double h = diagonal;
      if (other.total > 0) {
        std::int32_t j = best[i].first;
        if (j == 0) j = nearest_object(self, i, other);
        h = hausdorff(self.boundary[i], other.boundary[j]);
      }
      sum += static_cast<double>(self.area[i]) / static_cast<double>(self.total) * h;
    }
    return sum;
  };
  return 0.5 * (side(g, s, cp.of_truth) + side(s, g, cp.of_pred));
}

double dice2_ensemble(const InstanceMask& pred, const InstanceMask& truth) {
  const ObjectMatching m = match_objects(pred, truth);
  std::int64_t g = 0, s = 0;
  for (std::size_t p = 0; p < truth.size(); ++p) {
    g += truth.labels[p] > 0;
    s += pred.labels[p] > 0;
  }
  if (g + s == 0) return 1.0;
  std::int64_t matched = 0;
  for (const auto& p : m.pairs) matched += p.intersection;
  return 2.0 * static_cast<double>(matched) / static_cast<double>(g + s);
}

ImageMetrics evaluate(const std::string& id, const InstanceMask& pred, const InstanceMask& truth) {
  require_same_shape(pred, truth, "evaluate");
  ImageMetrics r;
  r.id = id;
  const BinaryMask p = foreground(pred);
  const BinaryMask t = foreground(truth);
  r.dice = dice(p, t);
  r.pixel_acc = pixel_accuracy(p, t);
  const ObjectMatching m = match_objects(pred, truth);
  r.counts = detection_counts(m, truth);
  r.f1 = object_f1(m, truth);
  r.object_dice = object_dice(pred, truth);
  r.object_hausdorff = object_hausdorff(pred, truth);
  r.dice2 = dice2_ensemble(pred, truth);
  return r;
}

void MetricsReport::add(ImageMetrics m) { per_image.push_back(std::move(m)); }

void MetricsReport::finalize() {
  std::stable_sort(per_image.begin(), per_image.end(),
                   [](const ImageMetrics& a, const ImageMetrics& b) { return a.id < b.id; });
  ImageMetrics agg;
  agg.id = "mean";
  const double n = static_cast<double>(per_image.size());
  double hd = 0.0;
  int hd_n = 0;
  for (const auto& m : per_image) {
    agg.dice += m.dice / n;
    agg.pixel_acc += m.pixel_acc / n;
    agg.f1 += m.f1 / n;
    agg.object_dice += m.object_dice / n;
    agg.dice2 += m.dice2 / n;
    agg.counts.tp += m.counts.tp;
    agg.counts.fp += m.counts.fp;
    agg.counts.fn += m.counts.fn;
    if (m.object_hausdorff) {
      hd += *m.object_hausdorff;
      ++hd_n;
    }
  }
  if (hd_n > 0) agg.object_hausdorff = hd / hd_n;
  aggregate = agg;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "id,dice,pixel_acc,f1,object_dice,object_hausdorff,dice2,tp,fp,fn\n";
  auto row = [&](const ImageMetrics& m) {
    out << m.id << ',' << fmt(m.dice) << ',' << fmt(m.pixel_acc) << ',' << fmt(m.f1) << ',' << fmt(m.object_dice)
        << ',' << (m.object_hausdorff ? fmt(*m.object_hausdorff) : "") << ',' << fmt(m.dice2) << ',' << m.counts.tp
        << ',' << m.counts.fp << ',' << m.counts.fn << '\n';
  };
  for (const auto& m : per_image) row(m);
  row(aggregate);
  return out.str();
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_csv();
}

}  // namespace micronet::metrics
