#include "micronet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "micronet/checkpoint.hpp"
#include "micronet/random.hpp"

namespace micronet::train {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kProbFloor = 1e-12;

// Felzenszwalb-Huttenlocher 1-D squared distance transform, in place on f[0..n).
void edt_1d(double* f, int n, std::size_t stride, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  d.resize(n);
  v.resize(n);
  z.resize(n + 1);
  int k = 0;
  int first = -1;
  for (int q = 0; q < n; ++q)
    if (f[q * stride] < kInf) {
      first = q;
      break;
    }
  if (first < 0) return;
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = first + 1; q < n; ++q) {
    const double fq = f[q * stride];
    if (fq == kInf) continue;
    double s;
    while (true) {
      const int p = v[k];
      s = ((fq + double(q) * q) - (f[p * stride] + double(p) * p)) / (2.0 * (q - p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k] * stride];
  }
  for (int q = 0; q < n; ++q) f[q * stride] = d[q];
}

void check_map(const nn::Tensor& p, int i, const BinaryMask& t, const WeightMap& w) {
  if (p.c != 2) throw ShapeError("weighted_ce expects 2-channel probabilities");
  if (t.height != p.h || t.width != p.w || w.height != p.h || w.width != p.w ||
      w.w.size() != static_cast<std::size_t>(p.h) * p.w) {
    std::ostringstream msg;
    msg << "weighted_ce: image " << i << " probabilities " << p.h << "x" << p.w << ", truth " << t.height << "x"
        << t.width << ", weights " << w.height << "x" << w.width;
    throw ShapeError(msg.str());
  }
}

std::string fmt(const char* spec, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

double separation_cutoff(double sigma) { return sigma * std::sqrt(2.0 * std::log(1e12)); }

WeightMap weight_map(const InstanceMask& truth, double w0, double sigma) {
  if (!(w0 >= 0.0) || !std::isfinite(w0)) throw InvalidArgument("w0 must be finite and >= 0");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("sigma must be positive");
  const int h = truth.height;
  const int w = truth.width;
  WeightMap out{h, w, std::vector<double>(truth.size(), 0.0)};
  std::size_t fg = 0;
  for (auto v : truth.labels) fg += v > 0;
  const std::size_t bg = truth.size() - fg;
  const double major = static_cast<double>(std::max(fg, bg));
  const double wc_fg = fg ? std::max(1.0, major / static_cast<double>(fg)) : 1.0;
  const double wc_bg = bg ? std::max(1.0, major / static_cast<double>(bg)) : 1.0;
  for (std::size_t p = 0; p < truth.size(); ++p) out.w[p] = truth.labels[p] > 0 ? wc_fg : wc_bg;

  const std::int32_t k = truth.max_label();
  if (k < 2 || w0 == 0.0) return out;
  struct Box {
    int y0 = std::numeric_limits<int>::max(), x0 = std::numeric_limits<int>::max(), y1 = -1, x1 = -1;
  };
  std::vector<Box> boxes(k + 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto v = truth.at(y, x);
      if (v <= 0) continue;
      Box& b = boxes[v];
      b.y0 = std::min(b.y0, y);
      b.x0 = std::min(b.x0, x);
      b.y1 = std::max(b.y1, y);
      b.x1 = std::max(b.x1, x);
    }
  const int r = static_cast<int>(std::ceil(separation_cutoff(sigma)));
  std::vector<double> d1(truth.size(), kInf), d2(truth.size(), kInf);
  std::vector<double> f, d, z;
  std::vector<int> v;
  for (std::int32_t label = 1; label <= k; ++label) {
    const Box& b = boxes[label];
    if (b.y1 < 0) continue;
    const int y0 = std::max(0, b.y0 - r), y1 = std::min(h - 1, b.y1 + r);
    const int x0 = std::max(0, b.x0 - r), x1 = std::min(w - 1, b.x1 + r);
    const int wh = y1 - y0 + 1, ww = x1 - x0 + 1;
    f.assign(static_cast<std::size_t>(wh) * ww, kInf);
    for (int y = b.y0; y <= b.y1; ++y)
      for (int x = b.x0; x <= b.x1; ++x)
        if (truth.at(y, x) == label) f[static_cast<std::size_t>(y - y0) * ww + (x - x0)] = 0.0;
    for (int x = 0; x < ww; ++x) edt_1d(f.data() + x, wh, ww, d, v, z);
    for (int y = 0; y < wh; ++y) edt_1d(f.data() + static_cast<std::size_t>(y) * ww, ww, 1, d, v, z);
    for (int y = 0; y < wh; ++y)
      for (int x = 0; x < ww; ++x) {
        const double dist = f[static_cast<std::size_t>(y) * ww + x];
        const std::size_t p = static_cast<std::size_t>(y + y0) * w + (x + x0);
        if (dist < d1[p]) {
          d2[p] = d1[p];
          d1[p] = dist;
        } else if (dist < d2[p]) {
          d2[p] = dist;
        }
      }
  }
  const double denom = 2.0 * sigma * sigma;
  for (std::size_t p = 0; p < truth.size(); ++p) {
    if (d2[p] == kInf) continue;
    const double s = std::sqrt(d1[p]) + std::sqrt(d2[p]);
    out.w[p] += w0 * std::exp(-s * s / denom);
  }
  return out;
}

double weighted_ce(const Image& probabilities, const BinaryMask& truth, const WeightMap& w) {
  nn::Tensor t(1, probabilities.channels, probabilities.height, probabilities.width);
  std::copy(probabilities.data.begin(), probabilities.data.end(), t.data.begin());
  return weighted_ce(t, {truth}, {w});
}

double weighted_ce(const nn::Tensor& probabilities, const std::vector<BinaryMask>& truth,
                   const std::vector<WeightMap>& w, nn::Tensor* grad, double scale) {
  if (truth.size() != static_cast<std::size_t>(probabilities.n) || w.size() != truth.size())
    throw ShapeError("weighted_ce: need one truth mask and weight map per batch image");
  for (int i = 0; i < probabilities.n; ++i) check_map(probabilities, i, truth[i], w[i]);
  const std::size_t plane = probabilities.plane();
  double total_w = 0.0;
  double sum = 0.0;
  for (int i = 0; i < probabilities.n; ++i) {
    const double* p = probabilities.image(i);
    for (std::size_t q = 0; q < plane; ++q) {
      const double pt = p[truth[i].values[q] ? plane + q : q];
      total_w += w[i].w[q];
      sum += w[i].w[q] * std::log(std::max(pt, kProbFloor));
    }
  }
  if (!(total_w > 0.0)) throw InvalidArgument("weighted_ce: weights sum to zero");
  if (grad) {
    if (grad->empty()) grad->reset(probabilities.n, probabilities.c, probabilities.h, probabilities.w);
    if (grad->size() != probabilities.size()) throw ShapeError("weighted_ce: gradient buffer has the wrong shape");
    for (int i = 0; i < probabilities.n; ++i) {
      const double* p = probabilities.image(i);
      double* g = grad->image(i);
      for (std::size_t q = 0; q < plane; ++q) {
        const std::size_t idx = truth[i].values[q] ? plane + q : q;
        if (p[idx] > kProbFloor) g[idx] -= scale * w[i].w[q] / (total_w * p[idx]);
      }
    }
  }
  return -sum / total_w;
}

double total_loss(double l_o, double l_a1, double l_a2, double l_a3, int epoch) {
  if (epoch < 1) throw InvalidArgument("total_loss: epoch must be >= 1, got " + std::to_string(epoch));
  return l_o + (l_a1 + l_a2 + l_a3) / epoch;
}

double lr_at(int epoch, double base) {
  if (epoch < 0) throw InvalidArgument("lr_at: epoch must be >= 0");
  return base / std::pow(10.0, epoch / 5);
}

void Adam::step(std::vector<nn::Parameter>& parameters, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidArgument("learning rate must be finite and >= 0");
  if (m_.size() != parameters.size()) {
    m_.assign(parameters.size(), {});
    v_.assign(parameters.size(), {});
    for (std::size_t i = 0; i < parameters.size(); ++i) {
      m_[i].assign(parameters[i].value.size(), 0.0);
      v_[i].assign(parameters[i].value.size(), 0.0);
    }
  }
  ++t_;
  const double b1 = params_.beta1, b2 = params_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    auto& p = parameters[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      if (lr == 0.0) continue;
      p.value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + params_.epsilon);
    }
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw InvalidArgument("base_lr must be > 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (patches_per_image < 1) throw InvalidArgument("patches_per_image must be >= 1");
  if (max_steps < 0) throw InvalidArgument("max_steps must be >= 0");
  if (!(w0 >= 0.0)) throw InvalidArgument("w0 must be >= 0");
  if (!(sigma > 0.0)) throw InvalidArgument("sigma must be > 0");
  if (!(init_stddev > 0.0)) throw InvalidArgument("init_stddev must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.epsilon > 0.0))
    throw InvalidArgument("Adam parameters out of range");
  patch.validate();
  augment.validate();
}

std::size_t select_checkpoint(const std::vector<double>& validation_losses) {
  std::size_t best = validation_losses.size();
  for (std::size_t i = 0; i < validation_losses.size(); ++i) {
    const double v = validation_losses[i];
    if (!std::isfinite(v)) continue;
    if (best == validation_losses.size() || v < validation_losses[best]) best = i;
  }
  if (best == validation_losses.size()) throw InvalidArgument("no finite validation loss to select from");
  return best;
}

std::string curves_csv(const std::vector<EpochLog>& history) {
  std::ostringstream out;
  out << "epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& e : history)
    out << e.epoch << ',' << fmt("%.9g", e.lr) << ',' << fmt("%.6f", e.train_loss) << ',' << fmt("%.6f", e.train_acc)
        << ',' << fmt("%.6f", e.val_loss) << ',' << fmt("%.6f", e.val_acc) << '\n';
  return out.str();
}

double pixel_agreement(const nn::Tensor& probabilities, const std::vector<BinaryMask>& truth) {
  const std::size_t plane = probabilities.plane();
  std::size_t agree = 0;
  for (int i = 0; i < probabilities.n; ++i) {
    const double* p = probabilities.image(i);
    for (std::size_t q = 0; q < plane; ++q) agree += (p[plane + q] > p[q]) == (truth[i].values[q] != 0);
  }
  return static_cast<double>(agree) / static_cast<double>(plane * probabilities.n);
}

namespace {

struct Example {
  Image image;
  BinaryMask truth;
  WeightMap weights;
};

Example make_example(Image image, const InstanceMask& truth, const TrainConfig& cfg) {
  const InstanceMask canon = canonicalize(truth);
  return {std::move(image), foreground(canon), weight_map(canon, cfg.w0, cfg.sigma)};
}

struct Snapshot {
  std::vector<std::vector<double>> params;
  std::vector<std::vector<double>> buffers;
};

Snapshot snapshot(const nn::Network& net) {
  Snapshot s;
  for (const auto& p : net.parameters()) s.params.push_back(p.value);
  for (const auto& b : net.buffers()) s.buffers.push_back(b.value);
  return s;
}

void restore(nn::Network& net, const Snapshot& s) {
  for (std::size_t i = 0; i < s.params.size(); ++i) net.parameters()[i].value = s.params[i];
  for (std::size_t i = 0; i < s.buffers.size(); ++i) net.buffers()[i].value = s.buffers[i];
}

// Mean main-output loss and accuracy over fixed examples, eval mode.
std::pair<double, double> evaluate(nn::Network& net, const std::vector<Example>& examples) {
  double loss = 0.0, acc = 0.0;
  for (const auto& ex : examples) {
    const nn::Outputs out = net.forward(nn::to_tensor({&ex.image}), nn::Mode::eval);
    loss += weighted_ce(*out.p_o, {ex.truth}, {ex.weights});
    acc += pixel_agreement(*out.p_o, {ex.truth});
  }
  const double n = static_cast<double>(examples.size());
  return {loss / n, acc / n};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

}  // namespace

TrainResult train(nn::Network& net, const std::vector<ImageSample>& train_set,
                  const std::vector<ImageSample>& validation_set, const TrainConfig& cfg,
                  const std::filesystem::path& run_dir, const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw InvalidArgument("training set is empty");
  const int crop = net.graph().crop;
  if (cfg.patch.crop_size != crop)
    throw InvalidArgument("patch crop " + std::to_string(cfg.patch.crop_size) + " does not match the network input " +
                          std::to_string(crop));
  const int in_channels = net.graph().input_shape().channels;
  std::vector<ImageSample> padded;
  for (const auto& s : train_set) {
    s.validate();
    if (!s.truth) throw InvalidArgument("training sample '" + s.id + "' has no truth");
    if (s.channels.channels != in_channels)
      throw ShapeError("training sample '" + s.id + "' has " + std::to_string(s.channels.channels) +
                       " channels, network expects " + std::to_string(in_channels));
    padded.push_back(preprocess::pad_symmetric(s, cfg.patch.sample_size));
  }
  std::vector<Example> validation;
  for (const auto& s : validation_set) {
    s.validate();
    if (!s.truth) throw InvalidArgument("validation sample '" + s.id + "' has no truth");
    for (auto& p : preprocess::tile_patches(s, crop)) validation.push_back(make_example(std::move(p.image), p.truth, cfg));
  }

  const auto ckpt_dir = run_dir / "checkpoints";
  std::filesystem::create_directories(ckpt_dir);
  net.initialize({cfg.init_stddev, cfg.seed});
  Adam adam(cfg.adam);
  Snapshot last_good = snapshot(net);
  std::filesystem::path last_good_path;
  TrainResult result;
  std::vector<double> val_losses;
  std::vector<std::filesystem::path> paths;
  long step = 0;

  auto diverge = [&](const std::string& where) {
    restore(net, last_good);
    throw TrainingDiverged("training diverged (non-finite loss) at " + where + "; restored " +
                           (last_good_path.empty() ? std::string("the initial weights")
                                                   : "checkpoint " + last_good_path.string()));
  };

  for (int e = 0; e < cfg.epochs; ++e) {
    const double lr = lr_at(e, cfg.base_lr);
    const int divisor = e + 1;
    const std::size_t n_patches = padded.size() * static_cast<std::size_t>(cfg.patches_per_image);
    std::vector<std::size_t> order(n_patches);
    for (std::size_t i = 0; i < n_patches; ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5000 + static_cast<std::uint64_t>(e)));
    for (std::size_t i = n_patches; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);
    const std::uint64_t epoch_seed = mix_seed(cfg.seed, 0x7000 + static_cast<std::uint64_t>(e));

    double loss_sum = 0.0, acc_sum = 0.0;
    long epoch_steps = 0;
    for (std::size_t start = 0; start < n_patches; start += cfg.batch_size) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
      const std::size_t end = std::min(n_patches, start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Example> batch;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const ImageSample& src = padded[idx / cfg.patches_per_image];
        const std::uint64_t ps = mix_seed(epoch_seed, idx);
        preprocess::Patch patch = preprocess::sample_patch(src, cfg.patch, ps);
        if (cfg.augment_enabled) {
          auto [im, tr] = augment::apply(cfg.augment, patch.image, patch.truth, mix_seed(ps, 1));
          batch.push_back(make_example(std::move(im), tr, cfg));
        } else {
          batch.push_back(make_example(std::move(patch.image), patch.truth, cfg));
        }
      }
      std::vector<const Image*> images;
      std::vector<BinaryMask> truths;
      std::vector<WeightMap> weights;
      for (const auto& ex : batch) {
        images.push_back(&ex.image);
        truths.push_back(ex.truth);
        weights.push_back(ex.weights);
      }
      net.zero_grad();
      const nn::Outputs out = net.forward(nn::to_tensor(images), nn::Mode::train, mix_seed(cfg.seed, 0x9000 + step));
      std::array<nn::Tensor, 4> grads;
      const double l_o = weighted_ce(*out.p_o, truths, weights, &grads[0], 1.0);
      const double l_a1 = weighted_ce(*out.p_a1, truths, weights, &grads[1], 1.0 / divisor);
      const double l_a2 = weighted_ce(*out.p_a2, truths, weights, &grads[2], 1.0 / divisor);
      const double l_a3 = weighted_ce(*out.p_a3, truths, weights, &grads[3], 1.0 / divisor);
      const double loss = total_loss(l_o, l_a1, l_a2, l_a3, divisor);
      if (!std::isfinite(loss)) diverge("epoch " + std::to_string(e + 1) + ", step " + std::to_string(step + 1));
      loss_sum += loss;
      result.step_losses.push_back(loss);
      acc_sum += pixel_agreement(*out.p_o, truths);
      net.backward(grads);
      adam.step(net.parameters(), lr);
      ++step;
      ++epoch_steps;
    }

    EpochLog log;
    log.epoch = e + 1;
    log.lr = lr;
    log.steps = step;
    log.train_loss = epoch_steps ? loss_sum / epoch_steps : 0.0;
    log.train_acc = epoch_steps ? acc_sum / epoch_steps : 0.0;
    if (!validation.empty()) {
      std::tie(log.val_loss, log.val_acc) = evaluate(net, validation);
    } else {
      log.val_loss = log.train_loss;
      log.val_acc = log.train_acc;
    }
    if (!std::isfinite(log.val_loss) || !std::isfinite(log.train_loss))
      diverge("the end of epoch " + std::to_string(e + 1));

    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.ckpt", e + 1);
    const auto path = ckpt_dir / name;
    ckpt::save(net, path, e + 1, log.val_loss);
    last_good = snapshot(net);
    last_good_path = path;
    paths.push_back(path);
    val_losses.push_back(log.val_loss);
    result.history.push_back(log);
    write_text(run_dir / "curves.csv", curves_csv(result.history));
    if (on_epoch) on_epoch(log);
    if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
  }

  const std::size_t best = select_checkpoint(val_losses);
  result.best_epoch = static_cast<int>(best) + 1;
  result.best_checkpoint = paths[best];
  write_text(run_dir / "best_checkpoint", std::filesystem::relative(paths[best], run_dir).generic_string() + "\n");
  ckpt::load(net, paths[best]);
  return result;
}

}  // namespace micronet::train
