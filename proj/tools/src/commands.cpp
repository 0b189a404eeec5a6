#include "micronet_cli/commands.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "micronet/checkpoint.hpp"
#include "micronet/inference.hpp"
#include "micronet/random.hpp"

namespace micronet::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("error writing " + path.string());
}

void prepare_out(const RunConfig& config) {
  fs::create_directories(config.out);
  write_text(config.out / "config.ini", to_ini(config));
}

io::Manifest manifest_for(const RunConfig& config) {
  if (config.manifest.empty()) throw ConfigError({"data: manifest is required"});
  io::Manifest m = io::read_manifest(config.manifest);
  return m;
}

std::vector<ImageSample> load_ids(const io::Manifest& m, const std::vector<std::string>& ids, io::Scaling scaling) {
  std::vector<ImageSample> out;
  for (const auto& id : ids) {
    ImageSample s = io::load_sample(m.entry(id).image, m.modality, scaling);
    s.id = id;
    out.push_back(std::move(s));
  }
  return out;
}

void normalize_stain(std::vector<ImageSample>& samples, const preprocess::StainTarget& target) {
  for (auto& s : samples) s.channels = preprocess::reinhard_normalize(s.channels, target);
}

Modality modality_of(const nn::NetVariant& v) {
  return v.in_channels == 3 ? Modality::he_rgb : Modality::fluorescence;
}

// Stain target for inference: explicit path, else the training run's saved target.
preprocess::StainTarget inference_stain_target(const RunConfig& config, const fs::path& checkpoint) {
  std::vector<fs::path> candidates;
  if (!config.stain_target.empty()) candidates.push_back(config.stain_target);
  candidates.push_back(checkpoint.parent_path() / "stain_target.txt");
  candidates.push_back(checkpoint.parent_path().parent_path() / "stain_target.txt");
  for (const auto& c : candidates)
    if (fs::exists(c)) return preprocess::StainTarget::load(c);
  throw InvalidArgument("H&E inference needs a stain target: set [data] stain_target or keep stain_target.txt in the run directory");
}

nn::Network network_for(const RunConfig& config, const fs::path& checkpoint) {
  ckpt::CheckpointInfo info;
  nn::Network net = ckpt::load_network(checkpoint, &info);
  if (config.network_pinned &&
      (info.variant.name != config.variant || info.variant.width_multiplier != config.width)) {
    throw ConfigError({"checkpoint " + checkpoint.string() + " holds " + nn::to_string(info.variant.name) +
                       " at width " + std::to_string(info.variant.width_multiplier) + ", config asks for " +
                       nn::to_string(config.variant) + " at width " + std::to_string(config.width)});
  }
  return net;
}

std::string snr_label(double snr) {
  if (std::isinf(snr)) return "clean";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%gdB", snr);
  return buf;
}

}  // namespace

fs::path cmd_train(const RunConfig& config) {
  config.validate();
  const io::Manifest m = manifest_for(config);
  if (m.modality != config.modality)
    throw ConfigError({"data: manifest modality " + to_string(m.modality) + " differs from config modality " +
                       to_string(config.modality)});
  prepare_out(config);
  io::DatasetSplit split = m.split();
  if (split.train.empty()) throw InvalidArgument("manifest has no training images");
  if (split.validation.empty() && config.validation_fraction > 0.0 && split.train.size() > 1) {
    io::DatasetSplit s = io::make_split(split.train, config.validation_fraction, mix_seed(config.seed, 0x51));
    split.train = s.train;
    split.validation = s.validation;
  }
  std::vector<ImageSample> train_set = load_ids(m, split.train, config.scaling);
  std::vector<ImageSample> validation_set = load_ids(m, split.validation, config.scaling);
  if (m.modality == Modality::he_rgb) {
    const preprocess::StainTarget target = config.stain_target.empty()
                                               ? preprocess::stain_target_from(train_set.front().channels)
                                               : preprocess::StainTarget::load(config.stain_target);
    target.save(config.out / "stain_target.txt");
    normalize_stain(train_set, target);
    normalize_stain(validation_set, target);
  }
  nn::Network net(nn::build_variant(config.net_variant()));
  const train::TrainResult r =
      train::train(net, train_set, validation_set, config.train_config(), config.out, [](const train::EpochLog& e) {
        std::fprintf(stderr, "epoch %d  lr %.3g  train_loss %.4f  train_acc %.4f  val_loss %.4f  val_acc %.4f\n",
                     e.epoch, e.lr, e.train_loss, e.train_acc, e.val_loss, e.val_acc);
      });
  std::fprintf(stderr, "best epoch %d: %s\n", r.best_epoch, r.best_checkpoint.string().c_str());
  return config.out;
}

void cmd_predict(const RunConfig& config, const fs::path& checkpoint, const std::vector<fs::path>& images) {
  config.validate();
  nn::Network net = network_for(config, checkpoint);
  const Modality modality = modality_of(net.graph().variant);
  std::vector<ImageSample> samples;
  if (images.empty()) {
    const io::Manifest m = manifest_for(config);
    const auto ids = m.split().test;
    if (ids.empty()) throw InvalidArgument("no images given and the manifest has no test split");
    samples = load_ids(m, ids, config.scaling);
  } else {
    for (const auto& p : images) samples.push_back(io::load_sample(p, modality, config.scaling));
  }
  prepare_out(config);
  std::optional<preprocess::StainTarget> target;
  if (modality == Modality::he_rgb) target = inference_stain_target(config, checkpoint);
  for (const auto& s : samples) {
    const Image input = target ? preprocess::reinhard_normalize(s.channels, *target) : s.channels;
    const InstanceMask mask = inference::segment(net, input, config.post);
    io::write_labels(mask, config.out / (s.id + "_mask.png"));
    if (config.overlay) {
      const Image rgb = postprocess::overlay(s.channels, s.truth ? *s.truth : InstanceMask{}, mask);
      postprocess::write_overlay_png(rgb, config.out / (s.id + "_overlay.png"));
    }
    std::fprintf(stderr, "%s: %d objects\n", s.id.c_str(), mask.max_label());
  }
}

metrics::MetricsReport cmd_evaluate(const fs::path& pred_dir, const fs::path& truth_dir, const fs::path& out) {
  if (!fs::is_directory(truth_dir)) throw InvalidArgument("truth directory " + truth_dir.string() + " does not exist");
  if (!fs::is_directory(pred_dir)) throw InvalidArgument("prediction directory " + pred_dir.string() + " does not exist");
  auto masks_in = [](const fs::path& dir) {
    std::map<std::string, fs::path> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string stem = entry.path().stem().string();
      const std::string ext = entry.path().extension().string();
      if (stem.size() <= 5 || stem.substr(stem.size() - 5) != "_mask") continue;
      if (ext != ".png" && ext != ".tif" && ext != ".tiff") continue;
      found.emplace(stem.substr(0, stem.size() - 5), entry.path());
    }
    return found;
  };
  const auto truth = masks_in(truth_dir);
  const auto pred = masks_in(pred_dir);
  if (truth.empty()) throw InvalidArgument("no <id>_mask files in " + truth_dir.string());
  std::vector<std::string> missing;
  for (const auto& [id, path] : truth)
    if (!pred.count(id)) missing.push_back(id);
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw InvalidArgument("no prediction for: " + list);
  }
  metrics::MetricsReport report;
  for (const auto& [id, path] : truth) {
    const InstanceMask t = canonicalize(io::read_labels(path));
    const InstanceMask p = canonicalize(io::read_labels(pred.at(id)));
    if (t.height != p.height || t.width != p.width)
      throw ShapeError(id + ": prediction and truth sizes differ");
    report.add(metrics::evaluate(id, p, t));
  }
  report.finalize();
  fs::create_directories(out);
  report.write_csv(out / "metrics.csv");
  return report;
}

std::vector<metrics::SweepPoint> cmd_snr_sweep(const RunConfig& config, const fs::path& checkpoint) {
  config.validate();
  nn::Network net = network_for(config, checkpoint);
  const io::Manifest m = manifest_for(config);
  const io::DatasetSplit split = m.split();
  std::vector<std::string> ids;
  if (config.sweep_split == "all") {
    for (const auto& e : m.entries) ids.push_back(e.id);
  } else {
    ids = config.sweep_split == "train" ? split.train : config.sweep_split == "validation" ? split.validation : split.test;
  }
  if (ids.empty()) throw InvalidArgument("manifest split '" + config.sweep_split + "' is empty");
  std::vector<ImageSample> samples = load_ids(m, ids, config.scaling);
  if (m.modality != modality_of(net.graph().variant))
    throw ConfigError({"manifest modality does not match the checkpoint's input channels"});
  prepare_out(config);
  if (m.modality == Modality::he_rgb) normalize_stain(samples, inference_stain_target(config, checkpoint));
  const auto sweep = metrics::snr_sweep(net, samples, config.snr_grid, config.sweep_seeds, config.post);
  const std::string name = nn::to_string(net.graph().variant.name);
  write_text(config.out / "sweep.csv", metrics::sweep_csv(sweep, name));
  write_text(config.out / "sweep_tables.csv", metrics::sweep_tables_csv(sweep, name));
  for (const auto& p : sweep) p.report.write_csv(config.out / ("metrics_" + snr_label(p.snr_db) + ".csv"));
  return sweep;
}

fs::path cmd_synth(const RunConfig& config) {
  config.validate();
  prepare_out(config);
  io::SynthOptions opt = config.synth;
  opt.seed = config.seed;
  opt.modality = config.modality;
  const std::vector<ImageSample> samples = io::synth_dataset(opt);
  io::Manifest manifest;
  manifest.modality = config.modality;
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  const io::DatasetSplit outer = io::make_split(ids, config.synth_test_fraction, mix_seed(config.seed, 0x71));
  const double inner_fraction = config.synth_validation_fraction / (1.0 - config.synth_test_fraction);
  const io::DatasetSplit inner = io::make_split(outer.train, inner_fraction, mix_seed(config.seed, 0x72));
  std::map<std::string, std::string> split_of;
  for (const auto& id : outer.validation) split_of[id] = "test";
  for (const auto& id : inner.validation) split_of[id] = "validation";
  for (const auto& id : inner.train) split_of[id] = "train";
  for (const auto& s : samples) {
    const fs::path image = io::save_sample(s, config.out);
    manifest.entries.push_back({s.id, image, split_of.at(s.id)});
  }
  const fs::path path = config.out / "manifest.ini";
  io::write_manifest(manifest, path);
  return path;
}

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> width;
  std::optional<std::string> variant;
  std::optional<std::string> out;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "Run config (INI)");
  app->add_option("--seed", f.seed, "Random seed (overrides [run] seed)");
  app->add_option("--width", f.width, "Width multiplier (overrides [network] width)");
  app->add_option("--variant", f.variant, "micronet252 | micronet508 | micronet_minus");
  app->add_option("--out", f.out, "Output directory (overrides [run] out)");
}

RunConfig resolve(const CommonFlags& f) {
  std::vector<std::string> problems;
  RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config, &problems);
  if (f.seed) c.seed = *f.seed;
  if (f.width) {
    c.width = *f.width;
    c.network_pinned = true;
  }
  if (f.variant) {
    try {
      c.variant = nn::parse_variant(*f.variant);
      c.network_pinned = true;
    } catch (const std::exception& e) {
      problems.push_back(std::string("--variant: ") + e.what());
    }
  }
  if (f.out) c.out = *f.out;
  auto more = c.problems();
  problems.insert(problems.end(), more.begin(), more.end());
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"micronet: cell and gland segmentation"};
  app.require_subcommand(1);

  CommonFlags train_f, predict_f, eval_f, sweep_f, synth_f, defaults_f;
  auto* train_cmd = app.add_subcommand("train", "Train a network from a manifest");
  add_common(train_cmd, train_f);

  auto* predict_cmd = app.add_subcommand("predict", "Segment images with a checkpoint");
  add_common(predict_cmd, predict_f);
  std::string predict_ckpt;
  std::vector<std::string> predict_images;
  std::string predict_stain;
  predict_cmd->add_option("--checkpoint", predict_ckpt, "Checkpoint archive")->required();
  predict_cmd->add_option("--stain-target", predict_stain, "Stain target file (H&E)");
  predict_cmd->add_option("images", predict_images, "Images (default: manifest test split)");

  auto* eval_cmd = app.add_subcommand("evaluate", "Score predicted masks against truth masks");
  add_common(eval_cmd, eval_f);
  std::string eval_pred, eval_truth;
  eval_cmd->add_option("--pred", eval_pred, "Directory of <id>_mask.png predictions")->required();
  eval_cmd->add_option("--truth", eval_truth, "Directory of <id>_mask truth rasters")->required();

  auto* sweep_cmd = app.add_subcommand("snr-sweep", "Evaluate a checkpoint under additive noise");
  add_common(sweep_cmd, sweep_f);
  std::string sweep_ckpt, sweep_grid, sweep_stain;
  sweep_cmd->add_option("--checkpoint", sweep_ckpt, "Checkpoint archive")->required();
  sweep_cmd->add_option("--grid", sweep_grid, "Comma-separated SNR values in dB (inf = clean)");
  sweep_cmd->add_option("--stain-target", sweep_stain, "Stain target file (H&E)");

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic dataset and manifest");
  add_common(synth_cmd, synth_f);
  std::optional<int> synth_n, synth_size;
  std::optional<double> synth_density;
  std::optional<std::string> synth_modality;
  synth_cmd->add_option("--n", synth_n, "Number of images");
  synth_cmd->add_option("--size", synth_size, "Image side in pixels");
  synth_cmd->add_option("--density", synth_density, "Fraction of the field covered by cells");
  synth_cmd->add_option("--modality", synth_modality, "fluorescence | he_rgb");

  auto* defaults_cmd = app.add_subcommand("defaults", "Print the default config");
  add_common(defaults_cmd, defaults_f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) {
      const fs::path dir = cmd_train(resolve(train_f));
      std::cout << dir.string() << "\n";
    } else if (*predict_cmd) {
      RunConfig c = resolve(predict_f);
      if (!predict_stain.empty()) c.stain_target = predict_stain;
      std::vector<fs::path> images(predict_images.begin(), predict_images.end());
      cmd_predict(c, predict_ckpt, images);
      std::cout << c.out.string() << "\n";
    } else if (*eval_cmd) {
      const RunConfig c = resolve(eval_f);
      const auto report = cmd_evaluate(eval_pred, eval_truth, c.out);
      std::cout << report.to_csv();
    } else if (*sweep_cmd) {
      RunConfig c = resolve(sweep_f);
      if (!sweep_stain.empty()) c.stain_target = sweep_stain;
      if (!sweep_grid.empty()) set_key(c, "sweep", "snr_db", sweep_grid);
      cmd_snr_sweep(c, sweep_ckpt);
      std::cout << c.out.string() << "\n";
    } else if (*synth_cmd) {
      RunConfig c = resolve(synth_f);
      if (synth_n) c.synth.n_images = *synth_n;
      if (synth_size) c.synth.size = *synth_size;
      if (synth_density) c.synth.density = *synth_density;
      if (synth_modality) c.modality = parse_modality(*synth_modality);
      const fs::path manifest = cmd_synth(c);
      std::cout << manifest.string() << "\n";
    } else if (*defaults_cmd) {
      std::cout << to_ini(resolve(defaults_f));
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace micronet::cli
