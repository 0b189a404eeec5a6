#include "micronet_cli/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace micronet::cli {

namespace {

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& s) {
  double v = 0.0;
  const std::string t = trim(s);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) throw InvalidArgument("'" + s + "' is not a number");
  return v;
}

long long to_int(const std::string& s) {
  long long v = 0;
  const std::string t = trim(s);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) throw InvalidArgument("'" + s + "' is not an integer");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const std::string t = trim(s);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw InvalidArgument("'" + s + "' is not a non-negative integer");
  return v;
}

bool to_bool(const std::string& s) {
  const std::string t = trim(s);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw InvalidArgument("'" + s + "' is not a boolean");
}

std::string mode(const std::string& s) {
  const std::string t = trim(s);
  if (t != "auto" && t != "on" && t != "off") throw InvalidArgument("'" + s + "' must be auto, on or off");
  return t;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string num(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string scaling_name(io::Scaling s) {
  switch (s) {
    case io::Scaling::automatic: return "auto";
    case io::Scaling::native: return "native";
    case io::Scaling::min_max: return "min_max";
  }
  return "auto";
}

io::Scaling parse_scaling(const std::string& s) {
  const std::string t = trim(s);
  if (t == "auto") return io::Scaling::automatic;
  if (t == "native") return io::Scaling::native;
  if (t == "min_max") return io::Scaling::min_max;
  throw InvalidArgument("'" + s + "' must be auto, native or min_max");
}

struct Key {
  const char* section;
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MN_DOUBLE(sec, key, field) \
  Key { sec, key, [](RunConfig& c, const std::string& v) { c.field = to_double(v); }, [](const RunConfig& c) { return num(c.field); } }
#define MN_INT(sec, key, field)                                                                 \
  Key {                                                                                         \
    sec, key, [](RunConfig& c, const std::string& v) { c.field = static_cast<decltype(c.field)>(to_int(v)); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                              \
  }
#define MN_BOOL(sec, key, field) \
  Key { sec, key, [](RunConfig& c, const std::string& v) { c.field = to_bool(v); }, [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); } }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"run", "seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); },
          [](const RunConfig& c) { return std::to_string(c.seed); }},
      Key{"run", "out", [](RunConfig& c, const std::string& v) { c.out = trim(v); },
          [](const RunConfig& c) { return c.out.generic_string(); }},
      Key{"network", "variant", [](RunConfig& c, const std::string& v) { c.variant = nn::parse_variant(trim(v)); },
          [](const RunConfig& c) { return nn::to_string(c.variant); }},
      MN_DOUBLE("network", "width", width),
      Key{"data", "manifest", [](RunConfig& c, const std::string& v) { c.manifest = trim(v); },
          [](const RunConfig& c) { return c.manifest.generic_string(); }},
      Key{"data", "modality", [](RunConfig& c, const std::string& v) { c.modality = parse_modality(trim(v)); },
          [](const RunConfig& c) { return to_string(c.modality); }},
      Key{"data", "scaling", [](RunConfig& c, const std::string& v) { c.scaling = parse_scaling(v); },
          [](const RunConfig& c) { return scaling_name(c.scaling); }},
      MN_DOUBLE("data", "validation_fraction", validation_fraction),
      Key{"data", "stain_target", [](RunConfig& c, const std::string& v) { c.stain_target = trim(v); },
          [](const RunConfig& c) { return c.stain_target.generic_string(); }},
      MN_INT("patch", "sample_size", sample_size),
      MN_INT("patch", "crop_size", crop_size),
      MN_BOOL("augment", "enabled", augment_enabled),
      MN_BOOL("augment", "distortion", augment.distortion),
      MN_DOUBLE("augment", "k1_min", augment.k1_magnitude[0]),
      MN_DOUBLE("augment", "k1_max", augment.k1_magnitude[1]),
      MN_DOUBLE("augment", "k2_min", augment.k2_magnitude[0]),
      MN_DOUBLE("augment", "k2_max", augment.k2_magnitude[1]),
      Key{"augment", "noise", [](RunConfig& c, const std::string& v) { c.noise_mode = mode(v); },
          [](const RunConfig& c) { return c.noise_mode; }},
      MN_DOUBLE("augment", "noise_variance_min", augment.noise_params.variance_range[0]),
      MN_DOUBLE("augment", "noise_variance_max", augment.noise_params.variance_range[1]),
      Key{"augment", "blur", [](RunConfig& c, const std::string& v) { c.blur_mode = mode(v); },
          [](const RunConfig& c) { return c.blur_mode; }},
      MN_INT("augment", "blur_kernel", augment.blur_params.kernel_size),
      MN_DOUBLE("augment", "blur_sigma_min", augment.blur_params.sigma_range[0]),
      MN_DOUBLE("augment", "blur_sigma_max", augment.blur_params.sigma_range[1]),
      MN_BOOL("augment", "flip_rotate", augment.flip_rotate),
      MN_DOUBLE("augment", "probability", augment.probability),
      MN_INT("train", "epochs", train.epochs),
      MN_DOUBLE("train", "base_lr", train.base_lr),
      MN_INT("train", "batch_size", train.batch_size),
      MN_INT("train", "patches_per_image", train.patches_per_image),
      MN_INT("train", "max_steps", train.max_steps),
      MN_DOUBLE("train", "w0", train.w0),
      MN_DOUBLE("train", "sigma", train.sigma),
      MN_DOUBLE("train", "init_stddev", train.init_stddev),
      MN_DOUBLE("train", "adam_beta1", train.adam.beta1),
      MN_DOUBLE("train", "adam_beta2", train.adam.beta2),
      MN_DOUBLE("train", "adam_epsilon", train.adam.epsilon),
      MN_INT("postprocess", "min_area_px", post.min_area_px),
      MN_BOOL("postprocess", "fill_holes", post.fill_holes),
      MN_INT("postprocess", "connectivity", post.connectivity),
      MN_BOOL("postprocess", "overlay", overlay),
      Key{"sweep", "snr_db",
          [](RunConfig& c, const std::string& v) {
            c.snr_grid.clear();
            for (const auto& item : split_list(v))
              c.snr_grid.push_back(item == "inf" ? augment::snr_clean : to_double(item));
          },
          [](const RunConfig& c) {
            std::vector<std::string> items;
            for (double d : c.snr_grid) items.push_back(std::isinf(d) ? "inf" : num(d));
            return join(items, ", ");
          }},
      Key{"sweep", "seeds",
          [](RunConfig& c, const std::string& v) {
            c.sweep_seeds.clear();
            for (const auto& item : split_list(v)) c.sweep_seeds.push_back(to_u64(item));
          },
          [](const RunConfig& c) {
            std::vector<std::string> items;
            for (auto s : c.sweep_seeds) items.push_back(std::to_string(s));
            return join(items, ", ");
          }},
      Key{"sweep", "split", [](RunConfig& c, const std::string& v) { c.sweep_split = trim(v); },
          [](const RunConfig& c) { return c.sweep_split; }},
      MN_INT("synth", "n_images", synth.n_images),
      MN_INT("synth", "size", synth.size),
      MN_DOUBLE("synth", "density", synth.density),
      MN_INT("synth", "min_objects", synth.min_objects),
      MN_DOUBLE("synth", "validation_fraction", synth_validation_fraction),
      MN_DOUBLE("synth", "test_fraction", synth_test_fraction),
  };
  return table;
}

#undef MN_DOUBLE
#undef MN_INT
#undef MN_BOOL

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : InvalidArgument("invalid configuration:\n  " + join(problems, "\n  ")), problems_(std::move(problems)) {}

nn::NetVariant RunConfig::net_variant() const {
  nn::NetVariant v;
  v.name = variant;
  v.width_multiplier = width;
  v.in_channels = channel_count(modality);
  return v;
}

preprocess::PatchSpec RunConfig::patch_spec() const {
  preprocess::PatchSpec p = preprocess::PatchSpec::for_crop(nn::crop_size(variant));
  if (crop_size > 0) p.crop_size = crop_size;
  if (sample_size > 0) p.sample_size = sample_size;
  return p;
}

augment::Recipe RunConfig::recipe() const {
  augment::Recipe r = augment;
  const augment::Recipe by_modality = augment::Recipe::for_modality(modality);
  r.noise = noise_mode == "auto" ? by_modality.noise : noise_mode == "on";
  r.blur = blur_mode == "auto" ? by_modality.blur : blur_mode == "on";
  return r;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t = train;
  t.seed = seed;
  t.patch = patch_spec();
  t.augment = recipe();
  t.augment_enabled = augment_enabled;
  return t;
}

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> out;
  auto check = [&](const char* what, const auto& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      out.push_back(std::string(what) + ": " + e.what());
    }
  };
  check("network", [&] { net_variant().validate(); });
  const int expected_crop = nn::crop_size(variant);
  if (crop_size > 0 && crop_size != expected_crop)
    out.push_back("patch: crop_size " + std::to_string(crop_size) + " is inconsistent with variant " +
                  nn::to_string(variant) + " (needs " + std::to_string(expected_crop) + ")");
  check("patch", [&] { patch_spec().validate(); });
  check("augment", [&] { recipe().validate(); });
  check("train", [&] {
    train::TrainConfig t = train_config();
    t.patch = preprocess::PatchSpec::for_crop(expected_crop);  // crop problems are reported above
    t.validate();
  });
  check("postprocess", [&] { post.validate(); });
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    out.push_back("data: validation_fraction must lie in [0, 1)");
  if (snr_grid.empty()) out.push_back("sweep: snr_db is empty");
  for (double d : snr_grid)
    if (std::isnan(d) || (std::isinf(d) && d < 0)) out.push_back("sweep: snr_db values must be numbers or inf");
  if (sweep_seeds.empty()) out.push_back("sweep: seeds is empty");
  if (sweep_split != "train" && sweep_split != "validation" && sweep_split != "test" && sweep_split != "all")
    out.push_back("sweep: split must be train, validation, test or all");
  check("synth", [&] { synth.validate(); });
  if (!(synth_validation_fraction >= 0.0 && synth_test_fraction >= 0.0 &&
        synth_validation_fraction + synth_test_fraction < 1.0))
    out.push_back("synth: validation_fraction and test_fraction must be >= 0 and sum below 1");
  return out;
}

void RunConfig::validate() const {
  auto p = problems();
  if (!p.empty()) throw ConfigError(std::move(p));
}

RunConfig parse_config(const std::string& ini_text, std::vector<std::string>* sink) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError({std::string("syntax: ") + e.message() + " (line " + std::to_string(e.line()) + ")"});
  }
  RunConfig c;
  std::vector<std::string> problems;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      problems.push_back("key '" + section + "' outside any section");
      continue;
    }
    for (const auto& [name, value] : body) {
      const Key* key = nullptr;
      for (const auto& k : keys())
        if (section == k.section && name == k.name) key = &k;
      if (!key) {
        problems.push_back("unknown key [" + section + "] " + name);
        continue;
      }
      if (section == "network") c.network_pinned = true;
      try {
        key->set(c, value.data());
      } catch (const std::exception& e) {
        problems.push_back("[" + section + "] " + name + ": " + e.what());
      }
    }
  }
  if (sink) {
    sink->insert(sink->end(), problems.begin(), problems.end());
  } else if (!problems.empty()) {
    throw ConfigError(std::move(problems));
  }
  return c;
}

void set_key(RunConfig& config, const std::string& section, const std::string& key, const std::string& value) {
  for (const auto& k : keys()) {
    if (section != k.section || key != k.name) continue;
    try {
      k.set(config, value);
    } catch (const std::exception& e) {
      throw ConfigError({"[" + section + "] " + key + ": " + e.what()});
    }
    if (section == "network") config.network_pinned = true;
    return;
  }
  throw ConfigError({"unknown key [" + section + "] " + key});
}

RunConfig load_config(const std::filesystem::path& path, std::vector<std::string>* problems) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), problems);
}

std::string to_ini(const RunConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& k : keys()) {
    if (section != k.section) {
      if (!section.empty()) out << '\n';
      section = k.section;
      out << '[' << section << "]\n";
    }
    out << k.name << " = " << k.get(config) << '\n';
  }
  return out.str();
}

}  // namespace micronet::cli
