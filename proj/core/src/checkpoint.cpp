#include "micronet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "micronet/errors.hpp"

namespace micronet::ckpt {

namespace {

constexpr char kMagic[8] = {'M', 'I', 'C', 'R', 'O', 'N', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw IoError("cannot write checkpoint " + path.string());
  }
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void array(const std::vector<double>& v) {
    pod(static_cast<std::uint64_t>(v.size()));
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("error writing checkpoint " + path_.string());
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot read checkpoint " + path.string());
  }
  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    check();
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > (1u << 20)) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    check();
    return s;
  }
  std::vector<double> array() {
    const auto n = pod<std::uint64_t>();
    if (n > (std::uint64_t{1} << 34)) fail("implausible array length");
    std::vector<double> v(n);
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    check();
    return v;
  }
  [[noreturn]] void fail(const std::string& what) { throw IoError(path_.string() + ": " + what); }

 private:
  void check() {
    if (!in_) fail("truncated checkpoint");
  }
  std::ifstream in_;
  std::filesystem::path path_;
};

CheckpointInfo read_header(Reader& r) {
  char magic[8];
  for (char& c : magic) c = r.pod<char>();
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint archive");
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  CheckpointInfo info;
  info.variant.name = nn::parse_variant(r.str());
  info.variant.width_multiplier = r.pod<double>();
  info.variant.in_channels = r.pod<std::int32_t>();
  info.epoch = r.pod<std::int32_t>();
  info.val_loss = r.pod<double>();
  return info;
}

}  // namespace

void save(const nn::Network& net, const std::filesystem::path& path, int epoch, double val_loss) {
  const nn::NetVariant& v = net.graph().variant;
  Writer w(path);
  for (char c : kMagic) w.pod(c);
  w.pod(kVersion);
  w.str(to_string(v.name));
  w.pod(v.width_multiplier);
  w.pod(static_cast<std::int32_t>(v.in_channels));
  w.pod(static_cast<std::int32_t>(epoch));
  w.pod(val_loss);
  w.pod(static_cast<std::uint32_t>(net.parameters().size()));
  for (const auto& p : net.parameters()) {
    w.str(p.name);
    w.array(p.value);
  }
  w.pod(static_cast<std::uint32_t>(net.buffers().size()));
  for (const auto& b : net.buffers()) {
    w.str(b.name);
    w.array(b.value);
  }
  w.finish();
}

CheckpointInfo read_info(const std::filesystem::path& path) {
  Reader r(path);
  return read_header(r);
}

CheckpointInfo load(nn::Network& net, const std::filesystem::path& path) {
  Reader r(path);
  const CheckpointInfo info = read_header(r);
  const nn::NetVariant& v = net.graph().variant;
  if (info.variant.name != v.name || info.variant.width_multiplier != v.width_multiplier ||
      info.variant.in_channels != v.in_channels) {
    std::ostringstream msg;
    msg << path.string() << " holds " << to_string(info.variant.name) << " (width " << info.variant.width_multiplier
        << ", " << info.variant.in_channels << " input channels) but the network is " << to_string(v.name)
        << " (width " << v.width_multiplier << ", " << v.in_channels << " input channels)";
    throw ShapeError(msg.str());
  }
  if (!net.initialized()) net.initialize({});
  auto read_named = [&](auto& items, const char* what) {
    const auto n = r.pod<std::uint32_t>();
    if (n != items.size()) r.fail(std::string("wrong number of ") + what);
    for (auto& item : items) {
      const std::string name = r.str();
      std::vector<double> values = r.array();
      if (name != item.name) r.fail("expected " + std::string(what) + " '" + item.name + "', found '" + name + "'");
      if (values.size() != item.value.size()) r.fail("size mismatch for '" + name + "'");
      item.value = std::move(values);
    }
  };
  read_named(net.parameters(), "parameters");
  read_named(net.buffers(), "buffers");
  return info;
}

nn::Network load_network(const std::filesystem::path& path, CheckpointInfo* info) {
  const CheckpointInfo header = read_info(path);
  nn::Network net(nn::build_variant(header.variant));
  const CheckpointInfo loaded = load(net, path);
  if (info) *info = loaded;
  return net;
}

}  // namespace micronet::ckpt
