#include "rcnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rcnet {

namespace {

class Writer {
 public:
  void bytes(const char* p, std::size_t n) { out_.append(p, n); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) u8(static_cast<std::uint8_t>(v >> s));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > in_.size())
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= std::uint16_t(std::uint8_t(in_[pos_++])) << (8 * i);
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(in_[pos_++])) << (8 * i);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ModelParams<float>& params) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const RCNetConfig& c = params.config();
  for (std::uint32_t ch : c.channels) w.u32(ch);
  w.u32(c.convs_per_block);
  w.u32(c.in_channels);
  w.u32(c.num_classes);
  w.u32(static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u8(static_cast<std::uint8_t>(e.value.rank()));
    for (Index d : e.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.value.data()) w.f32(v);
  }
  return w.take();
}

ModelParams<float> deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string(kCheckpointMagic, 4))
    throw CheckpointError("checkpoint magic check failed: expected \"RCN1\"");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  RCNetConfig config;
  for (auto& ch : config.channels) ch = r.u32("config");
  config.convs_per_block = r.u32("config");
  config.in_channels = r.u32("config");
  config.num_classes = r.u32("config");
  std::vector<ParamSpec> layout;
  try {
    layout = param_layout(config);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }

  const std::uint32_t count = r.u32("tensor count");
  if (count != layout.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, config expects " +
                          std::to_string(layout.size()));

  std::vector<NamedTensor<float>> entries;
  entries.reserve(count);
  for (const ParamSpec& spec : layout) {
    const std::string name = r.str(r.u16("name length"), "name");
    if (name != spec.name)
      throw CheckpointError("checkpoint tensor '" + name + "' where '" + spec.name +
                            "' was expected");
    const std::uint8_t rank = r.u8("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("dims");
    if (shape != spec.shape)
      throw CheckpointError("checkpoint shape mismatch for '" + name + "': " + to_string(shape) +
                            " vs expected " + to_string(spec.shape));
    Tensor<float> t(shape);
    r.need(static_cast<std::size_t>(t.size()) * 4, "payload");
    for (Index i = 0; i < t.size(); ++i) t[i] = r.f32("payload");
    entries.push_back({name, std::move(t), spec.learnable});
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");
  return ModelParams<float>(config, std::move(entries));
}

void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing '" + path.string() + "'");
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace rcnet
