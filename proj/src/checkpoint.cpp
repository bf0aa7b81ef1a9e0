#include "flowcast/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <map>

#include "flowcast/errors.hpp"

namespace flowcast::nn {
namespace {

constexpr char kMagic[4] = {'F', 'C', 'K', 'P'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) {
    const auto u = static_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes(b) {}
  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw FormatError("truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::int64_t i64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return static_cast<std::int64_t>(v);
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return s;
  }
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(kCheckpointVersion);
  w.str(ckpt.kind);
  w.str(ckpt.config.dump());
  w.u32(static_cast<std::uint32_t>(ckpt.parameters.size()));
  for (const auto& [name, tensor] : ckpt.parameters) {
    w.str(name);
    const auto t = tensor.detach().to(torch::kFloat32).contiguous();
    w.u32(static_cast<std::uint32_t>(t.dim()));
    for (int64_t d : t.sizes()) w.i64(d);
    const float* p = t.data_ptr<float>();
    for (int64_t i = 0; i < t.numel(); ++i) w.u32(std::bit_cast<std::uint32_t>(p[i]));
  }
  return std::move(w.out);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("not a flowcast checkpoint");
  }
  Reader r(bytes);
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.kind = r.str();
  try {
    ckpt.config = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t ndim = r.u32();
    if (ndim > 8) throw FormatError("implausible tensor rank in checkpoint");
    std::vector<int64_t> dims;
    int64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      dims.push_back(r.i64());
      if (dims.back() < 0) throw FormatError("negative tensor dimension in checkpoint");
      numel *= dims.back();
    }
    r.need(static_cast<std::size_t>(numel) * 4);
    auto t = torch::empty(dims, torch::kFloat32);
    float* p = t.data_ptr<float>();
    for (int64_t k = 0; k < numel; ++k) p[k] = std::bit_cast<float>(r.u32());
    ckpt.parameters.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos != bytes.size()) throw FormatError("trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

Checkpoint capture(const torch::nn::Module& module, std::string kind, nlohmann::json config) {
  Checkpoint ckpt{std::move(kind), std::move(config), {}};
  for (const auto& item : module.named_parameters()) {
    ckpt.parameters.emplace_back(item.key(), item.value().detach().to(torch::kFloat32).clone());
  }
  return ckpt;
}

void restore(torch::nn::Module& module, const Checkpoint& ckpt, const std::string& expected_kind) {
  if (ckpt.kind != expected_kind) {
    throw ConfigError("checkpoint holds a '" + ckpt.kind + "' model, expected '" + expected_kind + "'");
  }
  std::map<std::string, torch::Tensor> by_name(ckpt.parameters.begin(), ckpt.parameters.end());
  auto params = module.named_parameters();
  if (params.size() != by_name.size()) throw ConfigError("checkpoint parameter count does not match the model");
  torch::NoGradGuard guard;
  for (auto& item : params) {
    const auto it = by_name.find(item.key());
    if (it == by_name.end()) throw ConfigError("checkpoint lacks parameter " + item.key());
    if (!it->second.sizes().equals(item.value().sizes())) throw ConfigError("shape mismatch for " + item.key());
    item.value().copy_(it->second);
  }
}

}  // namespace flowcast::nn
