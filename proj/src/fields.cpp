#include "flowcast/fields.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace flowcast {
namespace {

constexpr char kFlowMagic[4] = {'P', 'I', 'E', 'H'};
constexpr std::size_t kFlowHeaderBytes = 12;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void validate_flow(const FlowField& flow) {
  require_same_shape(flow.u, flow.v, "flow u/v");
  auto finite = [](float x) { return std::isfinite(x); };
  if (!std::ranges::all_of(flow.u.values(), finite) || !std::ranges::all_of(flow.v.values(), finite)) {
    throw FormatError("flow field contains non-finite values");
  }
}

BBox tight_bbox(const MaskGrid& mask) {
  int x0 = mask.width(), y0 = mask.height(), x1 = -1, y1 = -1;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (mask(r, c) == 0) continue;
      x0 = std::min(x0, c);
      x1 = std::max(x1, c);
      y0 = std::min(y0, r);
      y1 = std::max(y1, r);
    }
  }
  if (x1 < 0) return BBox::Empty();
  return BBox{x0, y0, x1 + 1, y1 + 1, false};
}

long mask_area(const MaskGrid& mask) {
  return static_cast<long>(std::ranges::count_if(mask.values(), [](std::uint8_t m) { return m != 0; }));
}

void validate_instance(const InstanceMask& inst) {
  if (inst.class_id < 1 || inst.class_id > kNumClasses) {
    throw ConfigError("instance class " + std::to_string(inst.class_id) + " outside 1.." +
                      std::to_string(kNumClasses));
  }
  if (!(inst.score >= 0.0 && inst.score <= 1.0)) throw ConfigError("instance score outside [0,1]");
  if (!std::ranges::all_of(inst.mask.values(), [](std::uint8_t m) { return m <= 1; })) {
    throw ConfigError("instance mask is not binary");
  }
}

void SequenceSample::validate() const {
  const int n = frames();
  if (n < 1) throw ShapeError("sequence has no frames");
  if (static_cast<int>(flows.size()) != n - 1) {
    throw ShapeError("sequence has " + std::to_string(flows.size()) + " flows for " +
                     std::to_string(n) + " frames");
  }
  if (static_cast<int>(instances.size()) != n) throw ShapeError("instance lists do not match frame count");
  const auto& ref = semantics.front().labels;
  for (const auto& s : semantics) require_same_shape(s.labels, ref, "semantic map");
  for (const auto& f : flows) {
    require_same_shape(f.u, ref, "flow");
    validate_flow(f);
  }
  for (const auto& frame : instances) {
    std::set<std::int64_t> ids;
    for (const auto& inst : frame) {
      require_same_shape(inst.mask, ref, "instance mask");
      validate_instance(inst);
      if (!ids.insert(inst.id).second) throw ConfigError("duplicate instance id within a frame");
    }
  }
}

double bbox_iou(const BBox& a, const BBox& b) {
  if (a.empty || b.empty) return 0.0;
  const long iw = std::max(0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const long ih = std::max(0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const long inter = iw * ih;
  const long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double mask_iou(const MaskGrid& a, const MaskGrid& b) {
  require_same_shape(a, b, "mask_iou");
  long inter = 0, uni = 0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const bool x = av[i] != 0, y = bv[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::uint8_t> flow_encode(const FlowField& field) {
  validate_flow(field);
  if (field.width() <= 0 || field.height() <= 0) throw FormatError("flow dimensions must be positive");
  std::vector<std::uint8_t> out;
  out.reserve(kFlowHeaderBytes + field.u.size() * 8);
  out.insert(out.end(), std::begin(kFlowMagic), std::end(kFlowMagic));
  put_u32(out, static_cast<std::uint32_t>(field.width()));
  put_u32(out, static_cast<std::uint32_t>(field.height()));
  const auto u = field.u.values();
  const auto v = field.v.values();
  for (std::size_t i = 0; i < u.size(); ++i) {
    put_u32(out, std::bit_cast<std::uint32_t>(u[i]));
    put_u32(out, std::bit_cast<std::uint32_t>(v[i]));
  }
  return out;
}

FlowField flow_decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kFlowHeaderBytes) throw FormatError("flow file shorter than header");
  if (!std::equal(std::begin(kFlowMagic), std::end(kFlowMagic), bytes.begin())) {
    throw FormatError("bad flow magic");
  }
  const auto width = static_cast<std::int32_t>(get_u32(bytes.data() + 4));
  const auto height = static_cast<std::int32_t>(get_u32(bytes.data() + 8));
  if (width <= 0 || height <= 0) throw FormatError("nonpositive flow dimensions");
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() != kFlowHeaderBytes + count * 8) {
    throw FormatError("flow payload is " + std::to_string(bytes.size() - kFlowHeaderBytes) +
                      " bytes, expected " + std::to_string(count * 8));
  }
  FlowField field(height, width);
  auto u = field.u.values();
  auto v = field.v.values();
  const std::uint8_t* p = bytes.data() + kFlowHeaderBytes;
  for (std::size_t i = 0; i < count; ++i, p += 8) {
    u[i] = std::bit_cast<float>(get_u32(p));
    v[i] = std::bit_cast<float>(get_u32(p + 4));
  }
  return field;
}

void flow_write(const FlowField& field, const std::filesystem::path& path) {
  write_all(path, flow_encode(field));
}

FlowField flow_read(const std::filesystem::path& path) { return flow_decode(read_all(path)); }

void label_write(const LabelGrid& labels, const std::filesystem::path& path) {
  const std::string header =
      "P5\n" + std::to_string(labels.width()) + " " + std::to_string(labels.height()) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), labels.values().begin(), labels.values().end());
  write_all(path, bytes);
}

LabelGrid label_read(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  // Header tokens are whitespace separated; a single whitespace byte precedes the raster.
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    return tok;
  };
  if (next_token() != "P5") throw FormatError("not a binary PGM: " + path.string());
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_token());
    height = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw FormatError("malformed PGM header: " + path.string());
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) throw FormatError("unsupported PGM: " + path.string());
  ++pos;
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() < pos + count) throw FormatError("truncated PGM: " + path.string());
  LabelGrid labels(height, width);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), count, labels.values().begin());
  return labels;
}

}  // namespace flowcast
