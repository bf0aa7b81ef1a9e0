#include "flowcast/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

namespace flowcast {
namespace {

// Distribution mapping is written out so that output is bit-identical across
// standard library implementations.
class SceneRng {
 public:
  explicit SceneRng(std::uint64_t seed) : engine_(seed) {}

  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(const Range& r) { return r.lo + (r.hi - r.lo) * unit(); }
  int uniform_int(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<int>(engine_() % span);
  }

 private:
  std::mt19937_64 engine_;
};

/// Moves a 1D position inside [0, limit], reflecting off both ends.
void advance(double& pos, double& vel, double acc, double limit) {
  pos += vel;
  vel += acc;
  if (limit <= 0.0) {
    pos = 0.0;
    return;
  }
  for (int guard = 0; guard < 8 && (pos < 0.0 || pos > limit); ++guard) {
    if (pos < 0.0) pos = -pos;
    if (pos > limit) pos = 2.0 * limit - pos;
    vel = -vel;
  }
  pos = std::clamp(pos, 0.0, limit);
}

int to_pixel(double pos) { return static_cast<int>(std::floor(pos + 0.5)); }

std::string frame_name(const char* stem, int frame, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%02d.%s", stem, frame, ext);
  return buf;
}

}  // namespace

void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }

void from_json(const nlohmann::json& j, Range& r) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("range must be a two-element array");
  r.lo = j[0].get<double>();
  r.hi = j[1].get<double>();
}

void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = nlohmann::json{{"height", c.height},
                     {"width", c.width},
                     {"n_objects_min", c.n_objects_min},
                     {"n_objects_max", c.n_objects_max},
                     {"rectangles", c.rectangles},
                     {"ellipses", c.ellipses},
                     {"size_min", c.size_min},
                     {"size_max", c.size_max},
                     {"velocity_u", c.velocity_u},
                     {"velocity_v", c.velocity_v},
                     {"background_u", c.background_u},
                     {"background_v", c.background_v},
                     {"acceleration_u", c.acceleration_u},
                     {"acceleration_v", c.acceleration_v},
                     {"score", c.score},
                     {"frames", c.frames},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SceneConfig& c) {
  SceneConfig d;
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.n_objects_min = j.value("n_objects_min", d.n_objects_min);
  c.n_objects_max = j.value("n_objects_max", d.n_objects_max);
  c.rectangles = j.value("rectangles", d.rectangles);
  c.ellipses = j.value("ellipses", d.ellipses);
  c.size_min = j.value("size_min", d.size_min);
  c.size_max = j.value("size_max", d.size_max);
  c.velocity_u = j.value("velocity_u", d.velocity_u);
  c.velocity_v = j.value("velocity_v", d.velocity_v);
  c.background_u = j.value("background_u", d.background_u);
  c.background_v = j.value("background_v", d.background_v);
  c.acceleration_u = j.value("acceleration_u", d.acceleration_u);
  c.acceleration_v = j.value("acceleration_v", d.acceleration_v);
  c.score = j.value("score", d.score);
  c.frames = j.value("frames", d.frames);
  c.seed = j.value("seed", d.seed);
}

void SceneConfig::validate() const {
  if (height <= 0 || width <= 0) throw ConfigError("frame dimensions must be positive");
  if (frames < 2) throw ConfigError("a scene needs at least two frames");
  if (n_objects_min < 0 || n_objects_max < n_objects_min) throw ConfigError("bad object count range");
  if (size_min < 1 || size_max < size_min) throw ConfigError("bad object size range");
  if (size_max > std::min(height, width)) {
    throw ConfigError("objects up to " + std::to_string(size_max) + " px do not fit a " +
                      std::to_string(height) + "x" + std::to_string(width) + " frame");
  }
  if (!rectangles && !ellipses) throw ConfigError("no shape kinds enabled");
  for (const Range* r : {&velocity_u, &velocity_v, &background_u, &background_v, &acceleration_u,
                         &acceleration_v, &score}) {
    if (!(r->lo <= r->hi) || !std::isfinite(r->lo) || !std::isfinite(r->hi)) {
      throw ConfigError("range bounds must be finite and ordered");
    }
  }
  if (score.lo < 0.0 || score.hi > 1.0) throw ConfigError("score range must lie in [0,1]");
}

bool shape_covers(const ObjectTrack& obj, int x0, int y0, int row, int col) {
  const int dx = col - x0;
  const int dy = row - y0;
  if (dx < 0 || dy < 0 || dx >= obj.size_x || dy >= obj.size_y) return false;
  if (obj.shape == ShapeKind::kRectangle) return true;
  const double ax = obj.size_x / 2.0, ay = obj.size_y / 2.0;
  const double nx = (dx + 0.5 - ax) / ax, ny = (dy + 0.5 - ay) / ay;
  return nx * nx + ny * ny <= 1.0;
}

Scene simulate(const SceneConfig& config) {
  config.validate();
  SceneRng rng(config.seed);
  Scene scene;
  scene.background_u = rng.uniform(config.background_u);
  scene.background_v = rng.uniform(config.background_v);
  const int n = rng.uniform_int(config.n_objects_min, config.n_objects_max);
  for (int k = 0; k < n; ++k) {
    ObjectTrack obj;
    obj.id = k;
    obj.class_id = rng.uniform_int(1, kNumClasses);
    obj.score = rng.uniform(config.score);
    if (config.rectangles && config.ellipses) {
      obj.shape = rng.uniform_int(0, 1) == 0 ? ShapeKind::kRectangle : ShapeKind::kEllipse;
    } else {
      obj.shape = config.rectangles ? ShapeKind::kRectangle : ShapeKind::kEllipse;
    }
    obj.size_x = rng.uniform_int(config.size_min, config.size_max);
    obj.size_y = rng.uniform_int(config.size_min, config.size_max);
    const double limit_x = config.width - obj.size_x;
    const double limit_y = config.height - obj.size_y;
    double px = limit_x * rng.unit();
    double py = limit_y * rng.unit();
    double vx = rng.uniform(config.velocity_u);
    double vy = rng.uniform(config.velocity_v);
    const double ax = rng.uniform(config.acceleration_u);
    const double ay = rng.uniform(config.acceleration_v);
    for (int t = 0; t < config.frames; ++t) {
      if (t > 0) {
        advance(px, vx, ax, limit_x);
        advance(py, vy, ay, limit_y);
      }
      obj.x.push_back(to_pixel(px));
      obj.y.push_back(to_pixel(py));
    }
    scene.objects.push_back(std::move(obj));
  }
  return scene;
}

SequenceSample render(const Scene& scene, const SceneConfig& config) {
  const int h = config.height, w = config.width, frames = config.frames;
  SequenceSample sample;
  sample.seed = config.seed;
  sample.config_json = nlohmann::json(config).dump();

  // owner[t](r, c) = object index + 1, 0 for background
  std::vector<Grid<int>> owners;
  for (int t = 0; t < frames; ++t) {
    Grid<int> owner(h, w, 0);
    for (std::size_t k = 0; k < scene.objects.size(); ++k) {
      const auto& obj = scene.objects[k];
      const int x0 = obj.x[t], y0 = obj.y[t];
      for (int r = std::max(0, y0); r < std::min(h, y0 + obj.size_y); ++r) {
        for (int c = std::max(0, x0); c < std::min(w, x0 + obj.size_x); ++c) {
          if (shape_covers(obj, x0, y0, r, c)) owner(r, c) = static_cast<int>(k) + 1;
        }
      }
    }
    owners.push_back(std::move(owner));
  }

  for (int t = 0; t < frames; ++t) {
    const auto& owner = owners[t];
    SemanticMap sem(h, w);
    std::vector<InstanceMask> frame;
    for (std::size_t k = 0; k < scene.objects.size(); ++k) {
      const auto& obj = scene.objects[k];
      InstanceMask inst{obj.id, obj.class_id, obj.score, MaskGrid(h, w, 0)};
      bool any = false;
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          if (owner(r, c) == static_cast<int>(k) + 1) {
            inst.mask(r, c) = 1;
            sem.labels(r, c) = static_cast<std::uint8_t>(obj.class_id);
            any = true;
          }
        }
      }
      if (any) frame.push_back(std::move(inst));
    }
    sample.semantics.push_back(std::move(sem));
    sample.instances.push_back(std::move(frame));

    if (t + 1 < frames) {
      FlowField flow(h, w, static_cast<float>(scene.background_u), static_cast<float>(scene.background_v));
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          const int k = owner(r, c) - 1;
          if (k < 0) continue;
          const auto& obj = scene.objects[static_cast<std::size_t>(k)];
          flow.u(r, c) = static_cast<float>(obj.x[t + 1] - obj.x[t]);
          flow.v(r, c) = static_cast<float>(obj.y[t + 1] - obj.y[t]);
        }
      }
      sample.flows.push_back(std::move(flow));
    }
  }
  return sample;
}

SequenceSample generate(const SceneConfig& config) { return render(simulate(config), config); }

void to_json(nlohmann::json& j, const ManifestRecord& r) {
  nlohmann::json inst = nlohmann::json::array();
  for (const auto& frame : r.instances) {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& i : frame) {
      f.push_back({{"id", i.id}, {"class", i.class_id}, {"score", i.score}, {"mask", i.mask}});
    }
    inst.push_back(std::move(f));
  }
  j = nlohmann::json{{"index", r.index},         {"seed", r.seed},           {"split", r.split},
                     {"frames", r.frames},       {"height", r.height},       {"width", r.width},
                     {"flows", r.flows},         {"semantics", r.semantics}, {"instances", std::move(inst)},
                     {"config", r.config}};
}

void from_json(const nlohmann::json& j, ManifestRecord& r) {
  r.index = j.at("index").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.split = j.at("split").get<std::string>();
  r.frames = j.at("frames").get<int>();
  r.height = j.at("height").get<int>();
  r.width = j.at("width").get<int>();
  r.flows = j.at("flows").get<std::vector<std::string>>();
  r.semantics = j.at("semantics").get<std::vector<std::string>>();
  r.instances.clear();
  for (const auto& frame : j.at("instances")) {
    std::vector<InstanceRecord> f;
    for (const auto& i : frame) {
      f.push_back({i.at("id").get<std::int64_t>(), i.at("class").get<int>(), i.at("score").get<double>(),
                   i.at("mask").get<std::string>()});
    }
    r.instances.push_back(std::move(f));
  }
  r.config = j.value("config", nlohmann::json::object());
}

Manifest emit_dataset(const SceneConfig& config, int n_sequences, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (n_sequences < 1) throw ConfigError("n_sequences must be positive");
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  Manifest manifest{out_dir, {}};
  for (int i = 0; i < n_sequences; ++i) {
    SceneConfig seq_config = config;
    seq_config.seed = config.seed + static_cast<std::uint64_t>(i);
    const SequenceSample sample = generate(seq_config);

    char dir_name[32];
    std::snprintf(dir_name, sizeof(dir_name), "seq_%04d", i);
    fs::create_directories(out_dir / dir_name, ec);
    if (ec) throw IoError("cannot create sequence directory: " + ec.message());

    ManifestRecord rec;
    rec.index = i;
    rec.seed = seq_config.seed;
    rec.split = seq_config.seed % 2 == 0 ? "train" : "val";
    rec.frames = sample.frames();
    rec.height = sample.height();
    rec.width = sample.width();
    rec.config = seq_config;
    for (int t = 0; t < sample.frames(); ++t) {
      if (t + 1 < sample.frames()) {
        const std::string rel = std::string(dir_name) + "/" + frame_name("flow", t, "flo");
        flow_write(sample.flows[static_cast<std::size_t>(t)], out_dir / rel);
        rec.flows.push_back(rel);
      }
      const std::string sem_rel = std::string(dir_name) + "/" + frame_name("sem", t, "pgm");
      label_write(sample.semantics[static_cast<std::size_t>(t)].labels, out_dir / sem_rel);
      rec.semantics.push_back(sem_rel);
      std::vector<InstanceRecord> frame;
      for (const auto& inst : sample.instances[static_cast<std::size_t>(t)]) {
        char inst_name[64];
        std::snprintf(inst_name, sizeof(inst_name), "/inst_%02d_%03lld.pgm", t, static_cast<long long>(inst.id));
        const std::string rel = std::string(dir_name) + inst_name;
        label_write(inst.mask, out_dir / rel);
        frame.push_back({inst.id, inst.class_id, inst.score, rel});
      }
      rec.instances.push_back(std::move(frame));
    }
    manifest.records.push_back(std::move(rec));
  }

  std::ofstream out(out_dir / kManifestName, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + out_dir.string());
  for (const auto& rec : manifest.records) out << nlohmann::json(rec).dump() << '\n';
  if (!out) throw IoError("manifest write failed");
  return manifest;
}

Manifest load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  Manifest manifest{manifest_path.parent_path(), {}};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      manifest.records.push_back(nlohmann::json::parse(line).get<ManifestRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return manifest;
}

SequenceSample load_sequence(const Manifest& manifest, const ManifestRecord& record) {
  SequenceSample sample;
  sample.seed = record.seed;
  sample.config_json = record.config.dump();
  for (const auto& f : record.flows) sample.flows.push_back(flow_read(manifest.root / f));
  for (const auto& s : record.semantics) {
    SemanticMap sem;
    sem.labels = label_read(manifest.root / s);
    sample.semantics.push_back(std::move(sem));
  }
  for (const auto& frame : record.instances) {
    std::vector<InstanceMask> list;
    for (const auto& i : frame) list.push_back({i.id, i.class_id, i.score, label_read(manifest.root / i.mask)});
    sample.instances.push_back(std::move(list));
  }
  sample.validate();
  return sample;
}

std::vector<SequenceSample> load_split(const Manifest& manifest, const std::string& split) {
  std::vector<SequenceSample> out;
  for (const auto& rec : manifest.records) {
    if (split.empty() || rec.split == split) out.push_back(load_sequence(manifest, rec));
  }
  return out;
}

}  // namespace flowcast
