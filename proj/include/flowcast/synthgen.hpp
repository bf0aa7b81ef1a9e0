#pragma once

// Deterministic moving-shapes scenes with analytic ground-truth flow.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowcast/fields.hpp"

namespace flowcast {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SceneConfig {
  int height = 64;
  int width = 128;
  int n_objects_min = 2;
  int n_objects_max = 4;
  bool rectangles = true;
  bool ellipses = true;
  /// Full side lengths in pixels.
  int size_min = 8;
  int size_max = 22;
  Range velocity_u{-3.0, 3.0};
  Range velocity_v{-1.0, 1.0};
  Range background_u{0.0, 0.0};
  Range background_v{0.0, 0.0};
  Range acceleration_u{0.0, 0.0};
  Range acceleration_v{0.0, 0.0};
  Range score{0.5, 1.0};
  int frames = 16;
  std::uint64_t seed = 0;

  /// Throws ConfigError when no scene can satisfy the config.
  void validate() const;
};

void to_json(nlohmann::json& j, const Range& r);
void from_json(const nlohmann::json& j, Range& r);
void to_json(nlohmann::json& j, const SceneConfig& c);
void from_json(const nlohmann::json& j, SceneConfig& c);

enum class ShapeKind { kRectangle, kEllipse };

/// Per-object trajectory facts, exposed so tests can rebuild ownership independently.
struct ObjectTrack {
  std::int64_t id = 0;
  int class_id = 1;
  double score = 1.0;
  ShapeKind shape = ShapeKind::kRectangle;
  int size_x = 1;
  int size_y = 1;
  /// Integer top-left corner per frame.
  std::vector<int> x;
  std::vector<int> y;
};

struct Scene {
  std::vector<ObjectTrack> objects;  // index order = painting order (later is nearer)
  double background_u = 0.0;
  double background_v = 0.0;
};

/// Whether pixel (row, col) is covered by the object when its corner sits at (x0, y0).
bool shape_covers(const ObjectTrack& obj, int x0, int y0, int row, int col);

Scene simulate(const SceneConfig& config);
SequenceSample render(const Scene& scene, const SceneConfig& config);
SequenceSample generate(const SceneConfig& config);

struct InstanceRecord {
  std::int64_t id = 0;
  int class_id = 1;
  double score = 1.0;
  std::string mask;  // relative path
};

/// One line of a dataset manifest.
struct ManifestRecord {
  int index = 0;
  std::uint64_t seed = 0;
  std::string split;  // "train" | "val"
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<std::string> flows;
  std::vector<std::string> semantics;
  std::vector<std::vector<InstanceRecord>> instances;
  nlohmann::json config;
};

void to_json(nlohmann::json& j, const ManifestRecord& r);
void from_json(const nlohmann::json& j, ManifestRecord& r);

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
};

/// Writes sequences seeded config.seed + i into out_dir with manifest.jsonl.
/// Even seeds go to the train split, odd seeds to val.
Manifest emit_dataset(const SceneConfig& config, int n_sequences, const std::filesystem::path& out_dir);

Manifest load_manifest(const std::filesystem::path& manifest_path);
SequenceSample load_sequence(const Manifest& manifest, const ManifestRecord& record);
std::vector<SequenceSample> load_split(const Manifest& manifest, const std::string& split);

inline constexpr const char* kManifestName = "manifest.jsonl";

}  // namespace flowcast
