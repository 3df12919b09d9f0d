#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dslab/error.hpp"

namespace dslab {

// Single-channel depth image; values are meters in [0, max_range].
struct DepthImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> depth;  // row-major meters
  double max_range = 10.0;

  std::size_t pixels() const { return width * height; }
  double at(std::size_t x, std::size_t y) const {
    return depth[y * width + x];
  }
  // consumers that want [0,1] input divide by max_range
  double normalized(std::size_t idx) const { return depth[idx] / max_range; }
};

struct BBox {
  std::size_t x = 0, y = 0, w = 0, h = 0;
};

struct ObjectInstance {
  std::string label;
  BBox bbox;
  // absolute row-major pixel indices, sorted ascending; all inside bbox
  std::vector<std::size_t> mask;
};

struct SceneRecord {
  std::string scene_id;
  std::string scene_label;
  DepthImage image;
  std::vector<ObjectInstance> objects;
  std::vector<std::string> captions;  // captions[0] is the scene-level one
};

struct SceneGenConfig {
  std::size_t width = 32;
  std::size_t height = 32;
  std::vector<std::string> scene_vocab = {
      "kitchen", "bedroom", "bathroom", "office",
      "classroom", "hallway", "garage", "basement"};
  std::vector<std::string> object_vocab = {
      "chair", "table", "bed", "sofa", "lamp", "shelf",
      "cabinet", "monitor", "sink", "door", "window", "plant"};
  std::size_t objects_min = 2;
  std::size_t objects_max = 4;
  double max_range = 10.0;
  double object_depth_min = 1.0;
  double object_depth_max = 9.0;
  // objects in one scene keep at least this depth separation
  double min_depth_gap = 0.2;
  std::size_t object_size_min = 5;
  std::size_t object_size_max = 12;
  // nearer objects render larger (apparent size ~ reference_depth / depth)
  bool perspective = true;
  double perspective_reference_depth = 3.0;
  std::size_t max_retries = 64;

  void validate() const;
};

// Deterministic synthetic depth scene: per-class base depth plus a smooth
// gradient, with rectangular/elliptical objects painted near-over-far.
SceneRecord generate_scene(std::uint64_t seed, const SceneGenConfig& config);

// arithmetic mean of image depth over the object's mask pixels
double region_mean_depth(const DepthImage& img, const ObjectInstance& obj);

void validate_scene(const SceneRecord& rec, const SceneGenConfig& config);

// --- on-disk format ----------------------------------------------------------
// <scene_id>.pgm : P5, maxval 65535, big-endian samples,
//                  sample = round(depth / max_range * 65535)
// <scene_id>.json: annotations (schema "dslab-scene/1"), masks RLE-encoded as
//                  [start, length, ...] over absolute pixel indices

void write_scene(const SceneRecord& rec, const std::filesystem::path& dir);
SceneRecord read_scene(const std::filesystem::path& dir,
                       const std::string& scene_id);

// scene_ids of every *.json sidecar in dir, sorted
std::vector<std::string> list_scene_ids(const std::filesystem::path& dir);

std::string format_region(const BBox& bbox, std::size_t img_w,
                          std::size_t img_h);

}  // namespace dslab
