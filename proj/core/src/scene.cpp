#include "dslab/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dslab/rng.hpp"

namespace dslab {

using nlohmann::json;

void SceneGenConfig::validate() const {
  require(width > 0 && height > 0, ErrorKind::Config,
          "scene_gen: image size must be positive");
  require(scene_vocab.size() >= 3, ErrorKind::Config,
          "scene_gen: scene vocabulary needs at least 3 labels, got " +
              std::to_string(scene_vocab.size()));
  require(object_vocab.size() >= 8, ErrorKind::Config,
          "scene_gen: object vocabulary needs at least 8 labels, got " +
              std::to_string(object_vocab.size()));
  require(objects_min <= objects_max, ErrorKind::Config,
          "scene_gen: objects_min > objects_max");
  require(max_range > 0, ErrorKind::Config, "scene_gen: max_range <= 0");
  require(object_depth_min > 0 && object_depth_max <= max_range &&
              object_depth_min < object_depth_max,
          ErrorKind::Config, "scene_gen: bad object depth range");
  require(object_size_min >= 3 && object_size_max >= object_size_min,
          ErrorKind::Config, "scene_gen: bad object size range");
  require(object_size_max < width && object_size_max < height,
          ErrorKind::Config, "scene_gen: objects larger than the image");
}

namespace {

struct Placed {
  std::string label;
  BBox box;
  double depth;
  bool ellipse;
};

bool fully_covers(const BBox& a, const BBox& b) {
  // intersection area equals the smaller box's area
  const std::size_t x0 = std::max(a.x, b.x);
  const std::size_t y0 = std::max(a.y, b.y);
  const std::size_t x1 = std::min(a.x + a.w, b.x + b.w);
  const std::size_t y1 = std::min(a.y + a.h, b.y + b.h);
  if (x1 <= x0 || y1 <= y0) return false;
  const std::size_t inter = (x1 - x0) * (y1 - y0);
  return inter == std::min(a.w * a.h, b.w * b.h);
}

bool inside_ellipse(const BBox& box, std::size_t x, std::size_t y) {
  const double cx = box.x + box.w / 2.0;
  const double cy = box.y + box.h / 2.0;
  const double rx = box.w / 2.0;
  const double ry = box.h / 2.0;
  const double dx = (x + 0.5 - cx) / rx;
  const double dy = (y + 0.5 - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

SceneRecord generate_scene(std::uint64_t seed, const SceneGenConfig& config) {
  config.validate();
  Rng rng(seed);
  const std::size_t W = config.width, H = config.height;

  SceneRecord rec;
  char idbuf[32];
  std::snprintf(idbuf, sizeof(idbuf), "scene-%016llx",
                static_cast<unsigned long long>(seed));
  rec.scene_id = idbuf;

  const std::size_t scene_idx =
      static_cast<std::size_t>(rng.bounded(config.scene_vocab.size()));
  rec.scene_label = config.scene_vocab[scene_idx];

  // background: class-specific base depth plus a smooth planar gradient whose
  // direction is a class signature (rooms differ by geometry, not only by
  // average distance)
  const double lo = 0.15 * config.max_range;
  const double hi = 0.85 * config.max_range;
  const std::size_t n_classes = config.scene_vocab.size();
  const double base =
      n_classes > 1 ? lo + (hi - lo) * static_cast<double>(scene_idx) /
                               static_cast<double>(n_classes - 1)
                    : 0.5 * (lo + hi);
  constexpr double kTau = 6.28318530717958647692;
  const double angle = kTau * static_cast<double>(scene_idx) /
                           static_cast<double>(n_classes) +
                       rng.uniform(-0.25, 0.25);
  const double magnitude = (0.06 + 0.04 * rng.uniform()) * config.max_range;
  const double gx = std::cos(angle) * magnitude;
  const double gy = std::sin(angle) * magnitude;

  DepthImage& img = rec.image;
  img.width = W;
  img.height = H;
  img.max_range = config.max_range;
  img.depth.resize(W * H);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double fx = (x + 0.5) / static_cast<double>(W) - 0.5;
      const double fy = (y + 0.5) / static_cast<double>(H) - 0.5;
      img.depth[y * W + x] =
          std::clamp(base + gx * fx + gy * fy, 0.0, config.max_range);
    }
  }

  const std::size_t k = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(config.objects_min),
                      static_cast<std::int64_t>(config.objects_max)));

  for (std::size_t attempt = 0;; ++attempt) {
    if (attempt >= config.max_retries) {
      fail(ErrorKind::Generation,
           "could not place " + std::to_string(k) +
               " objects after bounded retries (seed " + std::to_string(seed) +
               ")");
    }

    // distinct depths with a minimum pairwise gap
    std::vector<double> depths;
    bool depths_ok = true;
    for (std::size_t j = 0; j < k; ++j) {
      bool placed = false;
      for (std::size_t t = 0; t < config.max_retries; ++t) {
        const double d =
            rng.uniform(config.object_depth_min, config.object_depth_max);
        bool far_enough = true;
        for (double other : depths) {
          if (std::abs(d - other) < config.min_depth_gap) {
            far_enough = false;
            break;
          }
        }
        if (far_enough) {
          depths.push_back(d);
          placed = true;
          break;
        }
      }
      if (!placed) {
        depths_ok = false;
        break;
      }
    }
    if (!depths_ok) continue;

    std::vector<Placed> placed;
    bool layout_ok = true;
    for (std::size_t j = 0; j < k && layout_ok; ++j) {
      const double d = depths[j];
      double scale = 1.0;
      if (config.perspective) {
        scale = std::clamp(config.perspective_reference_depth / d, 0.4, 1.6);
      }
      bool found = false;
      for (std::size_t t = 0; t < config.max_retries; ++t) {
        const auto dim = [&](std::size_t maxdim) {
          const std::size_t s = static_cast<std::size_t>(rng.uniform_int(
              static_cast<std::int64_t>(config.object_size_min),
              static_cast<std::int64_t>(config.object_size_max)));
          const double scaled = std::round(static_cast<double>(s) * scale);
          return std::clamp<std::size_t>(static_cast<std::size_t>(scaled), 3,
                                         maxdim - 2);
        };
        BBox box;
        box.w = dim(W);
        box.h = dim(H);
        box.x = static_cast<std::size_t>(rng.bounded(W - box.w + 1));
        box.y = static_cast<std::size_t>(rng.bounded(H - box.h + 1));
        bool ok = true;
        for (const Placed& other : placed) {
          if (fully_covers(other.box, box)) {
            ok = false;
            break;
          }
        }
        if (ok) {
          Placed p;
          p.label = config.object_vocab[rng.bounded(config.object_vocab.size())];
          p.box = box;
          p.depth = d;
          p.ellipse = rng.chance(0.5);
          placed.push_back(p);
          found = true;
          break;
        }
      }
      if (!found) layout_ok = false;
    }
    if (!layout_ok) continue;

    // paint far to near so that nearer objects occlude farther ones
    std::vector<std::size_t> order(placed.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return placed[a].depth > placed[b].depth;
    });
    std::vector<int> owner(W * H, -1);
    std::vector<double> canvas = img.depth;
    for (std::size_t oi : order) {
      const Placed& p = placed[oi];
      for (std::size_t y = p.box.y; y < p.box.y + p.box.h; ++y) {
        for (std::size_t x = p.box.x; x < p.box.x + p.box.w; ++x) {
          if (p.ellipse && !inside_ellipse(p.box, x, y)) continue;
          canvas[y * W + x] = p.depth;
          owner[y * W + x] = static_cast<int>(oi);
        }
      }
    }

    std::vector<ObjectInstance> objects(placed.size());
    bool all_visible = true;
    for (std::size_t oi = 0; oi < placed.size(); ++oi) {
      objects[oi].label = placed[oi].label;
      objects[oi].bbox = placed[oi].box;
    }
    for (std::size_t idx = 0; idx < owner.size(); ++idx) {
      if (owner[idx] >= 0)
        objects[static_cast<std::size_t>(owner[idx])].mask.push_back(idx);
    }
    for (const ObjectInstance& obj : objects) {
      if (obj.mask.empty()) {
        all_visible = false;
        break;
      }
    }
    if (!all_visible) continue;

    img.depth = std::move(canvas);
    rec.objects = std::move(objects);
    break;
  }

  // captions: one scene-level line, then one per object
  const double near_threshold =
      0.5 * (config.object_depth_min + config.object_depth_max);
  if (rec.objects.size() >= 2) {
    std::vector<std::size_t> by_depth(rec.objects.size());
    for (std::size_t i = 0; i < by_depth.size(); ++i) by_depth[i] = i;
    std::sort(by_depth.begin(), by_depth.end(),
              [&](std::size_t a, std::size_t b) {
                return region_mean_depth(rec.image, rec.objects[a]) <
                       region_mean_depth(rec.image, rec.objects[b]);
              });
    rec.captions.push_back("a " + rec.scene_label + " containing a " +
                           rec.objects[by_depth[0]].label + " near a " +
                           rec.objects[by_depth[1]].label);
  } else if (rec.objects.size() == 1) {
    rec.captions.push_back("a " + rec.scene_label + " containing a " +
                           rec.objects[0].label);
  } else {
    rec.captions.push_back("an empty " + rec.scene_label);
  }
  for (const ObjectInstance& obj : rec.objects) {
    const double d = region_mean_depth(rec.image, obj);
    rec.captions.push_back("a depth map of a " + obj.label +
                           (d < near_threshold ? " close to the camera"
                                               : " far from the camera"));
  }

  return rec;
}

double region_mean_depth(const DepthImage& img, const ObjectInstance& obj) {
  require(!obj.mask.empty(), ErrorKind::Contract,
          "region_mean_depth: empty mask for object '" + obj.label + "'");
  double sum = 0.0;
  for (std::size_t idx : obj.mask) {
    require(idx < img.depth.size(), ErrorKind::Contract,
            "region_mean_depth: mask pixel out of image");
    sum += img.depth[idx];
  }
  return sum / static_cast<double>(obj.mask.size());
}

void validate_scene(const SceneRecord& rec, const SceneGenConfig& config) {
  const DepthImage& img = rec.image;
  require(img.depth.size() == img.width * img.height, ErrorKind::Contract,
          "scene " + rec.scene_id + ": depth size mismatch");
  for (double d : img.depth) {
    require(std::isfinite(d) && d >= 0.0 && d <= img.max_range,
            ErrorKind::Contract,
            "scene " + rec.scene_id + ": depth out of [0, max_range]");
  }
  require(std::find(config.scene_vocab.begin(), config.scene_vocab.end(),
                    rec.scene_label) != config.scene_vocab.end(),
          ErrorKind::Contract,
          "scene " + rec.scene_id + ": label not in vocabulary");
  require(!rec.captions.empty(), ErrorKind::Contract,
          "scene " + rec.scene_id + ": no captions");
  for (const ObjectInstance& obj : rec.objects) {
    require(obj.bbox.w > 0 && obj.bbox.h > 0 &&
                obj.bbox.x + obj.bbox.w <= img.width &&
                obj.bbox.y + obj.bbox.h <= img.height,
            ErrorKind::Contract,
            "scene " + rec.scene_id + ": bbox outside image");
    require(!obj.mask.empty(), ErrorKind::Contract,
            "scene " + rec.scene_id + ": empty object mask");
    for (std::size_t idx : obj.mask) {
      const std::size_t x = idx % img.width, y = idx / img.width;
      require(x >= obj.bbox.x && x < obj.bbox.x + obj.bbox.w &&
                  y >= obj.bbox.y && y < obj.bbox.y + obj.bbox.h,
              ErrorKind::Contract,
              "scene " + rec.scene_id + ": mask pixel outside bbox");
    }
  }
}

// --- on-disk format ----------------------------------------------------------

namespace {

constexpr std::uint32_t kPgmMaxval = 65535;

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorKind::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

[[noreturn]] void pgm_fail(const std::filesystem::path& path, std::size_t offset,
                           const std::string& what) {
  fail(ErrorKind::Format, path.string() + " at byte " + std::to_string(offset) +
                              ": " + what);
}

// parses one ASCII integer token, skipping leading whitespace
std::uint64_t pgm_int(const std::string& buf, std::size_t& pos,
                      const std::filesystem::path& path) {
  while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos])))
    ++pos;
  if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos])))
    pgm_fail(path, pos, "expected integer in PGM header");
  std::uint64_t v = 0;
  while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
    v = v * 10 + static_cast<std::uint64_t>(buf[pos] - '0');
    ++pos;
  }
  return v;
}

std::vector<std::size_t> rle_encode(const std::vector<std::size_t>& mask) {
  std::vector<std::size_t> rle;
  std::size_t i = 0;
  while (i < mask.size()) {
    std::size_t j = i + 1;
    while (j < mask.size() && mask[j] == mask[j - 1] + 1) ++j;
    rle.push_back(mask[i]);
    rle.push_back(j - i);
    i = j;
  }
  return rle;
}

std::vector<std::size_t> rle_decode(const std::vector<std::size_t>& rle,
                                    std::size_t limit,
                                    const std::filesystem::path& path) {
  require(rle.size() % 2 == 0, ErrorKind::Format,
          path.string() + ": mask_rle must hold (start, length) pairs");
  std::vector<std::size_t> mask;
  for (std::size_t i = 0; i < rle.size(); i += 2) {
    const std::size_t start = rle[i], len = rle[i + 1];
    require(len > 0 && start + len <= limit, ErrorKind::Format,
            path.string() + ": mask run exceeds image");
    for (std::size_t k = 0; k < len; ++k) mask.push_back(start + k);
  }
  return mask;
}

}  // namespace

void write_scene(const SceneRecord& rec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const DepthImage& img = rec.image;

  std::string pgm = "P5\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n" +
                    std::to_string(kPgmMaxval) + "\n";
  pgm.reserve(pgm.size() + img.depth.size() * 2);
  for (double d : img.depth) {
    const auto v = static_cast<std::uint32_t>(
        std::llround(d / img.max_range * kPgmMaxval));
    // big-endian sample order per the PGM standard for maxval > 255
    pgm.push_back(static_cast<char>((v >> 8) & 0xff));
    pgm.push_back(static_cast<char>(v & 0xff));
  }
  atomic_write(dir / (rec.scene_id + ".pgm"), pgm);

  json j;
  j["schema"] = "dslab-scene/1";
  j["scene_id"] = rec.scene_id;
  j["scene_label"] = rec.scene_label;
  j["width"] = img.width;
  j["height"] = img.height;
  j["max_range"] = img.max_range;
  j["captions"] = rec.captions;
  json objs = json::array();
  for (const ObjectInstance& obj : rec.objects) {
    json o;
    o["label"] = obj.label;
    o["bbox"] = {obj.bbox.x, obj.bbox.y, obj.bbox.w, obj.bbox.h};
    o["mask_rle"] = rle_encode(obj.mask);
    objs.push_back(std::move(o));
  }
  j["objects"] = std::move(objs);
  atomic_write(dir / (rec.scene_id + ".json"), j.dump(2) + "\n");
}

SceneRecord read_scene(const std::filesystem::path& dir,
                       const std::string& scene_id) {
  const std::filesystem::path pgm_path = dir / (scene_id + ".pgm");
  const std::filesystem::path json_path = dir / (scene_id + ".json");

  // annotations first: max_range is needed to dequantize the depth samples
  const std::string jtext = read_file(json_path);
  json j;
  try {
    j = json::parse(jtext);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Format, json_path.string() + " at byte " +
                                std::to_string(e.byte) + ": " +
                                std::string(e.what()));
  }
  SceneRecord rec;
  try {
    require(j.at("schema").get<std::string>() == "dslab-scene/1",
            ErrorKind::Format,
            json_path.string() + ": unsupported schema version");
    rec.scene_id = j.at("scene_id").get<std::string>();
    rec.scene_label = j.at("scene_label").get<std::string>();
    rec.image.width = j.at("width").get<std::size_t>();
    rec.image.height = j.at("height").get<std::size_t>();
    rec.image.max_range = j.at("max_range").get<double>();
    rec.captions = j.at("captions").get<std::vector<std::string>>();
    for (const json& o : j.at("objects")) {
      ObjectInstance obj;
      obj.label = o.at("label").get<std::string>();
      const auto box = o.at("bbox").get<std::vector<std::size_t>>();
      require(box.size() == 4, ErrorKind::Format,
              json_path.string() + ": bbox must have 4 entries");
      obj.bbox = {box[0], box[1], box[2], box[3]};
      obj.mask = rle_decode(o.at("mask_rle").get<std::vector<std::size_t>>(),
                            rec.image.width * rec.image.height, json_path);
      rec.objects.push_back(std::move(obj));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, json_path.string() + ": " + std::string(e.what()));
  }

  const std::string buf = read_file(pgm_path);
  std::size_t pos = 0;
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5')
    pgm_fail(pgm_path, 0, "not a P5 PGM file");
  pos = 2;
  const std::uint64_t w = pgm_int(buf, pos, pgm_path);
  const std::uint64_t h = pgm_int(buf, pos, pgm_path);
  const std::size_t maxval_at = pos;
  const std::uint64_t maxval = pgm_int(buf, pos, pgm_path);
  if (maxval != kPgmMaxval)
    pgm_fail(pgm_path, maxval_at,
             "maxval must be 65535, got " + std::to_string(maxval));
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos])))
    pgm_fail(pgm_path, pos, "expected whitespace before raster");
  ++pos;
  if (w != rec.image.width || h != rec.image.height)
    pgm_fail(pgm_path, 2, "image size disagrees with annotation sidecar");
  const std::size_t need = static_cast<std::size_t>(w) * h * 2;
  if (buf.size() - pos < need)
    pgm_fail(pgm_path, buf.size(), "truncated raster, need " +
                                       std::to_string(need) + " bytes, have " +
                                       std::to_string(buf.size() - pos));
  rec.image.depth.resize(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < rec.image.depth.size(); ++i) {
    const auto hi8 = static_cast<unsigned char>(buf[pos + 2 * i]);
    const auto lo8 = static_cast<unsigned char>(buf[pos + 2 * i + 1]);
    const std::uint32_t v = (static_cast<std::uint32_t>(hi8) << 8) | lo8;
    rec.image.depth[i] =
        static_cast<double>(v) / kPgmMaxval * rec.image.max_range;
  }
  return rec;
}

std::vector<std::string> list_scene_ids(const std::filesystem::path& dir) {
  require(std::filesystem::is_directory(dir), ErrorKind::Resource,
          "scene directory does not exist: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".json")
      ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::string format_region(const BBox& bbox, std::size_t img_w,
                          std::size_t img_h) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "[%.2f,%.2f,%.2f,%.2f]",
                static_cast<double>(bbox.x) / static_cast<double>(img_w),
                static_cast<double>(bbox.y) / static_cast<double>(img_h),
                static_cast<double>(bbox.x + bbox.w) / static_cast<double>(img_w),
                static_cast<double>(bbox.y + bbox.h) / static_cast<double>(img_h));
  return buf;
}

}  // namespace dslab
