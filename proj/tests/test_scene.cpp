#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "dslab/rng.hpp"
#include "dslab/scene.hpp"

using namespace dslab;

namespace {

bool records_equal(const SceneRecord& a, const SceneRecord& b) {
  if (a.scene_id != b.scene_id || a.scene_label != b.scene_label) return false;
  if (a.image.width != b.image.width || a.image.height != b.image.height)
    return false;
  if (a.image.max_range != b.image.max_range) return false;
  if (a.image.depth != b.image.depth) return false;
  if (a.captions != b.captions) return false;
  if (a.objects.size() != b.objects.size()) return false;
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    const auto& x = a.objects[i];
    const auto& y = b.objects[i];
    if (x.label != y.label || x.mask != y.mask) return false;
    if (x.bbox.x != y.bbox.x || x.bbox.y != y.bbox.y || x.bbox.w != y.bbox.w ||
        x.bbox.h != y.bbox.h)
      return false;
  }
  return true;
}

// independent oracle: visit every pixel, test membership in the mask
double pixel_loop_mean(const DepthImage& img, const ObjectInstance& obj) {
  std::set<std::size_t> members(obj.mask.begin(), obj.mask.end());
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t idx = y * img.width + x;
      if (members.count(idx)) {
        sum += img.depth[idx];
        ++n;
      }
    }
  }
  return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("generate_scene is deterministic in the seed") {
  SceneGenConfig config;
  SceneRecord a = generate_scene(12345, config);
  SceneRecord b = generate_scene(12345, config);
  CHECK(records_equal(a, b));
  SceneRecord c = generate_scene(12346, config);
  CHECK_FALSE(records_equal(a, c));
}

TEST_CASE("zero-object config gives a valid background-only scene") {
  SceneGenConfig config;
  config.objects_min = 0;
  config.objects_max = 0;
  SceneRecord rec = generate_scene(7, config);
  CHECK(rec.objects.empty());
  CHECK(rec.captions.size() == 1);
  CHECK(rec.captions[0].find(rec.scene_label) != std::string::npos);
  validate_scene(rec, config);
}

TEST_CASE("1000 generated scenes satisfy every type invariant") {
  SceneGenConfig config;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    SceneRecord rec = generate_scene(mix_seed(555, i), config);
    validate_scene(rec, config);
    // every mask pixel carries its object's depth exactly
    for (const ObjectInstance& obj : rec.objects) {
      const double d0 = rec.image.depth[obj.mask[0]];
      for (std::size_t idx : obj.mask) CHECK(rec.image.depth[idx] == d0);
    }
  }
}

TEST_CASE("region_mean_depth of a constant region") {
  DepthImage img;
  img.width = 4;
  img.height = 4;
  img.max_range = 10.0;
  img.depth.assign(16, 2.0);
  ObjectInstance obj{"chair", {0, 0, 2, 2}, {0, 1, 4, 5}};
  CHECK(region_mean_depth(img, obj) == 2.0);
}

TEST_CASE("region_mean_depth hand arithmetic") {
  DepthImage img;
  img.width = 2;
  img.height = 1;
  img.depth = {1.0, 3.0};
  ObjectInstance obj{"chair", {0, 0, 2, 1}, {0, 1}};
  CHECK(region_mean_depth(img, obj) == 2.0);
}

TEST_CASE("region_mean_depth rejects an empty mask") {
  DepthImage img;
  img.width = 2;
  img.height = 2;
  img.depth.assign(4, 1.0);
  ObjectInstance obj{"chair", {0, 0, 1, 1}, {}};
  try {
    region_mean_depth(img, obj);
    FAIL("expected contract error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Contract);
  }
}

TEST_CASE("region_mean_depth agrees with the pixel-loop oracle to 1e-12") {
  SceneGenConfig config;
  for (std::uint64_t i = 0; i < 50; ++i) {
    SceneRecord rec = generate_scene(mix_seed(777, i), config);
    for (const ObjectInstance& obj : rec.objects) {
      const double got = region_mean_depth(rec.image, obj);
      const double want = pixel_loop_mean(rec.image, obj);
      CHECK(std::abs(got - want) <= 1e-12);
    }
  }
}

TEST_CASE("region_mean_depth is invariant to mask enumeration order") {
  SceneGenConfig config;
  SceneRecord rec = generate_scene(31337, config);
  REQUIRE(!rec.objects.empty());
  ObjectInstance obj = rec.objects[0];
  const double base = region_mean_depth(rec.image, obj);
  Rng rng(1);
  rng.shuffle(obj.mask);
  CHECK(region_mean_depth(rec.image, obj) == doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("scaling depths and max_range scales region means linearly") {
  SceneGenConfig config;
  SceneRecord rec = generate_scene(2024, config);
  REQUIRE(!rec.objects.empty());
  const double c = 3.5;
  DepthImage scaled = rec.image;
  scaled.max_range *= c;
  for (double& d : scaled.depth) d *= c;
  for (const ObjectInstance& obj : rec.objects) {
    const double a = region_mean_depth(rec.image, obj);
    const double b = region_mean_depth(scaled, obj);
    CHECK(b == doctest::Approx(c * a).epsilon(1e-12));
  }
}

TEST_CASE("scene round-trip: annotations exact, depth within quantization") {
  SceneGenConfig config;
  SceneRecord rec = generate_scene(90210, config);
  const auto dir = std::filesystem::temp_directory_path() / "dslab_scene_rt";
  std::filesystem::remove_all(dir);
  write_scene(rec, dir);
  SceneRecord back = read_scene(dir, rec.scene_id);

  CHECK(back.scene_id == rec.scene_id);
  CHECK(back.scene_label == rec.scene_label);
  CHECK(back.captions == rec.captions);
  REQUIRE(back.objects.size() == rec.objects.size());
  for (std::size_t i = 0; i < rec.objects.size(); ++i) {
    CHECK(back.objects[i].label == rec.objects[i].label);
    CHECK(back.objects[i].mask == rec.objects[i].mask);
  }
  CHECK(back.image.max_range == rec.image.max_range);
  const double bound = rec.image.max_range / 65535.0;
  for (std::size_t i = 0; i < rec.image.depth.size(); ++i)
    CHECK(std::abs(back.image.depth[i] - rec.image.depth[i]) <= bound);
  std::filesystem::remove_all(dir);
}

TEST_CASE("truncated PGM is a format error with no partial record") {
  SceneGenConfig config;
  SceneRecord rec = generate_scene(41, config);
  const auto dir = std::filesystem::temp_directory_path() / "dslab_scene_trunc";
  std::filesystem::remove_all(dir);
  write_scene(rec, dir);
  const auto pgm = dir / (rec.scene_id + ".pgm");
  std::filesystem::resize_file(pgm, std::filesystem::file_size(pgm) / 2);
  try {
    read_scene(dir, rec.scene_id);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Format);
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("PGM with wrong maxval is a format error") {
  SceneGenConfig config;
  SceneRecord rec = generate_scene(43, config);
  const auto dir = std::filesystem::temp_directory_path() / "dslab_scene_maxval";
  std::filesystem::remove_all(dir);
  write_scene(rec, dir);
  const auto pgm_path = dir / (rec.scene_id + ".pgm");
  std::ifstream in(pgm_path, std::ios::binary);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  in.close();
  const auto at = buf.find("65535");
  REQUIRE(at != std::string::npos);
  buf.replace(at, 5, "00255");
  std::ofstream out(pgm_path, std::ios::binary | std::ios::trunc);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.close();
  try {
    read_scene(dir, rec.scene_id);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Format);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("malformed sidecar JSON reports file and byte offset") {
  SceneGenConfig config;
  SceneRecord rec = generate_scene(47, config);
  const auto dir = std::filesystem::temp_directory_path() / "dslab_scene_json";
  std::filesystem::remove_all(dir);
  write_scene(rec, dir);
  const auto jpath = dir / (rec.scene_id + ".json");
  std::ofstream out(jpath, std::ios::binary | std::ios::trunc);
  out << "{ \"schema\": \"dslab-scene/1\", ";  // unterminated
  out.close();
  try {
    read_scene(dir, rec.scene_id);
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Format);
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("format_region renders normalized corners with two decimals") {
  CHECK(format_region({0, 0, 32, 32}, 32, 32) == "[0.00,0.00,1.00,1.00]");
  CHECK(format_region({8, 16, 8, 8}, 32, 32) == "[0.25,0.50,0.50,0.75]");
}

TEST_CASE("perspective sizing: nearer objects cover more pixels on average") {
  SceneGenConfig config;
  config.objects_min = 2;
  config.objects_max = 2;
  double near_area = 0.0, far_area = 0.0;
  std::size_t n = 0;
  for (std::uint64_t i = 0; i < 300; ++i) {
    SceneRecord rec = generate_scene(mix_seed(888, i), config);
    if (rec.objects.size() != 2) continue;
    const double d0 = region_mean_depth(rec.image, rec.objects[0]);
    const double d1 = region_mean_depth(rec.image, rec.objects[1]);
    const double a0 = static_cast<double>(rec.objects[0].bbox.w *
                                          rec.objects[0].bbox.h);
    const double a1 = static_cast<double>(rec.objects[1].bbox.w *
                                          rec.objects[1].bbox.h);
    near_area += d0 < d1 ? a0 : a1;
    far_area += d0 < d1 ? a1 : a0;
    ++n;
  }
  REQUIRE(n > 200);
  CHECK(near_area / n > far_area / n);
}
