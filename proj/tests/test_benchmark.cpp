#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dslab/benchmark.hpp"
#include "dslab/rng.hpp"
#include "dslab/scene.hpp"

using namespace dslab;

namespace {

// hand-built scene: each object occupies its own column band at a uniform depth
SceneRecord flat_scene(const std::vector<std::pair<std::string, double>>& objs,
                       const std::string& scene_label = "kitchen") {
  SceneRecord rec;
  rec.scene_id = "flat";
  rec.scene_label = scene_label;
  rec.image.width = 16;
  rec.image.height = 16;
  rec.image.max_range = 10.0;
  rec.image.depth.assign(256, 5.0);
  std::size_t x = 0;
  for (const auto& [label, depth] : objs) {
    ObjectInstance obj;
    obj.label = label;
    obj.bbox = {x, 0, 3, 16};
    for (std::size_t yy = 0; yy < 16; ++yy)
      for (std::size_t xx = x; xx < x + 3; ++xx) {
        obj.mask.push_back(yy * 16 + xx);
        rec.image.depth[yy * 16 + xx] = depth;
      }
    std::sort(obj.mask.begin(), obj.mask.end());
    rec.objects.push_back(std::move(obj));
    x += 3;
  }
  rec.captions = {"a " + scene_label};
  return rec;
}

std::vector<SceneRecord> corpus(std::size_t n, std::uint64_t seed,
                                SceneGenConfig config = {}) {
  std::vector<SceneRecord> scenes;
  scenes.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    scenes.push_back(generate_scene(mix_seed(seed, i), config));
  return scenes;
}

double pixel_loop_mean(const DepthImage& img, const ObjectInstance& obj) {
  std::set<std::size_t> members(obj.mask.begin(), obj.mask.end());
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t idx = 0; idx < img.depth.size(); ++idx) {
    if (members.count(idx)) {
      sum += img.depth[idx];
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("scene classification with a 3-label vocabulary uses all of it") {
  SceneRecord rec = flat_scene({}, "kitchen");
  const std::vector<std::string> vocab{"kitchen", "bedroom", "office"};
  QaItem item = gen_scene_classification(rec, vocab, 5);
  REQUIRE(item.candidates.size() == 3);
  std::set<std::string> got(item.candidates.begin(), item.candidates.end());
  CHECK(got == std::set<std::string>(vocab.begin(), vocab.end()));
  CHECK(item.candidates[item.answer_index] == "kitchen");
}

TEST_CASE("scene classification answer_index always points at the truth") {
  SceneGenConfig config;
  for (std::uint64_t i = 0; i < 200; ++i) {
    SceneRecord rec = generate_scene(mix_seed(1, i), config);
    QaItem item = gen_scene_classification(rec, config.scene_vocab, i);
    CHECK(item.candidates[item.answer_index] == rec.scene_label);
    // candidates pairwise distinct
    std::set<std::string> s(item.candidates.begin(), item.candidates.end());
    CHECK(s.size() == item.candidates.size());
  }
}

TEST_CASE("scene classification shuffling is position-unbiased") {
  SceneGenConfig config;
  SceneRecord rec = generate_scene(99, config);
  std::array<std::size_t, 3> slot{};
  const std::size_t trials = 3000;
  for (std::uint64_t i = 0; i < trials; ++i) {
    QaItem item = gen_scene_classification(rec, config.scene_vocab,
                                           mix_seed(42, i));
    ++slot[item.answer_index];
  }
  for (std::size_t s = 0; s < 3; ++s) {
    const double freq = static_cast<double>(slot[s]) / trials;
    CHECK(freq > 1.0 / 3.0 - 0.05);
    CHECK(freq < 1.0 / 3.0 + 0.05);
  }
}

TEST_CASE("recognition candidates include the true label exactly once") {
  SceneRecord rec = flat_scene({{"chair", 2.0}});
  const std::vector<std::string> vocab{"chair", "table", "bed",
                                       "sofa",  "lamp",  "shelf"};
  QaItem item = gen_recognition(rec, 0, vocab, 3);
  REQUIRE(item.candidates.size() == 4);
  CHECK(item.candidates[item.answer_index] == "chair");
  std::size_t chairs = 0;
  for (const auto& c : item.candidates)
    if (c == "chair") ++chairs;
  CHECK(chairs == 1);
}

TEST_CASE("recognition prompt embeds the normalized region") {
  SceneRecord rec = flat_scene({{"chair", 2.0}});
  rec.objects[0].bbox = {0, 0, 16, 16};  // full image
  const std::vector<std::string> vocab{"chair", "table", "bed", "sofa"};
  QaItem item = gen_recognition(rec, 0, vocab, 3);
  CHECK(item.prompt.find("region [0.00,0.00,1.00,1.00]") != std::string::npos);
}

TEST_CASE("recognition distractors never equal the true label") {
  SceneGenConfig config;
  for (std::uint64_t i = 0; i < 300; ++i) {
    SceneRecord rec = generate_scene(mix_seed(2, i), config);
    for (std::size_t o = 0; o < rec.objects.size(); ++o) {
      QaItem item = gen_recognition(rec, o, config.object_vocab, mix_seed(3, i));
      std::size_t hits = 0;
      for (const auto& c : item.candidates)
        if (c == rec.objects[o].label) ++hits;
      CHECK(hits == 1);
    }
  }
}

TEST_CASE("distance judge picks the farther object") {
  SceneRecord rec = flat_scene({{"chair", 1.0}, {"table", 3.0}});
  auto item = gen_distance_judge(rec, 0, 1, 0.05, 7);
  REQUIRE(item.has_value());
  CHECK(item->candidates.size() == 2);
  CHECK(item->candidates[item->answer_index].find("table") == 0);
}

TEST_CASE("distance judge skips ties") {
  SceneRecord rec = flat_scene({{"chair", 2.0}, {"table", 2.0}});
  CHECK_FALSE(gen_distance_judge(rec, 0, 1, 0.05, 7).has_value());
  SceneRecord close = flat_scene({{"chair", 2.0}, {"table", 2.04}});
  CHECK_FALSE(gen_distance_judge(close, 0, 1, 0.05, 7).has_value());
}

TEST_CASE("distance judge agrees with the pixel-loop oracle over a corpus") {
  SceneGenConfig config;
  std::size_t emitted = 0;
  for (std::uint64_t s = 0; s < 150; ++s) {
    SceneRecord rec = generate_scene(mix_seed(4, s), config);
    for (std::size_t i = 0; i < rec.objects.size(); ++i) {
      for (std::size_t j = i + 1; j < rec.objects.size(); ++j) {
        auto item = gen_distance_judge(rec, i, j, 0.05, mix_seed(5, s));
        if (!item) continue;
        ++emitted;
        const double di = pixel_loop_mean(rec.image, rec.objects[i]);
        const double dj = pixel_loop_mean(rec.image, rec.objects[j]);
        const std::size_t farther = di > dj ? i : j;
        CHECK(item->object_indices.size() == 2);
        const std::string& answer = item->candidates[item->answer_index];
        CHECK(answer.rfind(rec.objects[farther].label, 0) == 0);
      }
    }
  }
  CHECK(emitted > 300);
}

TEST_CASE("security answer is a label absent from the scene") {
  SceneRecord rec = flat_scene({{"chair", 1.0}, {"table", 3.0}, {"bed", 5.0}});
  const std::vector<std::string> vocab{"chair", "table", "bed", "sofa"};
  auto item = gen_security(rec, vocab, 11);
  REQUIRE(item.has_value());
  CHECK(item->candidates[item->answer_index] == "sofa");
}

TEST_CASE("security returns none when every label is present") {
  SceneRecord rec = flat_scene({{"chair", 1.0}, {"table", 3.0}, {"bed", 5.0}});
  const std::vector<std::string> vocab{"chair", "table", "bed"};
  CHECK_FALSE(gen_security(rec, vocab, 11).has_value());
}

TEST_CASE("security returns none with fewer than 3 distinct labels") {
  SceneRecord rec = flat_scene({{"chair", 1.0}, {"chair", 3.0}});
  const std::vector<std::string> vocab{"chair", "table", "bed", "sofa"};
  CHECK_FALSE(gen_security(rec, vocab, 11).has_value());
}

TEST_CASE("security answers are absent over a generated sweep") {
  SceneGenConfig config;
  config.objects_min = 3;
  config.objects_max = 5;
  std::size_t emitted = 0;
  for (std::uint64_t s = 0; s < 300; ++s) {
    SceneRecord rec = generate_scene(mix_seed(6, s), config);
    auto item = gen_security(rec, config.object_vocab, mix_seed(7, s));
    if (!item) continue;
    ++emitted;
    const std::string& answer = item->candidates[item->answer_index];
    for (const ObjectInstance& obj : rec.objects) CHECK(obj.label != answer);
  }
  CHECK(emitted > 150);
}

TEST_CASE("build_benchmark with minimal quotas emits one item per task") {
  SceneGenConfig config;
  config.objects_min = 3;
  config.objects_max = 5;
  auto scenes = corpus(20, 1000, config);
  BenchmarkConfig bc;
  bc.quotas = {1, 1, 1, 1};
  Benchmark bench =
      build_benchmark(scenes, bc, config.scene_vocab, config.object_vocab, 9);
  REQUIRE(bench.items.size() == 4);
  for (std::size_t t = 0; t < kTaskCount; ++t) CHECK(bench.stats.counts[t] == 1);
  CHECK(bench.stats.total == 4);
}

TEST_CASE("build_benchmark honors quotas and computes percentages") {
  SceneGenConfig config;
  config.objects_min = 3;
  config.objects_max = 5;
  auto scenes = corpus(260, 2000, config);
  BenchmarkConfig bc;
  bc.quotas = {60, 120, 180, 70};
  Benchmark bench =
      build_benchmark(scenes, bc, config.scene_vocab, config.object_vocab, 10);
  CHECK(bench.stats.total == 430);
  for (std::size_t t = 0; t < kTaskCount; ++t)
    CHECK(bench.stats.counts[t] == bc.quotas[t]);
  double pct_sum = 0.0;
  for (double p : bench.stats.percentages) pct_sum += p;
  CHECK(std::abs(pct_sum - 100.0) < 0.01);
  // item ids unique
  std::set<std::string> ids;
  for (const QaItem& item : bench.items) ids.insert(item.item_id);
  CHECK(ids.size() == bench.items.size());
  // every answer_index in range, candidates distinct
  for (const QaItem& item : bench.items) {
    CHECK(item.answer_index < item.candidates.size());
    std::set<std::string> cs(item.candidates.begin(), item.candidates.end());
    CHECK(cs.size() == item.candidates.size());
  }
}

TEST_CASE("unsatisfiable quota names the task") {
  auto scenes = corpus(5, 3000);
  BenchmarkConfig bc;
  bc.quotas = {100, 1, 1, 1};
  try {
    build_benchmark(scenes, bc, SceneGenConfig{}.scene_vocab,
                    SceneGenConfig{}.object_vocab, 1);
    FAIL("expected resource error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Resource);
    CHECK(std::string(e.what()).find("scene_classification") !=
          std::string::npos);
  }
}

TEST_CASE("benchmark JSONL output is byte-identical across reruns") {
  SceneGenConfig config;
  config.objects_min = 3;
  config.objects_max = 5;
  auto scenes = corpus(40, 4000, config);
  BenchmarkConfig bc;
  bc.quotas = {10, 20, 25, 12};
  const auto dir = std::filesystem::temp_directory_path() / "dslab_bench_det";
  std::filesystem::create_directories(dir);
  auto render = [&](const std::filesystem::path& p) {
    Benchmark bench = build_benchmark(scenes, bc, config.scene_vocab,
                                      config.object_vocab, 77);
    write_benchmark_jsonl(p, bench.items);
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string a = render(dir / "a.jsonl");
  const std::string b = render(dir / "b.jsonl");
  CHECK(a == b);
  CHECK(!a.empty());

  // round-trip preserves items
  auto items = read_benchmark_jsonl(dir / "a.jsonl");
  Benchmark bench = build_benchmark(scenes, bc, config.scene_vocab,
                                    config.object_vocab, 77);
  REQUIRE(items.size() == bench.items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    CHECK(items[i].item_id == bench.items[i].item_id);
    CHECK(items[i].task == bench.items[i].task);
    CHECK(items[i].prompt == bench.items[i].prompt);
    CHECK(items[i].candidates == bench.items[i].candidates);
    CHECK(items[i].answer_index == bench.items[i].answer_index);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("ground-truth responses score 100% on every task") {
  SceneGenConfig config;
  config.objects_min = 3;
  config.objects_max = 5;
  auto scenes = corpus(60, 5000, config);
  BenchmarkConfig bc;
  bc.quotas = {20, 40, 50, 25};
  Benchmark bench =
      build_benchmark(scenes, bc, config.scene_vocab, config.object_vocab, 3);
  std::unordered_map<std::string, std::string> responses;
  for (const QaItem& item : bench.items)
    responses[item.item_id] = item.candidates[item.answer_index];
  ScoreReport report = score_answers(bench.items, responses);
  for (std::size_t t = 0; t < kTaskCount; ++t)
    CHECK(report.per_task[t].accuracy == 1.0);
  CHECK(report.macro_average == 1.0);
}

TEST_CASE("a response matching two candidates is incorrect") {
  SceneRecord rec = flat_scene({{"chair", 1.0}, {"table", 3.0}, {"bed", 5.0}});
  const std::vector<std::string> vocab{"chair", "table", "bed", "sofa"};
  QaItem item = gen_recognition(rec, 0, vocab, 3);
  std::unordered_map<std::string, std::string> responses{
      {item.item_id,
       item.candidates[0] + " or maybe " + item.candidates[1]}};
  ScoreReport report = score_answers({item}, responses);
  CHECK(report.per_task[1].correct == 0);
  CHECK(report.per_task[1].multi_match == 1);
}

TEST_CASE("missing responses are counted incorrect and reported") {
  SceneRecord rec = flat_scene({{"chair", 1.0}});
  const std::vector<std::string> vocab{"chair", "table", "bed", "sofa"};
  QaItem item = gen_recognition(rec, 0, vocab, 3);
  ScoreReport report = score_answers({item}, {});
  CHECK(report.per_task[1].accuracy == 0.0);
  CHECK(report.per_task[1].missing == 1);
}

TEST_CASE("whole-word matching respects boundaries and case") {
  CHECK(whole_word_match("It is a CHAIR.", "chair"));
  CHECK(whole_word_match("chair", "chair"));
  CHECK_FALSE(whole_word_match("chairs everywhere", "chair"));
  CHECK_FALSE(whole_word_match("armchair", "chair"));
  CHECK(whole_word_match("the chair at region [0.00,0.25,0.50,1.00] is farther.",
                         "chair at region [0.00,0.25,0.50,1.00]"));
}

TEST_CASE("uniform-random responder scores chance level per task") {
  SceneGenConfig config;
  config.objects_min = 3;
  config.objects_max = 5;
  auto scenes = corpus(620, 6000, config);
  BenchmarkConfig bc;
  bc.quotas = {400, 850, 1280, 480};  // Table-1 proportions, scaled down
  Benchmark bench =
      build_benchmark(scenes, bc, config.scene_vocab, config.object_vocab, 8);
  Rng rng(12345);
  std::unordered_map<std::string, std::string> responses;
  for (const QaItem& item : bench.items) {
    responses[item.item_id] =
        item.candidates[rng.bounded(item.candidates.size())];
  }
  ScoreReport report = score_answers(bench.items, responses);
  const double expect[kTaskCount] = {1.0 / 3, 0.25, 0.5, 0.25};
  for (std::size_t t = 0; t < kTaskCount; ++t) {
    CHECK(report.per_task[t].accuracy > expect[t] - 0.04);
    CHECK(report.per_task[t].accuracy < expect[t] + 0.04);
  }
}
