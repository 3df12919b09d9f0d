#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dslab/scene.hpp"

namespace dslab {

enum class QaTask : int {
  SceneClassification = 0,
  Recognition = 1,
  DistanceJudge = 2,
  Security = 3,
};
constexpr std::size_t kTaskCount = 4;

const char* task_name(QaTask task);
QaTask task_from_name(const std::string& name);

struct QaItem {
  std::string item_id;
  QaTask task = QaTask::SceneClassification;
  std::string prompt;
  std::vector<std::string> candidates;
  std::size_t answer_index = 0;
  // provenance
  std::string scene_id;
  std::vector<std::size_t> object_indices;
};

struct BenchmarkStats {
  std::array<std::size_t, kTaskCount> counts{};
  std::array<double, kTaskCount> percentages{};
  std::size_t total = 0;
};

struct BenchmarkConfig {
  // scene classification, recognition, distance judge, security
  std::array<std::size_t, kTaskCount> quotas{1786, 3793, 5737, 2157};
  double tie_eps = 0.05;  // meters; nearer pairs are ambiguous and skipped
};

QaItem gen_scene_classification(const SceneRecord& rec,
                                const std::vector<std::string>& scene_vocab,
                                std::uint64_t rng_seed);

QaItem gen_recognition(const SceneRecord& rec, std::size_t object_index,
                       const std::vector<std::string>& object_vocab,
                       std::uint64_t rng_seed);

// none when the pair's mean depths are within tie_eps of each other
std::optional<QaItem> gen_distance_judge(const SceneRecord& rec, std::size_t i,
                                         std::size_t j, double tie_eps,
                                         std::uint64_t rng_seed);

// none when fewer than 3 distinct labels are present or none is absent
std::optional<QaItem> gen_security(const SceneRecord& rec,
                                   const std::vector<std::string>& object_vocab,
                                   std::uint64_t rng_seed);

struct Benchmark {
  std::vector<QaItem> items;
  BenchmarkStats stats;
};

Benchmark build_benchmark(const std::vector<SceneRecord>& scenes,
                          const BenchmarkConfig& config,
                          const std::vector<std::string>& scene_vocab,
                          const std::vector<std::string>& object_vocab,
                          std::uint64_t seed);

// --- scoring -----------------------------------------------------------------

struct TaskScore {
  std::size_t count = 0;
  std::size_t correct = 0;
  std::size_t matched_wrong = 0;
  std::size_t no_match = 0;
  std::size_t multi_match = 0;
  std::size_t missing = 0;
  double accuracy = 0.0;
};

struct ScoreReport {
  std::array<TaskScore, kTaskCount> per_task{};
  double macro_average = 0.0;
};

// A response counts as correct iff exactly one candidate occurs in it as a
// case-insensitive whole-word substring and that candidate is the answer.
ScoreReport score_answers(
    const std::vector<QaItem>& items,
    const std::unordered_map<std::string, std::string>& responses);

bool whole_word_match(const std::string& haystack, const std::string& needle);

// --- file formats ------------------------------------------------------------

void write_benchmark_jsonl(const std::filesystem::path& path,
                           const std::vector<QaItem>& items);
std::vector<QaItem> read_benchmark_jsonl(const std::filesystem::path& path);

void write_responses_jsonl(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, std::string>>& responses);
std::unordered_map<std::string, std::string> read_responses_jsonl(
    const std::filesystem::path& path);

std::string stats_to_json(const BenchmarkStats& stats);
std::string report_to_json(const ScoreReport& report);

}  // namespace dslab
