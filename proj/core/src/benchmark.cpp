#include "dslab/benchmark.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "dslab/rng.hpp"

namespace dslab {

using nlohmann::json;

const char* task_name(QaTask task) {
  switch (task) {
    case QaTask::SceneClassification: return "scene_classification";
    case QaTask::Recognition: return "recognition";
    case QaTask::DistanceJudge: return "distance_judge";
    case QaTask::Security: return "security";
  }
  return "unknown";
}

QaTask task_from_name(const std::string& name) {
  for (std::size_t i = 0; i < kTaskCount; ++i) {
    if (name == task_name(static_cast<QaTask>(i)))
      return static_cast<QaTask>(i);
  }
  fail(ErrorKind::Format, "unknown task name '" + name + "'");
}

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string join_candidates(const std::vector<std::string>& cands) {
  // "a , b or c"
  std::string out;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (i > 0) out += (i + 1 == cands.size()) ? " or " : " , ";
    out += cands[i];
  }
  return out;
}

}  // namespace

QaItem gen_scene_classification(const SceneRecord& rec,
                                const std::vector<std::string>& scene_vocab,
                                std::uint64_t rng_seed) {
  require(scene_vocab.size() >= 3, ErrorKind::Config,
          "scene classification needs a vocabulary of at least 3 labels");
  Rng rng(rng_seed);
  std::vector<std::string> pool;
  for (const std::string& s : scene_vocab)
    if (s != rec.scene_label) pool.push_back(s);
  const auto picks = rng.sample_indices(pool.size(), 2);
  std::vector<std::string> candidates{rec.scene_label, pool[picks[0]],
                                      pool[picks[1]]};
  rng.shuffle(candidates);
  QaItem item;
  item.item_id = "sc-" + rec.scene_id;
  item.task = QaTask::SceneClassification;
  item.candidates = candidates;
  item.answer_index = static_cast<std::size_t>(
      std::find(candidates.begin(), candidates.end(), rec.scene_label) -
      candidates.begin());
  item.prompt = "which type of scene does this depth map show : " +
                join_candidates(candidates) + " ?";
  item.scene_id = rec.scene_id;
  return item;
}

QaItem gen_recognition(const SceneRecord& rec, std::size_t object_index,
                       const std::vector<std::string>& object_vocab,
                       std::uint64_t rng_seed) {
  require(!rec.objects.empty(), ErrorKind::Contract,
          "recognition needs at least one object in the scene");
  require(object_index < rec.objects.size(), ErrorKind::Index,
          "recognition: object index out of range");
  require(object_vocab.size() >= 4, ErrorKind::Config,
          "recognition needs an object vocabulary of at least 4 labels");
  const ObjectInstance& target = rec.objects[object_index];
  Rng rng(rng_seed);
  std::vector<std::string> pool;
  for (const std::string& s : object_vocab)
    if (s != target.label) pool.push_back(s);
  const auto picks = rng.sample_indices(pool.size(), 3);
  std::vector<std::string> candidates{target.label, pool[picks[0]],
                                      pool[picks[1]], pool[picks[2]]};
  rng.shuffle(candidates);
  QaItem item;
  item.item_id = "rec-" + rec.scene_id + "-" + std::to_string(object_index);
  item.task = QaTask::Recognition;
  item.candidates = candidates;
  item.answer_index = static_cast<std::size_t>(
      std::find(candidates.begin(), candidates.end(), target.label) -
      candidates.begin());
  item.prompt = "what object occupies region " +
                format_region(target.bbox, rec.image.width, rec.image.height) +
                " in this depth map : " + join_candidates(candidates) + " ?";
  item.scene_id = rec.scene_id;
  item.object_indices = {object_index};
  return item;
}

std::optional<QaItem> gen_distance_judge(const SceneRecord& rec, std::size_t i,
                                         std::size_t j, double tie_eps,
                                         std::uint64_t rng_seed) {
  require(i != j, ErrorKind::Contract, "distance judge needs distinct objects");
  require(i < rec.objects.size() && j < rec.objects.size(), ErrorKind::Index,
          "distance judge: object index out of range");
  const double di = region_mean_depth(rec.image, rec.objects[i]);
  const double dj = region_mean_depth(rec.image, rec.objects[j]);
  if (std::abs(di - dj) < tie_eps) return std::nullopt;  // ambiguous pair

  auto reference = [&](std::size_t idx) {
    return rec.objects[idx].label + " at region " +
           format_region(rec.objects[idx].bbox, rec.image.width,
                         rec.image.height);
  };
  const std::string ref_i = reference(i), ref_j = reference(j);
  if (ref_i == ref_j) return std::nullopt;  // indistinguishable references

  Rng rng(rng_seed);
  const std::size_t farther = di > dj ? i : j;
  std::vector<std::pair<std::size_t, std::string>> order{{i, ref_i}, {j, ref_j}};
  rng.shuffle(order);
  QaItem item;
  item.item_id = "dj-" + rec.scene_id + "-" + std::to_string(i) + "-" +
                 std::to_string(j);
  item.task = QaTask::DistanceJudge;
  item.candidates = {order[0].second, order[1].second};
  item.answer_index = order[0].first == farther ? 0 : 1;
  item.prompt = "which is farther from the viewpoint : the " +
                order[0].second + " or the " + order[1].second + " ?";
  item.scene_id = rec.scene_id;
  item.object_indices = {i, j};
  return item;
}

std::optional<QaItem> gen_security(const SceneRecord& rec,
                                   const std::vector<std::string>& object_vocab,
                                   std::uint64_t rng_seed) {
  std::vector<std::string> present;
  for (const ObjectInstance& obj : rec.objects) {
    if (std::find(present.begin(), present.end(), obj.label) == present.end())
      present.push_back(obj.label);
  }
  if (present.size() < 3) return std::nullopt;
  std::vector<std::string> absent;
  for (const std::string& s : object_vocab) {
    if (std::find(present.begin(), present.end(), s) == present.end())
      absent.push_back(s);
  }
  if (absent.empty()) return std::nullopt;

  Rng rng(rng_seed);
  const auto present_pick = rng.sample_indices(present.size(), 3);
  const std::string absent_label = absent[rng.bounded(absent.size())];
  std::vector<std::string> candidates{present[present_pick[0]],
                                      present[present_pick[1]],
                                      present[present_pick[2]], absent_label};
  rng.shuffle(candidates);
  QaItem item;
  item.item_id = "sec-" + rec.scene_id;
  item.task = QaTask::Security;
  item.candidates = candidates;
  item.answer_index = static_cast<std::size_t>(
      std::find(candidates.begin(), candidates.end(), absent_label) -
      candidates.begin());
  item.prompt = "which of these objects does not appear in this depth map : " +
                join_candidates(candidates) + " ?";
  item.scene_id = rec.scene_id;
  return item;
}

Benchmark build_benchmark(const std::vector<SceneRecord>& scenes,
                          const BenchmarkConfig& config,
                          const std::vector<std::string>& scene_vocab,
                          const std::vector<std::string>& object_vocab,
                          std::uint64_t seed) {
  Benchmark bench;
  std::uint64_t counter = 0;
  auto child_seed = [&] { return mix_seed(seed, counter++); };

  // scene classification: one item per scene, in order
  {
    const std::size_t quota = config.quotas[0];
    if (quota > scenes.size()) {
      fail(ErrorKind::Resource,
           "scene_classification quota " + std::to_string(quota) +
               " exceeds the " + std::to_string(scenes.size()) +
               " available scenes");
    }
    for (std::size_t s = 0; s < quota; ++s) {
      bench.items.push_back(
          gen_scene_classification(scenes[s], scene_vocab, child_seed()));
    }
  }

  // recognition: round-robin passes, object p of each scene per pass
  {
    const std::size_t quota = config.quotas[1];
    std::size_t emitted = 0;
    for (std::size_t pass = 0; emitted < quota; ++pass) {
      bool progressed = false;
      for (std::size_t s = 0; s < scenes.size() && emitted < quota; ++s) {
        if (pass >= scenes[s].objects.size()) continue;
        bench.items.push_back(
            gen_recognition(scenes[s], pass, object_vocab, child_seed()));
        ++emitted;
        progressed = true;
      }
      if (!progressed && emitted < quota) {
        fail(ErrorKind::Resource,
             "recognition quota " + std::to_string(quota) +
                 " unsatisfiable: only " + std::to_string(emitted) +
                 " (scene, object) pairs available");
      }
    }
  }

  // distance judge: round-robin over per-scene unambiguous pairs
  {
    const std::size_t quota = config.quotas[2];
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> pairs(
        scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const auto& objs = scenes[s].objects;
      for (std::size_t i = 0; i < objs.size(); ++i)
        for (std::size_t j = i + 1; j < objs.size(); ++j)
          pairs[s].emplace_back(i, j);
    }
    std::size_t emitted = 0;
    for (std::size_t pass = 0; emitted < quota; ++pass) {
      bool progressed = false;
      for (std::size_t s = 0; s < scenes.size() && emitted < quota; ++s) {
        if (pass >= pairs[s].size()) continue;
        progressed = true;
        const auto [i, j] = pairs[s][pass];
        auto item = gen_distance_judge(scenes[s], i, j, config.tie_eps,
                                       child_seed());
        if (item) {
          bench.items.push_back(std::move(*item));
          ++emitted;
        }
      }
      if (!progressed && emitted < quota) {
        fail(ErrorKind::Resource,
             "distance_judge quota " + std::to_string(quota) +
                 " unsatisfiable: only " + std::to_string(emitted) +
                 " unambiguous pairs available");
      }
    }
  }

  // security: at most one item per scene
  {
    const std::size_t quota = config.quotas[3];
    std::size_t emitted = 0;
    for (std::size_t s = 0; s < scenes.size() && emitted < quota; ++s) {
      auto item = gen_security(scenes[s], object_vocab, child_seed());
      if (item) {
        bench.items.push_back(std::move(*item));
        ++emitted;
      }
    }
    if (emitted < quota) {
      fail(ErrorKind::Resource,
           "security quota " + std::to_string(quota) +
               " unsatisfiable: only " + std::to_string(emitted) +
               " eligible scenes");
    }
  }

  for (const QaItem& item : bench.items)
    ++bench.stats.counts[static_cast<std::size_t>(item.task)];
  bench.stats.total = bench.items.size();
  for (std::size_t t = 0; t < kTaskCount; ++t) {
    bench.stats.percentages[t] =
        bench.stats.total == 0
            ? 0.0
            : 100.0 * static_cast<double>(bench.stats.counts[t]) /
                  static_cast<double>(bench.stats.total);
  }
  return bench;
}

// --- scoring -----------------------------------------------------------------

bool whole_word_match(const std::string& haystack, const std::string& needle) {
  if (needle.empty()) return false;
  const std::string h = lower(haystack);
  const std::string n = lower(needle);
  auto is_word = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
  };
  std::size_t pos = 0;
  while ((pos = h.find(n, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word(h[pos - 1]) || !is_word(n.front());
    const std::size_t end = pos + n.size();
    const bool right_ok = end == h.size() || !is_word(h[end]) || !is_word(n.back());
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

ScoreReport score_answers(
    const std::vector<QaItem>& items,
    const std::unordered_map<std::string, std::string>& responses) {
  ScoreReport report;
  for (const QaItem& item : items) {
    TaskScore& ts = report.per_task[static_cast<std::size_t>(item.task)];
    ++ts.count;
    auto it = responses.find(item.item_id);
    if (it == responses.end()) {
      ++ts.missing;
      continue;
    }
    std::size_t matches = 0;
    std::size_t matched = 0;
    for (std::size_t c = 0; c < item.candidates.size(); ++c) {
      if (whole_word_match(it->second, item.candidates[c])) {
        ++matches;
        matched = c;
      }
    }
    if (matches == 0) {
      ++ts.no_match;
    } else if (matches > 1) {
      ++ts.multi_match;
    } else if (matched == item.answer_index) {
      ++ts.correct;
    } else {
      ++ts.matched_wrong;
    }
  }
  double sum = 0.0;
  for (TaskScore& ts : report.per_task) {
    ts.accuracy = ts.count == 0 ? 0.0
                                : static_cast<double>(ts.correct) /
                                      static_cast<double>(ts.count);
    sum += ts.accuracy;
  }
  report.macro_average = sum / static_cast<double>(kTaskCount);
  return report;
}

// --- file formats ------------------------------------------------------------

void write_benchmark_jsonl(const std::filesystem::path& path,
                           const std::vector<QaItem>& items) {
  std::ostringstream out;
  for (const QaItem& item : items) {
    json j;
    j["item_id"] = item.item_id;
    j["task"] = task_name(item.task);
    j["prompt"] = item.prompt;
    j["candidates"] = item.candidates;
    j["answer_index"] = item.answer_index;
    j["provenance"] = {{"scene_id", item.scene_id},
                       {"objects", item.object_indices}};
    out << j.dump() << "\n";
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    require(f.good(), ErrorKind::Io, "cannot write " + tmp.string());
    f << out.str();
  }
  std::filesystem::rename(tmp, path);
}

std::vector<QaItem> read_benchmark_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Resource,
          "benchmark file does not exist: " + path.string());
  std::vector<QaItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      QaItem item;
      item.item_id = j.at("item_id").get<std::string>();
      item.task = task_from_name(j.at("task").get<std::string>());
      item.prompt = j.at("prompt").get<std::string>();
      item.candidates = j.at("candidates").get<std::vector<std::string>>();
      item.answer_index = j.at("answer_index").get<std::size_t>();
      item.scene_id = j.at("provenance").at("scene_id").get<std::string>();
      item.object_indices =
          j.at("provenance").at("objects").get<std::vector<std::size_t>>();
      items.push_back(std::move(item));
    } catch (const json::exception& e) {
      fail(ErrorKind::Format, path.string() + " line " +
                                  std::to_string(lineno) + ": " + e.what());
    }
  }
  return items;
}

void write_responses_jsonl(
    const std::filesystem::path& path,
    const std::vector<std::pair<std::string, std::string>>& responses) {
  std::ostringstream out;
  for (const auto& [id, text] : responses) {
    json j;
    j["item_id"] = id;
    j["text"] = text;
    out << j.dump() << "\n";
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    require(f.good(), ErrorKind::Io, "cannot write " + tmp.string());
    f << out.str();
  }
  std::filesystem::rename(tmp, path);
}

std::unordered_map<std::string, std::string> read_responses_jsonl(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Resource,
          "responses file does not exist: " + path.string());
  std::unordered_map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      out[j.at("item_id").get<std::string>()] = j.at("text").get<std::string>();
    } catch (const json::exception& e) {
      fail(ErrorKind::Format, path.string() + " line " +
                                  std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string stats_to_json(const BenchmarkStats& stats) {
  json j;
  for (std::size_t t = 0; t < kTaskCount; ++t) {
    j["counts"][task_name(static_cast<QaTask>(t))] = stats.counts[t];
    j["percentages"][task_name(static_cast<QaTask>(t))] = stats.percentages[t];
  }
  j["total"] = stats.total;
  return j.dump(2) + "\n";
}

std::string report_to_json(const ScoreReport& report) {
  json j;
  for (std::size_t t = 0; t < kTaskCount; ++t) {
    const TaskScore& ts = report.per_task[t];
    json s;
    s["count"] = ts.count;
    s["correct"] = ts.correct;
    s["accuracy"] = ts.accuracy;
    s["confusion"] = {{"matched_wrong", ts.matched_wrong},
                      {"no_match", ts.no_match},
                      {"multi_match", ts.multi_match},
                      {"missing", ts.missing}};
    j["per_task"][task_name(static_cast<QaTask>(t))] = std::move(s);
  }
  j["macro_average"] = report.macro_average;
  return j.dump(2) + "\n";
}

}  // namespace dslab
