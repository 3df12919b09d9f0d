#include "dslab/pairset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "dslab/rng.hpp"

namespace dslab {

using nlohmann::json;

const char* instruction_kind_name(InstructionKind kind) {
  switch (kind) {
    case InstructionKind::ComplexReasoning: return "complex_reasoning";
    case InstructionKind::MultiRoundDialogue: return "multi_round_dialogue";
    case InstructionKind::DetailedDescription: return "detailed_description";
  }
  return "unknown";
}

InstructionKind instruction_kind_from_name(const std::string& name) {
  for (int k = 0; k < 3; ++k) {
    if (name == instruction_kind_name(static_cast<InstructionKind>(k)))
      return static_cast<InstructionKind>(k);
  }
  fail(ErrorKind::Format, "unknown instruction kind '" + name + "'");
}

CaptionEmbedders uniform_embedders(std::size_t dim) {
  std::vector<double> e0(dim, 0.0);
  e0[0] = 1.0;
  CaptionEmbedders emb;
  emb.text = [e0](const std::string&) { return e0; };
  emb.depth = [e0](const DepthImage&) { return e0; };
  return emb;
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<double> hashed_unit(std::uint64_t seed, std::size_t dim) {
  Rng rng(seed);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (double& x : v) {
    x = rng.uniform(-1.0, 1.0);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

}  // namespace

CaptionEmbedders hash_bow_embedders(std::size_t dim) {
  CaptionEmbedders emb;
  emb.text = [dim](const std::string& text) {
    std::vector<double> acc(dim, 0.0);
    std::string word;
    std::istringstream words(text);
    std::size_t n = 0;
    while (words >> word) {
      const std::vector<double> h = hashed_unit(fnv1a(word), dim);
      for (std::size_t i = 0; i < dim; ++i) acc[i] += h[i];
      ++n;
    }
    if (n == 0) acc[0] = 1.0;
    double norm = 0.0;
    for (double x : acc) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0) {
      for (double& x : acc) x /= norm;
    }
    return acc;
  };
  emb.depth = [dim](const DepthImage& img) {
    // coarse geometry signature: quantized mean plus gradient signs
    double mean = 0.0;
    for (double d : img.depth) mean += d;
    mean /= static_cast<double>(img.depth.size());
    double dx = 0.0, dy = 0.0;
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x + 1 < img.width; ++x)
        dx += img.at(x + 1, y) - img.at(x, y);
    for (std::size_t y = 0; y + 1 < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        dy += img.at(x, y + 1) - img.at(x, y);
    const auto bucket = static_cast<std::uint64_t>(
        std::clamp(mean / img.max_range, 0.0, 1.0) * 15.0);
    const std::uint64_t key =
        (bucket << 2) | (dx > 0 ? 1u : 0u) | (dy > 0 ? 2u : 0u);
    return hashed_unit(mix_seed(0xb0wd, key), dim);
  };
  return emb;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorKind::Contract,
          "caption scoring: embedding dimensions disagree (" +
              std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
              ")");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  require(na > 0.0 && nb > 0.0, ErrorKind::Contract,
          "caption scoring: zero-norm embedding");
  return dot / std::sqrt(na * nb);
}

}  // namespace

CaptionScore score_captions(const SceneRecord& rec,
                            const CaptionEmbedders& embedders) {
  require(!rec.captions.empty(), ErrorKind::Contract,
          "score_captions: scene " + rec.scene_id + " has no captions");
  const std::vector<double> img = embedders.depth(rec.image);
  CaptionScore result;
  for (std::size_t i = 0; i < rec.captions.size(); ++i) {
    const double s = cosine(embedders.text(rec.captions[i]), img);
    result.scores.push_back(s);
    if (i == 0 || s > result.scores[result.best_index]) result.best_index = i;
  }
  result.best_caption = rec.captions[result.best_index];
  return result;
}

std::vector<std::uint8_t> rasterize_mask(const DepthImage& img,
                                         const ObjectInstance& obj) {
  std::vector<std::uint8_t> mask(img.pixels(), 0);
  for (std::size_t idx : obj.mask) {
    require(idx < mask.size(), ErrorKind::Contract,
            "rasterize_mask: pixel index outside image");
    mask[idx] = 1;
  }
  return mask;
}

std::vector<std::uint8_t> ones_mask(const DepthImage& img) {
  return std::vector<std::uint8_t>(img.pixels(), 1);
}

std::vector<TrainingPair> build_pairs(const std::vector<SceneRecord>& scenes,
                                      const CaptionEmbedders& embedders,
                                      std::uint64_t seed) {
  (void)seed;  // construction is already deterministic; kept for provenance
  require(!scenes.empty(), ErrorKind::Contract, "build_pairs: no scenes");
  std::vector<std::size_t> order(scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scenes[a].scene_id < scenes[b].scene_id;
  });

  std::vector<TrainingPair> pairs;
  for (std::size_t si : order) {
    const SceneRecord& rec = scenes[si];
    const std::string caption = score_captions(rec, embedders).best_caption;
    auto depth = std::make_shared<const DepthImage>(rec.image);
    if (rec.objects.empty()) {
      TrainingPair pair;
      pair.scene_id = rec.scene_id;
      pair.object_index = -1;
      pair.depth = depth;
      pair.mask = ones_mask(rec.image);
      pair.caption = caption;
      pairs.push_back(std::move(pair));
      continue;
    }
    for (std::size_t o = 0; o < rec.objects.size(); ++o) {
      TrainingPair pair;
      pair.scene_id = rec.scene_id;
      pair.object_index = static_cast<int>(o);
      pair.depth = depth;
      pair.mask = rasterize_mask(rec.image, rec.objects[o]);
      pair.caption = caption;
      pairs.push_back(std::move(pair));
    }
  }
  return pairs;
}

std::vector<TrainingPair> apply_sampling(std::vector<TrainingPair> pairs,
                                         double r, std::uint64_t seed) {
  require(r >= 0.0 && r <= 1.0, ErrorKind::Config,
          "sample ratio must lie in [0,1], got " + std::to_string(r));
  Rng rng(seed);
  for (TrainingPair& pair : pairs) {
    // one draw per pair, replaced or not, so the index set depends only on
    // (seed, pair count)
    const bool replace = rng.uniform() < r;
    if (replace) {
      pair.mask.assign(pair.mask.size(), 1);
      pair.replaced = true;
    }
  }
  return pairs;
}

namespace {

struct ObjectRef {
  std::size_t index;
  std::string label;
  std::string region;
  double mean_depth;
};

std::vector<ObjectRef> object_refs(const SceneRecord& rec) {
  std::vector<ObjectRef> refs;
  for (std::size_t i = 0; i < rec.objects.size(); ++i) {
    refs.push_back({i, rec.objects[i].label,
                    format_region(rec.objects[i].bbox, rec.image.width,
                                  rec.image.height),
                    region_mean_depth(rec.image, rec.objects[i])});
  }
  return refs;
}

// pairs usable in depth-comparison templates: unambiguous gap, distinct
// labels, distinct region strings
std::vector<std::pair<std::size_t, std::size_t>> comparable_pairs(
    const std::vector<ObjectRef>& refs, double tie_eps) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    for (std::size_t j = i + 1; j < refs.size(); ++j) {
      if (std::abs(refs[i].mean_depth - refs[j].mean_depth) < tie_eps) continue;
      if (refs[i].label == refs[j].label) continue;
      if (refs[i].region == refs[j].region) continue;
      out.emplace_back(i, j);
    }
  }
  return out;
}

std::string enumerate_labels(const std::vector<ObjectRef>& refs) {
  std::string out;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (i > 0) out += (i + 1 == refs.size()) ? " and " : " , ";
    out += "a " + refs[i].label;
  }
  return out;
}

}  // namespace

std::vector<InstructionSample> synth_instructions(const SceneRecord& rec,
                                                  double tie_eps,
                                                  std::uint64_t seed) {
  Rng rng(seed);
  std::vector<InstructionSample> samples;
  const std::vector<ObjectRef> refs = object_refs(rec);
  const auto pairs = comparable_pairs(refs, tie_eps);

  if (!pairs.empty()) {
    // complex reasoning: which of two named regions is closer
    const auto [i, j] = pairs[rng.bounded(pairs.size())];
    const ObjectRef& closer =
        refs[i].mean_depth < refs[j].mean_depth ? refs[i] : refs[j];
    InstructionSample cr;
    cr.scene_id = rec.scene_id;
    cr.kind = InstructionKind::ComplexReasoning;
    cr.turns.push_back(
        {"user", "you want to reach one of these objects quickly . consider "
                 "the " + refs[i].label + " at region " + refs[i].region +
                 " and the " + refs[j].label + " at region " + refs[j].region +
                 " . which one is closer to the viewpoint ?"});
    cr.turns.push_back(
        {"assistant", "the " + closer.label + " at region " + closer.region +
                      " is closer because its average depth is smaller ."});
    samples.push_back(std::move(cr));

    // multi-round dialogue: a recognition turn, then a distance turn
    const auto [a, b] = pairs[rng.bounded(pairs.size())];
    const ObjectRef& first = rng.chance(0.5) ? refs[a] : refs[b];
    const ObjectRef& farther =
        refs[a].mean_depth > refs[b].mean_depth ? refs[a] : refs[b];
    InstructionSample mrd;
    mrd.scene_id = rec.scene_id;
    mrd.kind = InstructionKind::MultiRoundDialogue;
    mrd.turns.push_back(
        {"user", "what object occupies region " + first.region + " ?"});
    mrd.turns.push_back({"assistant", "it is a " + first.label + " ."});
    mrd.turns.push_back(
        {"user", "which is farther from the viewpoint : the " + refs[a].label +
                 " at region " + refs[a].region + " or the " + refs[b].label +
                 " at region " + refs[b].region + " ?"});
    mrd.turns.push_back({"assistant", "the " + farther.label + " at region " +
                                      farther.region + " is farther ."});
    samples.push_back(std::move(mrd));
  }

  // detailed description is always available
  InstructionSample dd;
  dd.scene_id = rec.scene_id;
  dd.kind = InstructionKind::DetailedDescription;
  dd.turns.push_back({"user", "describe this depth map in detail ."});
  if (refs.empty()) {
    dd.turns.push_back({"assistant", "this is an empty " + rec.scene_label +
                                     " . no objects are present ."});
  } else if (refs.size() == 1) {
    dd.turns.push_back({"assistant", "this is a " + rec.scene_label +
                                     " . it contains a " + refs[0].label +
                                     " ."});
  } else {
    std::size_t nearest = 0, farthest = 0;
    for (std::size_t i = 1; i < refs.size(); ++i) {
      if (refs[i].mean_depth < refs[nearest].mean_depth) nearest = i;
      if (refs[i].mean_depth > refs[farthest].mean_depth) farthest = i;
    }
    dd.turns.push_back(
        {"assistant", "this is a " + rec.scene_label + " . it contains " +
                      enumerate_labels(refs) + " . the " +
                      refs[nearest].label + " is nearest and the " +
                      refs[farthest].label + " is farthest ."});
  }
  samples.push_back(std::move(dd));
  return samples;
}

// --- file formats ------------------------------------------------------------

void write_pairs_jsonl(const std::filesystem::path& path,
                       const std::vector<TrainingPair>& pairs) {
  std::ostringstream out;
  for (const TrainingPair& pair : pairs) {
    json j;
    j["scene_id"] = pair.scene_id;
    j["object_index"] = pair.object_index;
    j["caption"] = pair.caption;
    j["replaced"] = pair.replaced;
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

std::vector<TrainingPair> read_pairs_jsonl(
    const std::filesystem::path& path,
    const std::filesystem::path& scenes_dir) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Resource,
          "pairs file does not exist: " + path.string());
  std::map<std::string, SceneRecord> cache;
  std::map<std::string, std::shared_ptr<const DepthImage>> depth_cache;
  std::vector<TrainingPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      TrainingPair pair;
      pair.scene_id = j.at("scene_id").get<std::string>();
      pair.object_index = j.at("object_index").get<int>();
      pair.caption = j.at("caption").get<std::string>();
      pair.replaced = j.at("replaced").get<bool>();
      if (!cache.count(pair.scene_id)) {
        cache[pair.scene_id] = read_scene(scenes_dir, pair.scene_id);
        depth_cache[pair.scene_id] =
            std::make_shared<const DepthImage>(cache[pair.scene_id].image);
      }
      const SceneRecord& rec = cache[pair.scene_id];
      pair.depth = depth_cache[pair.scene_id];
      if (pair.replaced || pair.object_index < 0) {
        pair.mask = ones_mask(rec.image);
      } else {
        const auto oi = static_cast<std::size_t>(pair.object_index);
        require(oi < rec.objects.size(), ErrorKind::Format,
                path.string() + " line " + std::to_string(lineno) +
                    ": object index out of range for scene " + pair.scene_id);
        pair.mask = rasterize_mask(rec.image, rec.objects[oi]);
      }
      pairs.push_back(std::move(pair));
    } catch (const json::exception& e) {
      fail(ErrorKind::Format, path.string() + " line " +
                                  std::to_string(lineno) + ": " + e.what());
    }
  }
  return pairs;
}

void write_instructions_jsonl(const std::filesystem::path& path,
                              const std::vector<InstructionSample>& samples) {
  std::ostringstream out;
  for (const InstructionSample& s : samples) {
    json j;
    j["scene_id"] = s.scene_id;
    j["kind"] = instruction_kind_name(s.kind);
    json turns = json::array();
    for (const Turn& t : s.turns) turns.push_back({{"role", t.role},
                                                   {"text", t.text}});
    j["turns"] = std::move(turns);
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

std::vector<InstructionSample> read_instructions_jsonl(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Resource,
          "instructions file does not exist: " + path.string());
  std::vector<InstructionSample> samples;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      InstructionSample s;
      s.scene_id = j.at("scene_id").get<std::string>();
      s.kind = instruction_kind_from_name(j.at("kind").get<std::string>());
      for (const json& t : j.at("turns"))
        s.turns.push_back(
            {t.at("role").get<std::string>(), t.at("text").get<std::string>()});
      samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      fail(ErrorKind::Format, path.string() + " line " +
                                  std::to_string(lineno) + ": " + e.what());
    }
  }
  return samples;
}

}  // namespace dslab
