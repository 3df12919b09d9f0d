#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dslab/scene.hpp"

namespace dslab {

// One depth-text-bbox triple for contrastive alignment. The mask is the
// rasterized object instance mask (1 = object, 0 = background); replaced
// pairs carry the all-ones mask instead.
struct TrainingPair {
  std::string scene_id;
  int object_index = -1;  // -1 = scene-level pair with the all-ones mask
  std::shared_ptr<const DepthImage> depth;
  std::vector<std::uint8_t> mask;
  std::string caption;
  bool replaced = false;
};

enum class InstructionKind : int {
  ComplexReasoning = 0,
  MultiRoundDialogue = 1,
  DetailedDescription = 2,
};
const char* instruction_kind_name(InstructionKind kind);
InstructionKind instruction_kind_from_name(const std::string& name);

struct Turn {
  std::string role;  // "user" or "assistant"
  std::string text;
};

struct InstructionSample {
  std::string scene_id;
  InstructionKind kind = InstructionKind::DetailedDescription;
  std::vector<Turn> turns;  // alternating, user first
};

// Injected caption scorer: any pair of embedders producing equal-dimension
// vectors works (the trained dual encoder, or a stub in tests).
struct CaptionEmbedders {
  std::function<std::vector<double>(const std::string&)> text;
  std::function<std::vector<double>(const DepthImage&)> depth;
};

// Constant-embedding bootstrap scorer: every caption ties, so the tie rule
// selects caption 0 (the scene-level caption).
CaptionEmbedders uniform_embedders(std::size_t dim = 8);

// Deterministic hash bag-of-words scorer used to bootstrap pair building
// before any encoder exists; winners spread across a scene's captions.
CaptionEmbedders hash_bow_embedders(std::size_t dim = 16);

struct CaptionScore {
  std::size_t best_index = 0;
  std::string best_caption;
  std::vector<double> scores;  // cosine per caption
};

// argmax of cosine similarity between caption embeddings and the image
// embedding; ties break to the lowest caption index
CaptionScore score_captions(const SceneRecord& rec,
                            const CaptionEmbedders& embedders);

std::vector<std::uint8_t> rasterize_mask(const DepthImage& img,
                                         const ObjectInstance& obj);
std::vector<std::uint8_t> ones_mask(const DepthImage& img);

// one pair per (scene, object); zero-object scenes degrade to one all-ones
// pair; every pair of a scene shares the scene's best-scored caption
std::vector<TrainingPair> build_pairs(const std::vector<SceneRecord>& scenes,
                                      const CaptionEmbedders& embedders,
                                      std::uint64_t seed);

// each pair independently has its mask replaced by all-ones with probability
// r; the replaced index set is a pure function of (seed, pair count)
std::vector<TrainingPair> apply_sampling(std::vector<TrainingPair> pairs,
                                         double r, std::uint64_t seed);

// deterministic template fill; kinds that need more objects than the scene
// has are skipped
std::vector<InstructionSample> synth_instructions(const SceneRecord& rec,
                                                  double tie_eps,
                                                  std::uint64_t seed);

// --- file formats ------------------------------------------------------------
// pairs: JSONL of {scene_id, object_index, caption, replaced}; pixels are
// referenced through the scene directory, never duplicated

void write_pairs_jsonl(const std::filesystem::path& path,
                       const std::vector<TrainingPair>& pairs);
std::vector<TrainingPair> read_pairs_jsonl(const std::filesystem::path& path,
                                           const std::filesystem::path& scenes_dir);

void write_instructions_jsonl(const std::filesystem::path& path,
                              const std::vector<InstructionSample>& samples);
std::vector<InstructionSample> read_instructions_jsonl(
    const std::filesystem::path& path);

}  // namespace dslab
