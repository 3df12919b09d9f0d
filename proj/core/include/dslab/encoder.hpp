#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dslab/nn.hpp"
#include "dslab/pairset.hpp"
#include "dslab/scene.hpp"
#include "dslab/vocab.hpp"

namespace dslab {

struct EncoderConfig {
  std::size_t image_size = 32;
  std::size_t patch = 8;
  std::size_t embed_dim = 64;
  std::size_t vision_blocks = 2;
  std::size_t text_blocks = 2;
  std::size_t heads = 2;
  std::size_t max_text_len = 16;
  double temperature_init = 0.07;
  double lr = 0.08;
  std::size_t epochs = 8;
  std::size_t batch = 32;
  double sample_ratio = 0.1;
  bool freeze_text = false;

  void validate() const;
  std::size_t patch_tokens() const {
    return (image_size / patch) * (image_size / patch);
  }
};

// Dual-tower contrastive encoder. The vision tower patch-projects the depth
// image and the binary bbox mask separately and sums the two token matrices
// before the transformer; the class-token output is the image embedding.
class DualEncoder {
 public:
  DualEncoder(EncoderConfig config, Vocab vocab, std::uint64_t seed);

  // tensor-path forwards (participate in autodiff)
  Tensor fused_tokens(const DepthImage& depth,
                      const std::vector<std::uint8_t>& mask);
  Tensor depth_tokens(const DepthImage& depth);
  // post-transformer, post-layernorm hidden states [patch_tokens + 1, D]
  Tensor vision_hidden(const DepthImage& depth,
                       const std::vector<std::uint8_t>& mask);
  Tensor vision_forward(const DepthImage& depth,
                        const std::vector<std::uint8_t>& mask);  // [1,D], unit
  Tensor text_forward(const std::string& text);                  // [1,D], unit
  // symmetric InfoNCE over a batch of N aligned (vision, text) embeddings
  Tensor contrastive_loss(const Tensor& hv, const Tensor& ht);

  // inference wrappers
  std::vector<double> encode_vision(const DepthImage& depth,
                                    const std::vector<std::uint8_t>& mask);
  std::vector<double> encode_text(const std::string& text);

  std::vector<ParamGroup>& groups() { return groups_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  const EncoderConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }

  // freeze/unfreeze every group whose name starts with prefix
  void set_frozen(const std::string& prefix, bool frozen);
  // adopt tensors from a loaded checkpoint, matched by group name and shape
  void load_groups(const std::vector<ParamGroup>& loaded);

 private:
  EncoderConfig config_;
  Vocab vocab_;

  Tensor depth_w_, depth_b_;  // Depth Conv: f(D)
  Tensor bbox_w_, bbox_b_;    // Bbox Conv: g(M)
  Tensor cls_;
  Tensor vis_pos_;
  std::vector<BlockParams> vis_blocks_;
  LayerNormParams vis_ln_;
  LinearParams vis_proj_;

  Tensor txt_embed_;
  Tensor txt_pos_;
  std::vector<BlockParams> txt_blocks_;
  LayerNormParams txt_ln_;
  LinearParams txt_proj_;

  Tensor log_scale_;  // learned log(1/temperature)

  std::vector<ParamGroup> groups_;
  void build_groups();
};

struct TrainCurvePoint {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double wall_ms = 0.0;
};

// minibatch SGD over shuffled pairs; mask-replacement sampling is applied
// upstream by the caller
std::vector<TrainCurvePoint> train_encoder(DualEncoder& enc,
                                           const std::vector<TrainingPair>& pairs,
                                           std::uint64_t seed);

constexpr const char* kZeroShotTemplate = "a depth map of a {label}";

struct ZeroShotResult {
  std::string label;
  std::vector<double> scores;
};

// nearest text-prompt embedding; the bbox channel gets the all-ones mask
ZeroShotResult zero_shot_classify(DualEncoder& enc, const DepthImage& depth,
                                  const std::vector<std::string>& labels,
                                  const std::string& prompt_template);

double evaluate_zero_shot(DualEncoder& enc,
                          const std::vector<SceneRecord>& scenes,
                          const std::vector<std::string>& labels,
                          const std::string& prompt_template);

// caption-scoring embedders backed by the (trained) encoder towers
CaptionEmbedders encoder_embedders(DualEncoder& enc);

struct RatioSearchRow {
  double ratio = 0.0;
  double accuracy = 0.0;
};

// trains one encoder per ratio r in {0, 0.05, ..., max_ratio} from identical
// initialization and reports held-out zero-shot accuracy per r
std::vector<RatioSearchRow> ratio_search(
    const std::vector<TrainingPair>& pairs,
    const std::vector<SceneRecord>& eval_scenes,
    const std::vector<std::string>& labels, const EncoderConfig& config,
    const Vocab& vocab, std::uint64_t seed, double max_ratio = 0.3,
    double step = 0.05);

}  // namespace dslab
