#include "dslab/encoder.hpp"

#include <chrono>
#include <cmath>

namespace dslab {

// --- nn building blocks --------------------------------------------------

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

LinearParams make_linear(std::size_t in, std::size_t out, Rng& rng) {
  return {init_uniform({in, out}, in, rng), Tensor::zeros({out})};
}

Tensor linear(const Tensor& x, const LinearParams& p) {
  return add_rowvec(matmul(x, p.w), p.b);
}

LayerNormParams make_layer_norm(std::size_t dim) {
  return {Tensor::full({dim}, 1.0), Tensor::zeros({dim})};
}

BlockParams make_block(std::size_t dim, Rng& rng) {
  BlockParams p;
  p.ln1 = make_layer_norm(dim);
  p.qkv = make_linear(dim, 3 * dim, rng);
  p.out = make_linear(dim, dim, rng);
  p.ln2 = make_layer_norm(dim);
  p.fc1 = make_linear(dim, 4 * dim, rng);
  p.fc2 = make_linear(4 * dim, dim, rng);
  return p;
}

Tensor block_forward(const BlockParams& p, const Tensor& x, std::size_t heads,
                     const Tensor* attn_bias) {
  const std::size_t dim = x.extent(1);
  require(heads > 0 && dim % heads == 0, ErrorKind::Config,
          "block_forward: embed dim " + std::to_string(dim) +
              " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t hd = dim / heads;

  Tensor a = layer_norm(x, p.ln1.gain, p.ln1.bias);
  Tensor qkv = linear(a, p.qkv);
  Tensor q = slice_cols(qkv, 0, dim);
  Tensor k = slice_cols(qkv, dim, dim);
  Tensor v = slice_cols(qkv, 2 * dim, dim);

  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * hd, hd);
    Tensor kh = slice_cols(k, h * hd, hd);
    Tensor vh = slice_cols(v, h * hd, hd);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_hd);
    if (attn_bias != nullptr) scores = add(scores, *attn_bias);
    head_out.push_back(matmul(softmax_rows(scores), vh));
  }
  Tensor attended = heads == 1 ? head_out[0] : concat_cols(head_out);
  Tensor x1 = add(x, linear(attended, p.out));
  Tensor m = layer_norm(x1, p.ln2.gain, p.ln2.bias);
  return add(x1, linear(gelu(linear(m, p.fc1)), p.fc2));
}

void collect_block_params(const BlockParams& p, std::vector<Tensor>& out) {
  out.push_back(p.ln1.gain);
  out.push_back(p.ln1.bias);
  out.push_back(p.qkv.w);
  out.push_back(p.qkv.b);
  out.push_back(p.out.w);
  out.push_back(p.out.b);
  out.push_back(p.ln2.gain);
  out.push_back(p.ln2.bias);
  out.push_back(p.fc1.w);
  out.push_back(p.fc1.b);
  out.push_back(p.fc2.w);
  out.push_back(p.fc2.b);
}

Tensor causal_attn_bias(std::size_t t) {
  Tensor bias = Tensor::zeros({t, t});
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) bias.data()[i * t + j] = -1e30;
  return bias;
}

// --- dual encoder ---------------------------------------------------------

void EncoderConfig::validate() const {
  require(patch > 0 && image_size > 0 && image_size % patch == 0,
          ErrorKind::Config,
          "encoder: image size " + std::to_string(image_size) +
              " not divisible by patch " + std::to_string(patch));
  require(embed_dim >= 1 && vision_blocks >= 1 && text_blocks >= 1 &&
              heads >= 1 && max_text_len >= 1,
          ErrorKind::Config, "encoder: all dimensions must be >= 1");
  require(embed_dim % heads == 0, ErrorKind::Config,
          "encoder: embed_dim must be divisible by heads");
  require(temperature_init > 0, ErrorKind::Config,
          "encoder: temperature must be positive");
  require(sample_ratio >= 0.0 && sample_ratio <= 1.0, ErrorKind::Config,
          "encoder: sample_ratio must lie in [0,1]");
}

DualEncoder::DualEncoder(EncoderConfig config, Vocab vocab, std::uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.embed_dim;
  const std::size_t p = config_.patch;
  const std::size_t tokens = config_.patch_tokens();

  depth_w_ = init_uniform({d, 1, p, p}, p * p, rng);
  depth_b_ = Tensor::zeros({d});
  bbox_w_ = init_uniform({d, 1, p, p}, p * p, rng);
  bbox_b_ = Tensor::zeros({d});
  cls_ = init_uniform({1, d}, d, rng);
  vis_pos_ = init_uniform({tokens + 1, d}, d, rng);
  for (std::size_t b = 0; b < config_.vision_blocks; ++b)
    vis_blocks_.push_back(make_block(d, rng));
  vis_ln_ = make_layer_norm(d);
  vis_proj_ = make_linear(d, d, rng);

  txt_embed_ = init_uniform({vocab_.size(), d}, d, rng);
  txt_pos_ = init_uniform({config_.max_text_len + 1, d}, d, rng);
  for (std::size_t b = 0; b < config_.text_blocks; ++b)
    txt_blocks_.push_back(make_block(d, rng));
  txt_ln_ = make_layer_norm(d);
  txt_proj_ = make_linear(d, d, rng);

  log_scale_ = Tensor::scalar(std::log(1.0 / config_.temperature_init));

  build_groups();
}

void DualEncoder::build_groups() {
  groups_.clear();
  groups_.push_back({"vision.patch_depth", {depth_w_, depth_b_}, false});
  groups_.push_back({"vision.patch_bbox", {bbox_w_, bbox_b_}, false});
  groups_.push_back({"vision.pos", {cls_, vis_pos_}, false});
  for (std::size_t b = 0; b < vis_blocks_.size(); ++b) {
    ParamGroup g{"vision.block" + std::to_string(b), {}, false};
    collect_block_params(vis_blocks_[b], g.tensors);
    groups_.push_back(std::move(g));
  }
  groups_.push_back({"vision.head",
                     {vis_ln_.gain, vis_ln_.bias, vis_proj_.w, vis_proj_.b},
                     false});
  groups_.push_back({"text.embed", {txt_embed_}, false});
  groups_.push_back({"text.pos", {txt_pos_}, false});
  for (std::size_t b = 0; b < txt_blocks_.size(); ++b) {
    ParamGroup g{"text.block" + std::to_string(b), {}, false};
    collect_block_params(txt_blocks_[b], g.tensors);
    groups_.push_back(std::move(g));
  }
  groups_.push_back({"text.head",
                     {txt_ln_.gain, txt_ln_.bias, txt_proj_.w, txt_proj_.b},
                     false});
  groups_.push_back({"temperature", {log_scale_}, false});
  for (ParamGroup& g : groups_)
    for (Tensor& t : g.tensors) t.set_requires_grad(true);
}

void DualEncoder::set_frozen(const std::string& prefix, bool frozen) {
  for (ParamGroup& g : groups_) {
    if (g.name.rfind(prefix, 0) == 0) {
      g.frozen = frozen;
      for (Tensor& t : g.tensors) t.set_requires_grad(!frozen);
    }
  }
}

void DualEncoder::load_groups(const std::vector<ParamGroup>& loaded) {
  for (ParamGroup& mine : groups_) {
    const ParamGroup* found = nullptr;
    for (const ParamGroup& g : loaded) {
      if (g.name == mine.name) {
        found = &g;
        break;
      }
    }
    require(found != nullptr, ErrorKind::Config,
            "checkpoint is missing group '" + mine.name + "'");
    require(found->tensors.size() == mine.tensors.size(), ErrorKind::Config,
            "checkpoint group '" + mine.name + "' has wrong tensor count");
    for (std::size_t i = 0; i < mine.tensors.size(); ++i) {
      require(found->tensors[i].shape() == mine.tensors[i].shape(),
              ErrorKind::Config,
              "checkpoint group '" + mine.name + "' tensor " +
                  std::to_string(i) + " has shape " +
                  shape_str(found->tensors[i].shape()) + ", want " +
                  shape_str(mine.tensors[i].shape()));
      mine.tensors[i].data() = found->tensors[i].data();
    }
  }
}

namespace {

Tensor image_tensor(const DepthImage& depth) {
  std::vector<double> data(depth.depth.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = depth.normalized(i);  // depth / max_range into [0,1]
  return Tensor::from({1, depth.height, depth.width}, std::move(data));
}

Tensor mask_tensor(const std::vector<std::uint8_t>& mask, std::size_t h,
                   std::size_t w) {
  std::vector<double> data(mask.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = static_cast<double>(mask[i]);
  return Tensor::from({1, h, w}, std::move(data));
}

}  // namespace

Tensor DualEncoder::depth_tokens(const DepthImage& depth) {
  require(depth.width == config_.image_size && depth.height == config_.image_size,
          ErrorKind::Contract,
          "encode_vision: image is " + std::to_string(depth.width) + "x" +
              std::to_string(depth.height) + ", encoder expects " +
              std::to_string(config_.image_size));
  return patch_project(image_tensor(depth), depth_w_, depth_b_);
}

Tensor DualEncoder::fused_tokens(const DepthImage& depth,
                                 const std::vector<std::uint8_t>& mask) {
  require(mask.size() == depth.pixels(), ErrorKind::Contract,
          "encode_vision: mask has " + std::to_string(mask.size()) +
              " entries for " + std::to_string(depth.pixels()) + " pixels");
  Tensor h_d = depth_tokens(depth);
  Tensor h_m = patch_project(mask_tensor(mask, depth.height, depth.width),
                             bbox_w_, bbox_b_);
  return add(h_d, h_m);  // H_V = H_D + H_M
}

Tensor DualEncoder::vision_hidden(const DepthImage& depth,
                                  const std::vector<std::uint8_t>& mask) {
  Tensor tokens = fused_tokens(depth, mask);
  Tensor seq = add(concat_rows({cls_, tokens}), vis_pos_);
  for (const BlockParams& b : vis_blocks_)
    seq = block_forward(b, seq, config_.heads);
  return layer_norm(seq, vis_ln_.gain, vis_ln_.bias);
}

Tensor DualEncoder::vision_forward(const DepthImage& depth,
                                   const std::vector<std::uint8_t>& mask) {
  Tensor hidden = vision_hidden(depth, mask);
  Tensor cls_out = slice_rows(hidden, 0, 1);
  return l2_normalize(linear(cls_out, vis_proj_));
}

Tensor DualEncoder::text_forward(const std::string& text) {
  std::vector<int> ids = tokenize(vocab_, text);
  require(!ids.empty(), ErrorKind::Contract,
          "encode_text: empty text cannot be embedded");
  if (ids.size() > config_.max_text_len) ids.resize(config_.max_text_len);

  std::vector<std::size_t> rows(ids.begin(), ids.end());
  Tensor seq = embedding(txt_embed_, rows);
  seq = add(seq, slice_rows(txt_pos_, 0, rows.size()));
  for (const BlockParams& b : txt_blocks_)
    seq = block_forward(b, seq, config_.heads);
  // mean pooling keeps the embedding robust to where a word sits in the text
  Tensor pool = Tensor::full({1, rows.size()},
                             1.0 / static_cast<double>(rows.size()));
  Tensor pooled = matmul(pool, seq);
  pooled = layer_norm(pooled, txt_ln_.gain, txt_ln_.bias);
  return l2_normalize(linear(pooled, txt_proj_));
}

Tensor DualEncoder::contrastive_loss(const Tensor& hv, const Tensor& ht) {
  require(hv.rank() == 2 && ht.rank() == 2, ErrorKind::Contract,
          "contrastive_loss: embeddings must be [N,D] matrices");
  const std::size_t n = hv.extent(0);
  require(n >= 1, ErrorKind::Contract, "contrastive_loss: empty batch");
  require(ht.extent(0) == n && ht.extent(1) == hv.extent(1),
          ErrorKind::Contract, "contrastive_loss: embedding shapes disagree");
  Tensor logits = mul_exp_scalar(matmul(hv, transpose(ht)), log_scale_);
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i;
  Tensor l_v = softmax_cross_entropy(logits, diag);
  Tensor l_t = softmax_cross_entropy(transpose(logits), diag);
  return scale(add(l_v, l_t), 0.5);
}

std::vector<double> DualEncoder::encode_vision(
    const DepthImage& depth, const std::vector<std::uint8_t>& mask) {
  NoGradGuard pause;
  return vision_forward(depth, mask).data();
}

std::vector<double> DualEncoder::encode_text(const std::string& text) {
  NoGradGuard pause;
  return text_forward(text).data();
}

// --- training and evaluation -----------------------------------------------

std::vector<TrainCurvePoint> train_encoder(
    DualEncoder& enc, const std::vector<TrainingPair>& pairs,
    std::uint64_t seed) {
  require(!pairs.empty(), ErrorKind::Contract, "train_encoder: no pairs");
  const EncoderConfig& cfg = enc.config();
  enc.set_frozen("text.", cfg.freeze_text);

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  Rng rng(mix_seed(seed, 0xeec0de));
  std::vector<TrainCurvePoint> curve;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, order.size() - start);
      std::vector<Tensor> hv, ht;
      hv.reserve(n);
      ht.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const TrainingPair& pair = pairs[order[start + i]];
        hv.push_back(enc.vision_forward(*pair.depth, pair.mask));
        ht.push_back(enc.text_forward(pair.caption));
      }
      Tensor loss = enc.contrastive_loss(concat_rows(hv), concat_rows(ht));
      const double l = loss.item();
      if (!std::isfinite(l)) {
        fail(ErrorKind::Training,
             "loss diverged at step " + std::to_string(step));
      }
      loss_sum += l;
      ++batches;
      ++step;
      backward(loss);
      sgd_step(enc.groups(), cfg.lr);
    }
    const auto t1 = std::chrono::steady_clock::now();
    curve.push_back(
        {epoch, loss_sum / static_cast<double>(batches),
         std::chrono::duration<double, std::milli>(t1 - t0).count()});
  }
  return curve;
}

namespace {

std::string fill_template(const std::string& prompt_template,
                          const std::string& label) {
  const std::string key = "{label}";
  std::string out = prompt_template;
  const auto at = out.find(key);
  require(at != std::string::npos, ErrorKind::Config,
          "prompt template must contain {label}");
  out.replace(at, key.size(), label);
  return out;
}

}  // namespace

ZeroShotResult zero_shot_classify(DualEncoder& enc, const DepthImage& depth,
                                  const std::vector<std::string>& labels,
                                  const std::string& prompt_template) {
  require(!labels.empty(), ErrorKind::Contract,
          "zero_shot_classify: no labels");
  NoGradGuard pause;
  const std::vector<std::uint8_t> ones(depth.pixels(), 1);
  const std::vector<double> img = enc.vision_forward(depth, ones).data();
  ZeroShotResult result;
  result.scores.reserve(labels.size());
  std::size_t best = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::vector<double> txt =
        enc.text_forward(fill_template(prompt_template, labels[i])).data();
    double dot = 0.0;
    for (std::size_t d = 0; d < txt.size(); ++d) dot += txt[d] * img[d];
    result.scores.push_back(dot);
    if (result.scores[i] > result.scores[best]) best = i;  // ties keep lowest
  }
  result.label = labels[best];
  return result;
}

double evaluate_zero_shot(DualEncoder& enc,
                          const std::vector<SceneRecord>& scenes,
                          const std::vector<std::string>& labels,
                          const std::string& prompt_template) {
  require(!scenes.empty(), ErrorKind::Contract, "evaluate_zero_shot: no scenes");
  std::size_t correct = 0;
  for (const SceneRecord& rec : scenes) {
    const ZeroShotResult r =
        zero_shot_classify(enc, rec.image, labels, prompt_template);
    if (r.label == rec.scene_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scenes.size());
}

CaptionEmbedders encoder_embedders(DualEncoder& enc) {
  CaptionEmbedders emb;
  emb.text = [&enc](const std::string& text) { return enc.encode_text(text); };
  emb.depth = [&enc](const DepthImage& img) {
    const std::vector<std::uint8_t> ones(img.pixels(), 1);
    return enc.encode_vision(img, ones);
  };
  return emb;
}

std::vector<RatioSearchRow> ratio_search(
    const std::vector<TrainingPair>& pairs,
    const std::vector<SceneRecord>& eval_scenes,
    const std::vector<std::string>& labels, const EncoderConfig& config,
    const Vocab& vocab, std::uint64_t seed, double max_ratio, double step) {
  std::vector<RatioSearchRow> rows;
  std::size_t index = 0;
  for (double r = 0.0; r <= max_ratio + 1e-9; r += step, ++index) {
    const double ratio = std::round(r * 100.0) / 100.0;
    auto sampled = apply_sampling(pairs, ratio, mix_seed(seed, 1000 + index));
    DualEncoder enc(config, vocab, seed);  // identical init for every ratio
    train_encoder(enc, sampled, mix_seed(seed, 2000 + index));
    rows.push_back(
        {ratio, evaluate_zero_shot(enc, eval_scenes, labels, kZeroShotTemplate)});
  }
  return rows;
}

}  // namespace dslab
