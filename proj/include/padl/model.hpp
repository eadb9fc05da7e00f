#pragma once

// The PADL networks: a perturbation encoder that personalizes a shared token
// set to the input image through cross-attention, a self-attention-only
// perturbation decoder, and a map block that turns the recovered perturbation
// into a manipulation map plus a detection logit.

#include <optional>

#include "padl/ops.hpp"

namespace padl {

struct ModelConfig {
  int image_height = 32;
  int image_width = 32;
  int channels = 3;
  int patch_size = 4;
  int token_dim = 128;
  int heads = 4;
  int head_dim = 32;
  int depth = 3;
  float alpha = 0.03f;
  int mlp_head_hidden = 64;

  int patch_count() const {
    return (image_height / patch_size) * (image_width / patch_size);
  }
  int patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const {
    if (image_height % patch_size != 0 || image_width % patch_size != 0)
      throw std::invalid_argument("model config: image " + std::to_string(image_height) + "x" +
                                  std::to_string(image_width) + " not divisible into " +
                                  std::to_string(patch_size) + "-pixel patches");
    if (token_dim != heads * head_dim)
      throw std::invalid_argument("model config: token_dim " + std::to_string(token_dim) +
                                  " != heads*head_dim " + std::to_string(heads * head_dim));
    if (alpha <= 0.0f)
      throw std::invalid_argument("model config: alpha must be positive");
    if (depth < 1 || channels < 1 || mlp_head_hidden < 1)
      throw std::invalid_argument("model config: depth, channels and mlp_head_hidden must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Weight groups

struct LayerNormW {
  Tensor gamma, beta;
  void init(int d) {
    gamma = Tensor({d}, 1.0f, true);
    beta = Tensor({d}, 0.0f, true);
  }
};

struct AttentionWeights {
  Tensor wq, wk, wv, wo;
  void init(int d, Rng& rng, float scale = 0.02f) {
    wq = rng.normal_tensor({d, d}, 0.0f, scale, true);
    wk = rng.normal_tensor({d, d}, 0.0f, scale, true);
    wv = rng.normal_tensor({d, d}, 0.0f, scale, true);
    wo = rng.normal_tensor({d, d}, 0.0f, scale, true);
  }
};

struct FeedForwardW {
  Tensor w1, b1, w2, b2;
  void init(int d, Rng& rng, float scale = 0.02f) {
    w1 = rng.normal_tensor({d, 4 * d}, 0.0f, scale, true);
    b1 = Tensor({4 * d}, 0.0f, true);
    w2 = rng.normal_tensor({4 * d, d}, 0.0f, scale, true);
    b2 = Tensor({d}, 0.0f, true);
  }
};

// Pre-norm transformer block. Cross-attention is present in the encoder and
// the map block; the perturbation decoder runs self-attention only.
struct BlockW {
  LayerNormW ln_self;
  AttentionWeights self_attn;
  bool has_cross = false;
  LayerNormW ln_cross;
  AttentionWeights cross_attn;
  LayerNormW ln_ffn;
  FeedForwardW ffn;

  void init(int d, bool cross, Rng& rng) {
    ln_self.init(d);
    self_attn.init(d, rng);
    has_cross = cross;
    if (cross) {
      ln_cross.init(d);
      cross_attn.init(d, rng);
    }
    ln_ffn.init(d);
    ffn.init(d, rng);
  }
};

struct PatchEmbedderW {
  Tensor proj;  // [p*p*C, d]
  Tensor bias;  // [d]
  Tensor pos;   // [P, d] or [P+1, d] when a class token is appended
  void init(int patch_dim, int d, int pos_rows, Rng& rng) {
    proj = rng.normal_tensor({patch_dim, d}, 0.0f, 0.02f, true);
    bias = Tensor({d}, 0.0f, true);
    pos = rng.normal_tensor({pos_rows, d}, 0.0f, 0.02f, true);
  }
};

// ---------------------------------------------------------------------------
// Attention

struct AttentionHooks {
  bool identity_out = false;   // skip the output projection
  bool skip_residual = false;  // drop the +queries term
};

// Multi-head scaled dot-product attention core (no residual).
inline Tensor attention_core(const Tensor& queries, const Tensor& context,
                             const AttentionWeights& w, int heads,
                             const AttentionHooks* hooks = nullptr) {
  const int B = queries.dim(0), Q = queries.dim(1), d = queries.dim(2);
  const int K = context.dim(1);
  if (context.dim(2) != d)
    throw std::invalid_argument("attention: query dim " + shape_str(queries.shape()) +
                                " vs context " + shape_str(context.shape()));
  if (d % heads != 0)
    throw std::invalid_argument("attention: token dim " + std::to_string(d) +
                                " not divisible by " + std::to_string(heads) + " heads");
  const int hd = d / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  Tensor q = matmul(queries, w.wq);                         // [B,Q,d]
  Tensor k = matmul(context, w.wk);                         // [B,K,d]
  Tensor v = matmul(context, w.wv);                         // [B,K,d]
  Tensor qh = transpose(reshape(q, {B, Q, heads, hd}), {0, 2, 1, 3});  // [B,h,Q,hd]
  Tensor kt = transpose(reshape(k, {B, K, heads, hd}), {0, 2, 3, 1});  // [B,h,hd,K]
  Tensor vh = transpose(reshape(v, {B, K, heads, hd}), {0, 2, 1, 3});  // [B,h,K,hd]
  Tensor att = softmax(mul_scalar(matmul(qh, kt), scale), -1);         // [B,h,Q,K]
  Tensor ctx = matmul(att, vh);                                        // [B,h,Q,hd]
  Tensor merged = reshape(transpose(ctx, {0, 2, 1, 3}), {B, Q, d});
  if (hooks && hooks->identity_out) return merged;
  return matmul(merged, w.wo);
}

// The attention operation as exposed: core plus residual on the queries.
inline Tensor cross_attention(const Tensor& queries, const Tensor& context,
                              const AttentionWeights& w, int heads,
                              const AttentionHooks* hooks = nullptr) {
  Tensor out = attention_core(queries, context, w, heads, hooks);
  if (hooks && hooks->skip_residual) return out;
  return add(out, queries);
}

// Attention weight rows for inspection in tests: softmax(s * Q'Wq (K'Wk)^T).
inline Tensor attention_weights_matrix(const Tensor& queries, const Tensor& context,
                                       const AttentionWeights& w, int heads) {
  const int B = queries.dim(0), Q = queries.dim(1), d = queries.dim(2);
  const int K = context.dim(1);
  const int hd = d / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  Tensor q = matmul(queries, w.wq);
  Tensor k = matmul(context, w.wk);
  Tensor qh = transpose(reshape(q, {B, Q, heads, hd}), {0, 2, 1, 3});
  Tensor kt = transpose(reshape(k, {B, K, heads, hd}), {0, 2, 3, 1});
  return softmax(mul_scalar(matmul(qh, kt), scale), -1);  // [B,h,Q,K]
}

inline Tensor block_forward(const Tensor& x, const BlockW& blk, int heads,
                            const Tensor* cross_context = nullptr) {
  Tensor normed = layer_norm(x, blk.ln_self.gamma, blk.ln_self.beta);
  Tensor t = add(x, attention_core(normed, normed, blk.self_attn, heads));
  if (blk.has_cross) {
    if (!cross_context)
      throw std::logic_error("block_forward: cross block without context");
    t = add(t, attention_core(layer_norm(t, blk.ln_cross.gamma, blk.ln_cross.beta),
                              *cross_context, blk.cross_attn, heads));
  }
  Tensor h = layer_norm(t, blk.ln_ffn.gamma, blk.ln_ffn.beta);
  h = gelu(add_bias(matmul(h, blk.ffn.w1), blk.ffn.b1));
  h = add_bias(matmul(h, blk.ffn.w2), blk.ffn.b2);
  return add(t, h);
}

// ---------------------------------------------------------------------------
// Patch embedding

// Splits the image into non-overlapping patches (row-major grid), flattens
// each patch and projects it to token_dim. Positional encodings are added
// unless the caller asks for the raw (pre-positional) embeddings.
inline Tensor patch_embed(const PatchEmbedderW& w, const Tensor& image, int patch_size,
                          bool include_positional = true) {
  Tensor tokens = add_bias(matmul(img_to_patches(image, patch_size), w.proj), w.bias);
  if (!include_positional) return tokens;
  const int B = tokens.dim(0), P = tokens.dim(1);
  if (w.pos.dim(0) < P)
    throw std::invalid_argument("patch_embed: positional table " + shape_str(w.pos.shape()) +
                                " smaller than patch count " + std::to_string(P));
  Tensor pos = w.pos.dim(0) == P ? w.pos : slice(w.pos, 0, 0, P);
  return add(tokens, broadcast0(pos, B));
}

// ---------------------------------------------------------------------------
// Full model

struct MapBlockOutput {
  Tensor map;        // [B,1,H,W] in [0,1]
  Tensor cls_logit;  // [B,1] pre-sigmoid
};

struct DetectionResult {
  std::vector<std::uint8_t> protected_intact;  // score > 0.5
  std::vector<float> scores;
  Tensor maps;  // [B,1,H,W]
};

class PADLModel {
 public:
  ModelConfig cfg;

  // perturbation encoder
  Tensor tokens;  // [P, d], shared across images
  PatchEmbedderW embed_enc;
  std::vector<BlockW> enc_blocks;
  LayerNormW enc_ln_out;
  Tensor enc_out_w, enc_out_b;  // d -> p*p*C

  // perturbation decoder (self-attention only)
  PatchEmbedderW embed_dec;
  std::vector<BlockW> dec_blocks;
  LayerNormW dec_ln_out;
  Tensor dec_out_w, dec_out_b;

  // map block
  PatchEmbedderW embed_map;  // positional table has P+1 rows
  Tensor cls_token;          // [1, d]
  Tensor ctx_proj_w, ctx_proj_b;  // projects recovered-perturbation patches to tokens
  std::vector<BlockW> map_blocks;
  LayerNormW map_ln_out;
  Tensor map_out_w, map_out_b;  // d -> p*p
  Tensor head_w1, head_b1, head_w2, head_b2;  // cls MLP: d -> hidden -> 1

  // test hook: forces the encoded perturbation to zero
  bool zero_delta_hook = false;

  PADLModel() = default;
  explicit PADLModel(const ModelConfig& config, std::uint64_t seed = 0) { init(config, seed); }

  void init(const ModelConfig& config, std::uint64_t seed) {
    cfg = config;
    cfg.validate();
    Rng rng(seed);
    const int d = cfg.token_dim, P = cfg.patch_count(), pd = cfg.patch_dim();

    tokens = rng.normal_tensor({P, d}, 0.0f, 1.0f, true);
    embed_enc.init(pd, d, P, rng);
    enc_blocks.assign(cfg.depth, {});
    for (auto& b : enc_blocks) b.init(d, /*cross=*/true, rng);
    enc_ln_out.init(d);
    enc_out_w = rng.normal_tensor({d, pd}, 0.0f, 0.02f, true);
    enc_out_b = Tensor({pd}, 0.0f, true);

    embed_dec.init(pd, d, P, rng);
    dec_blocks.assign(cfg.depth, {});
    for (auto& b : dec_blocks) b.init(d, /*cross=*/false, rng);
    dec_ln_out.init(d);
    dec_out_w = rng.normal_tensor({d, pd}, 0.0f, 0.02f, true);
    dec_out_b = Tensor({pd}, 0.0f, true);

    embed_map.init(pd, d, P + 1, rng);
    cls_token = rng.normal_tensor({1, d}, 0.0f, 0.02f, true);
    ctx_proj_w = rng.normal_tensor({pd, d}, 0.0f, 0.02f, true);
    ctx_proj_b = Tensor({d}, 0.0f, true);
    map_blocks.assign(cfg.depth, {});
    for (auto& b : map_blocks) b.init(d, /*cross=*/true, rng);
    map_ln_out.init(d);
    map_out_w = rng.normal_tensor({d, cfg.patch_size * cfg.patch_size}, 0.0f, 0.02f, true);
    map_out_b = Tensor({cfg.patch_size * cfg.patch_size}, 0.0f, true);
    head_w1 = rng.normal_tensor({d, cfg.mlp_head_hidden}, 0.0f, 0.02f, true);
    head_b1 = Tensor({cfg.mlp_head_hidden}, 0.0f, true);
    head_w2 = rng.normal_tensor({cfg.mlp_head_hidden, 1}, 0.0f, 0.02f, true);
    head_b2 = Tensor({1}, 0.0f, true);
  }

  // Image-specific perturbation in [-1,1]: the shared tokens are conditioned
  // on the image through cross-attention, projected back to pixel space and
  // bounded by tanh.
  Tensor encode_perturbation(const Tensor& x) const {
    check_image(x, "encode_perturbation");
    const int B = x.dim(0);
    if (zero_delta_hook) return Tensor({B, cfg.channels, cfg.image_height, cfg.image_width});
    Tensor ctx = patch_embed(embed_enc, x, cfg.patch_size);
    Tensor t = broadcast0(tokens, B);
    for (const auto& blk : enc_blocks) t = block_forward(t, blk, cfg.heads, &ctx);
    t = layer_norm(t, enc_ln_out.gamma, enc_ln_out.beta);
    Tensor patches = add_bias(matmul(t, enc_out_w), enc_out_b);
    return tanh_t(patches_to_img(patches, cfg.channels, cfg.image_height, cfg.image_width,
                                 cfg.patch_size));
  }

  // tau(x) = x + alpha * delta_e(x). Not clamped; clamping happens only when
  // an image is exported to 8-bit form.
  Tensor protect(const Tensor& x) const {
    return add(x, mul_scalar(encode_perturbation(x), cfg.alpha));
  }

  // Recovers the embedded perturbation (if any) from an arbitrary image.
  Tensor decode_perturbation(const Tensor& y) const {
    check_image(y, "decode_perturbation");
    Tensor t = patch_embed(embed_dec, y, cfg.patch_size);
    for (const auto& blk : dec_blocks) t = block_forward(t, blk, cfg.heads);
    t = layer_norm(t, dec_ln_out.gamma, dec_ln_out.beta);
    Tensor patches = add_bias(matmul(t, dec_out_w), dec_out_b);
    return patches_to_img(patches, cfg.channels, cfg.image_height, cfg.image_width,
                          cfg.patch_size);
  }

  // Joint localization and detection conditioned on the recovered
  // perturbation, which enters every block as cross-attention context.
  MapBlockOutput map_block(const Tensor& y, const Tensor& delta_d) const {
    check_image(y, "map_block");
    if (delta_d.shape() != y.shape())
      throw std::invalid_argument("map_block: image " + shape_str(y.shape()) +
                                  " vs recovered perturbation " + shape_str(delta_d.shape()));
    const int B = y.dim(0), P = cfg.patch_count(), d = cfg.token_dim;

    Tensor t = patch_embed(embed_map, y, cfg.patch_size, /*include_positional=*/false);
    t = concat({t, broadcast0(cls_token, B)}, 1);  // [B, P+1, d], class token last
    t = add(t, broadcast0(embed_map.pos, B));

    Tensor ctx = add_bias(matmul(img_to_patches(delta_d, cfg.patch_size), ctx_proj_w),
                          ctx_proj_b);  // [B, P, d]
    for (const auto& blk : map_blocks) t = block_forward(t, blk, cfg.heads, &ctx);
    t = layer_norm(t, map_ln_out.gamma, map_ln_out.beta);

    Tensor patch_tokens = slice(t, 1, 0, P);
    Tensor cls = reshape(slice(t, 1, P, 1), {B, d});

    Tensor map_patches = add_bias(matmul(patch_tokens, map_out_w), map_out_b);
    Tensor map = sigmoid(patches_to_img(map_patches, 1, cfg.image_height, cfg.image_width,
                                        cfg.patch_size));
    Tensor hid = relu(add_bias(matmul(cls, head_w1), head_b1));
    Tensor logit = add_bias(matmul(hid, head_w2), head_b2);
    return {map, logit};
  }

  // Inference: decode the perturbation, then run the map block once for both
  // the verdict and the localization map.
  DetectionResult detect(const Tensor& y) const {
    NoGradGuard off;
    Tensor delta_d = decode_perturbation(y);
    MapBlockOutput out = map_block(y, delta_d);
    Tensor score = sigmoid(out.cls_logit);
    DetectionResult res;
    const int B = y.dim(0);
    res.scores.resize(B);
    res.protected_intact.resize(B);
    for (int b = 0; b < B; ++b) {
      res.scores[b] = score.at(b);
      res.protected_intact[b] = score.at(b) > 0.5f ? 1 : 0;
    }
    res.maps = out.map;
    return res;
  }

  template <typename Fn>
  void visit_params(Fn&& fn) {
    auto ln = [&](const std::string& name, LayerNormW& w) {
      fn(name + ".gamma", w.gamma);
      fn(name + ".beta", w.beta);
    };
    auto attn = [&](const std::string& name, AttentionWeights& w) {
      fn(name + ".wq", w.wq);
      fn(name + ".wk", w.wk);
      fn(name + ".wv", w.wv);
      fn(name + ".wo", w.wo);
    };
    auto block = [&](const std::string& name, BlockW& b) {
      ln(name + ".ln_self", b.ln_self);
      attn(name + ".self_attn", b.self_attn);
      if (b.has_cross) {
        ln(name + ".ln_cross", b.ln_cross);
        attn(name + ".cross_attn", b.cross_attn);
      }
      ln(name + ".ln_ffn", b.ln_ffn);
      fn(name + ".ffn.w1", b.ffn.w1);
      fn(name + ".ffn.b1", b.ffn.b1);
      fn(name + ".ffn.w2", b.ffn.w2);
      fn(name + ".ffn.b2", b.ffn.b2);
    };
    auto embed = [&](const std::string& name, PatchEmbedderW& w) {
      fn(name + ".proj", w.proj);
      fn(name + ".bias", w.bias);
      fn(name + ".pos", w.pos);
    };

    fn("enc.tokens", tokens);
    embed("enc.embed", embed_enc);
    for (std::size_t i = 0; i < enc_blocks.size(); ++i)
      block("enc.block" + std::to_string(i), enc_blocks[i]);
    ln("enc.ln_out", enc_ln_out);
    fn("enc.out.w", enc_out_w);
    fn("enc.out.b", enc_out_b);

    embed("dec.embed", embed_dec);
    for (std::size_t i = 0; i < dec_blocks.size(); ++i)
      block("dec.block" + std::to_string(i), dec_blocks[i]);
    ln("dec.ln_out", dec_ln_out);
    fn("dec.out.w", dec_out_w);
    fn("dec.out.b", dec_out_b);

    embed("map.embed", embed_map);
    fn("map.cls_token", cls_token);
    fn("map.ctx_proj.w", ctx_proj_w);
    fn("map.ctx_proj.b", ctx_proj_b);
    for (std::size_t i = 0; i < map_blocks.size(); ++i)
      block("map.block" + std::to_string(i), map_blocks[i]);
    ln("map.ln_out", map_ln_out);
    fn("map.out.w", map_out_w);
    fn("map.out.b", map_out_b);
    fn("map.head.w1", head_w1);
    fn("map.head.b1", head_b1);
    fn("map.head.w2", head_w2);
    fn("map.head.b2", head_b2);
  }

  std::vector<std::pair<std::string, Tensor>> named_params() {
    std::vector<std::pair<std::string, Tensor>> out;
    visit_params([&](const std::string& n, Tensor& t) { out.emplace_back(n, t); });
    return out;
  }

  // Parameter groups, for tests that need to mutate one module in isolation.
  std::vector<Tensor> encoder_params() { return group_params("enc."); }
  std::vector<Tensor> decoder_params() { return group_params("dec."); }
  std::vector<Tensor> map_params() { return group_params("map."); }

 private:
  std::vector<Tensor> group_params(const std::string& prefix) {
    std::vector<Tensor> out;
    visit_params([&](const std::string& n, Tensor& t) {
      if (n.rfind(prefix, 0) == 0) out.push_back(t);
    });
    return out;
  }

  void check_image(const Tensor& x, const char* op) const {
    if (x.ndim() != 4 || x.dim(1) != cfg.channels || x.dim(2) != cfg.image_height ||
        x.dim(3) != cfg.image_width)
      throw std::invalid_argument(std::string(op) + ": image " + shape_str(x.shape()) +
                                  " does not match configured " + std::to_string(cfg.channels) +
                                  "x" + std::to_string(cfg.image_height) + "x" +
                                  std::to_string(cfg.image_width));
  }
};

}  // namespace padl
