#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "smmix/ops.hpp"

namespace smmix {

struct ModelConfig {
  int image_size = 32;  // H == W
  int patch_size = 4;
  int channels = 3;
  int embed_dim = 64;
  int num_heads = 4;
  int depth = 4;
  int num_classes = 4;
  bool use_class_token = false;
  // 1-based block whose attention provides the image attention score;
  // 0 means "last block".
  int attention_score_block = 0;
  double ln_eps = 1e-6;
  int mlp_ratio = 4;

  int grid() const { return image_size / patch_size; }
  int num_tokens() const { return grid() * grid(); }
  int seq_len() const { return num_tokens() + (use_class_token ? 1 : 0); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  int attn_block() const { return attention_score_block == 0 ? depth : attention_score_block; }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0)
      throw ValidationError("ModelConfig: image_size must be a positive multiple of patch_size");
    if (channels <= 0) throw ValidationError("ModelConfig: channels must be positive");
    if (embed_dim <= 0 || num_heads <= 0 || embed_dim % num_heads != 0)
      throw ValidationError("ModelConfig: embed_dim must be a positive multiple of num_heads");
    if (depth <= 0) throw ValidationError("ModelConfig: depth must be >= 1");
    if (num_classes <= 0) throw ValidationError("ModelConfig: num_classes must be positive");
    if (attn_block() < 1 || attn_block() > depth)
      throw ValidationError("ModelConfig: attention_score_block out of [1, depth]");
  }

  // Closed-form scalar parameter count:
  //   patch embed  (P^2*C_in + 1) * d
  //   pos embed    seq_len * d            (+ d for the class token if used)
  //   per block    12*d^2 + (9 + 2*r)*d   with r = mlp_ratio and the 3d+d
  //                attention biases, 4 LN vectors, and (r+1)d MLP biases:
  //                qkv d*3d+3d, proj d*d+d, mlp d*rd+rd + rd*d+d, ln 4d
  //   final LN     2d
  //   head         d*C + C
  std::int64_t param_count() const {
    std::int64_t d = embed_dim, r = mlp_ratio;
    std::int64_t per_block = 3 * d * d + 3 * d      // qkv
                             + d * d + d            // proj
                             + d * r * d + r * d    // mlp fc1
                             + r * d * d + d        // mlp fc2
                             + 4 * d;               // two layer norms
    std::int64_t total = (static_cast<std::int64_t>(patch_dim()) + 1) * d  // patch embed
                         + static_cast<std::int64_t>(seq_len()) * d        // pos embed
                         + (use_class_token ? d : 0)                       // class token
                         + depth * per_block + 2 * d                       // blocks + final LN
                         + d * num_classes + num_classes;                  // head
    return total;
  }

  // Number of named parameter tensors (checkpoint manifest contract).
  int param_tensor_count() const {
    return 3                           // patch w/b, pos
           + (use_class_token ? 1 : 0) + depth * 12 + 2 + 2;  // blocks, final LN, head
  }
};

// Per-image token output with its grid geometry. `tokens` aliases rows
// [first_row, first_row + N) of the batch-flat token tensor.
template <class S>
struct TokenSequence {
  Tensor<S> tokens;             // [N x d]
  Tensor<S> class_token;        // [1 x d], defined only in class-token mode
  int grid_rows = 0, grid_cols = 0;
};

// Raw (value-only) attention matrices for one image at recorded blocks.
template <class S>
struct AttentionRecord {
  int heads = 0;
  int seq = 0;  // N, or N+1 with class token
  std::map<int, std::vector<S>> per_block;  // 1-based block -> heads*seq*seq values
};

template <class S>
struct AttentionScoreGrid {
  std::vector<S> alpha;  // rows*cols, row-major over the token grid
  int rows = 0, cols = 0;
  int source_block = 0;
};

template <class S>
struct VitModel {
  ModelConfig cfg;
  // Ordered, named parameter tensors; the order is the checkpoint layout.
  std::vector<std::pair<std::string, Tensor<S>>> params;

  explicit VitModel(const ModelConfig& config, Rng rng) : cfg(config) {
    cfg.validate();
    const int d = cfg.embed_dim;
    const S std02 = static_cast<S>(0.02);
    auto w = [&](const std::string& name, std::vector<int> shape) {
      params.emplace_back(name, Tensor<S>::truncated_normal(std::move(shape), rng, std02, true));
    };
    auto zeros = [&](const std::string& name, std::vector<int> shape) {
      Tensor<S> t(std::move(shape), true);
      params.emplace_back(name, t);
    };
    auto consts = [&](const std::string& name, std::vector<int> shape, S v) {
      params.emplace_back(name, Tensor<S>::full(std::move(shape), v, true));
    };
    w("patch_embed.weight", {cfg.patch_dim(), d});
    zeros("patch_embed.bias", {d});
    w("pos_embed", {cfg.seq_len(), d});
    if (cfg.use_class_token) w("cls_token", {1, d});
    for (int b = 0; b < cfg.depth; ++b) {
      std::string p = "block" + std::to_string(b) + ".";
      consts(p + "ln1.gamma", {d}, S(1));
      zeros(p + "ln1.beta", {d});
      w(p + "qkv.weight", {d, 3 * d});
      zeros(p + "qkv.bias", {3 * d});
      w(p + "proj.weight", {d, d});
      zeros(p + "proj.bias", {d});
      consts(p + "ln2.gamma", {d}, S(1));
      zeros(p + "ln2.beta", {d});
      w(p + "mlp.fc1.weight", {d, cfg.mlp_ratio * d});
      zeros(p + "mlp.fc1.bias", {cfg.mlp_ratio * d});
      w(p + "mlp.fc2.weight", {cfg.mlp_ratio * d, d});
      zeros(p + "mlp.fc2.bias", {d});
    }
    consts("final_ln.gamma", {d}, S(1));
    zeros("final_ln.beta", {d});
    // Zero-initialized classifier: a fresh model predicts the uniform
    // distribution regardless of head variant.
    zeros("head.weight", {d, cfg.num_classes});
    zeros("head.bias", {cfg.num_classes});
  }

  Tensor<S>& param(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return t;
    throw ValidationError("unknown parameter '" + name + "'");
  }

  void zero_grads() {
    for (auto& [n, t] : params) t.zero_grad();
  }
};

// image [C_in x H x W] -> [N x (P^2*C_in)]; row i is the patch at grid cell
// (i / cols, i % cols), flattened channel-major then row-major within the
// patch. Exactly inverted by unpatchify.
template <class S>
Tensor<S> patchify(const Tensor<S>& image, const ModelConfig& cfg) {
  if (image.ndim() != 3 || image.shape()[0] != cfg.channels ||
      image.shape()[1] != cfg.image_size || image.shape()[2] != cfg.image_size)
    throw DimensionError("patchify: image " + shape_str(image.shape()) + " does not match config");
  const int g = cfg.grid(), P = cfg.patch_size, H = cfg.image_size, C = cfg.channels;
  Tensor<S> out({cfg.num_tokens(), cfg.patch_dim()});
  for (int pr = 0; pr < g; ++pr)
    for (int pc = 0; pc < g; ++pc) {
      S* row = out.data() + static_cast<std::size_t>(pr * g + pc) * cfg.patch_dim();
      int k = 0;
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < P; ++y)
          for (int x = 0; x < P; ++x)
            row[k++] = image.value()[(static_cast<std::size_t>(c) * H + pr * P + y) * H + pc * P + x];
    }
  return out;
}

template <class S>
Tensor<S> unpatchify(const Tensor<S>& patches, const ModelConfig& cfg) {
  if (patches.ndim() != 2 || patches.shape()[0] != cfg.num_tokens() ||
      patches.shape()[1] != cfg.patch_dim())
    throw DimensionError("unpatchify: " + shape_str(patches.shape()) + " does not match config");
  const int g = cfg.grid(), P = cfg.patch_size, H = cfg.image_size, C = cfg.channels;
  Tensor<S> out({C, H, H});
  for (int pr = 0; pr < g; ++pr)
    for (int pc = 0; pc < g; ++pc) {
      const S* row = patches.data() + static_cast<std::size_t>(pr * g + pc) * cfg.patch_dim();
      int k = 0;
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < P; ++y)
          for (int x = 0; x < P; ++x)
            out.value()[(static_cast<std::size_t>(c) * H + pr * P + y) * H + pc * P + x] = row[k++];
    }
  return out;
}

template <class S>
struct ForwardOptions {
  // 1-based blocks whose attention to retain; empty = just cfg.attn_block().
  std::vector<int> record_blocks;
  bool record_attention = true;
  bool check_finite = false;
};

template <class S>
struct ForwardResult {
  int batch = 0;
  Tensor<S> tokens;  // [(B * seq) x d] after the final LayerNorm
  Tensor<S> logits;  // [B x C]
  Tensor<S> probs;   // [B x C], softmax of logits, in-graph
  std::vector<AttentionRecord<S>> attention;  // one per image

  TokenSequence<S> token_sequence(Tape<S>& tape, int b, const ModelConfig& cfg) const {
    TokenSequence<S> ts;
    ts.grid_rows = cfg.grid();
    ts.grid_cols = cfg.grid();
    int seq = cfg.seq_len();
    int off = cfg.use_class_token ? 1 : 0;
    ts.tokens = ops::rows_slice(tape, tokens, b * seq + off, cfg.num_tokens());
    if (cfg.use_class_token) ts.class_token = ops::rows_slice(tape, tokens, b * seq, 1);
    return ts;
  }
};

template <class S>
ForwardResult<S> forward(Tape<S>& tape, VitModel<S>& model, const std::vector<Tensor<S>>& images,
                         ForwardOptions<S> opt = {}) {
  const ModelConfig& cfg = model.cfg;
  const int B = static_cast<int>(images.size());
  if (B == 0) throw ValidationError("forward: empty batch");
  const int d = cfg.embed_dim, N = cfg.num_tokens(), seq = cfg.seq_len();
  const int heads = cfg.num_heads, dh = d / heads;

  std::vector<int> record_blocks = opt.record_blocks;
  if (opt.record_attention && record_blocks.empty()) record_blocks = {cfg.attn_block()};

  // Patch rows for the whole batch in one matrix; images carry no gradient.
  Tensor<S> patches({B * N, cfg.patch_dim()});
  for (int b = 0; b < B; ++b) {
    Tensor<S> p = patchify(images[b], cfg);
    std::copy_n(p.data(), p.size(), patches.data() + static_cast<std::size_t>(b) * p.size());
  }

  Tensor<S> x = ops::add_rowvec(tape, ops::matmul(tape, patches, model.param("patch_embed.weight")),
                                model.param("patch_embed.bias"));
  if (cfg.use_class_token) {
    std::vector<Tensor<S>> parts;
    parts.reserve(2 * B);
    Tensor<S> cls = model.param("cls_token");
    for (int b = 0; b < B; ++b) {
      parts.push_back(cls);
      parts.push_back(ops::rows_slice(tape, x, b * N, N));
    }
    x = ops::concat_rows(tape, parts);
  }
  x = ops::add_tiled_rows(tape, x, model.param("pos_embed"));

  ForwardResult<S> res;
  res.batch = B;
  res.attention.assign(B, {});
  for (auto& rec : res.attention) {
    rec.heads = heads;
    rec.seq = seq;
  }

  const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (int blk = 0; blk < cfg.depth; ++blk) {
    std::string p = "block" + std::to_string(blk) + ".";
    bool record_this = std::find(record_blocks.begin(), record_blocks.end(), blk + 1) !=
                       record_blocks.end();
    Tensor<S> h = ops::layer_norm_rows(tape, x, model.param(p + "ln1.gamma"),
                                       model.param(p + "ln1.beta"), static_cast<S>(cfg.ln_eps));
    Tensor<S> qkv = ops::add_rowvec(tape, ops::matmul(tape, h, model.param(p + "qkv.weight")),
                                    model.param(p + "qkv.bias"));
    std::vector<Tensor<S>> image_outs;
    image_outs.reserve(B);
    for (int b = 0; b < B; ++b) {
      Tensor<S> qkv_b = ops::rows_slice(tape, qkv, b * seq, seq);
      std::vector<Tensor<S>> head_outs;
      head_outs.reserve(heads);
      if (record_this) res.attention[b].per_block[blk + 1].resize(
          static_cast<std::size_t>(heads) * seq * seq);
      for (int hd = 0; hd < heads; ++hd) {
        Tensor<S> q = ops::cols_slice(tape, qkv_b, hd * dh, dh);
        Tensor<S> k = ops::cols_slice(tape, qkv_b, d + hd * dh, dh);
        Tensor<S> v = ops::cols_slice(tape, qkv_b, 2 * d + hd * dh, dh);
        Tensor<S> scores = ops::scale(tape, ops::matmul(tape, q, k, false, true), inv_sqrt_dh);
        Tensor<S> attn = ops::softmax_rows(tape, scores);
        if (record_this)
          std::copy_n(attn.data(), attn.size(),
                      res.attention[b].per_block[blk + 1].data() +
                          static_cast<std::size_t>(hd) * seq * seq);
        head_outs.push_back(ops::matmul(tape, attn, v));
      }
      image_outs.push_back(ops::concat_cols(tape, head_outs));
    }
    Tensor<S> attn_flat = B == 1 ? image_outs[0] : ops::concat_rows(tape, image_outs);
    x = ops::add(tape, x,
                 ops::add_rowvec(tape, ops::matmul(tape, attn_flat, model.param(p + "proj.weight")),
                                 model.param(p + "proj.bias")));
    Tensor<S> h2 = ops::layer_norm_rows(tape, x, model.param(p + "ln2.gamma"),
                                        model.param(p + "ln2.beta"), static_cast<S>(cfg.ln_eps));
    Tensor<S> m = ops::add_rowvec(tape, ops::matmul(tape, h2, model.param(p + "mlp.fc1.weight")),
                                  model.param(p + "mlp.fc1.bias"));
    m = ops::gelu(tape, m);
    m = ops::add_rowvec(tape, ops::matmul(tape, m, model.param(p + "mlp.fc2.weight")),
                        model.param(p + "mlp.fc2.bias"));
    x = ops::add(tape, x, m);
    if (opt.check_finite) x.check_finite("block " + std::to_string(blk) + " output");
  }

  x = ops::layer_norm_rows(tape, x, model.param("final_ln.gamma"), model.param("final_ln.beta"),
                           static_cast<S>(cfg.ln_eps));
  res.tokens = x;

  // Classifier head input: class token when present, otherwise mean of image tokens.
  std::vector<std::vector<int>> groups(B);
  for (int b = 0; b < B; ++b) {
    if (cfg.use_class_token) {
      groups[b] = {b * seq};
    } else {
      groups[b].resize(N);
      for (int i = 0; i < N; ++i) groups[b][i] = b * seq + i;
    }
  }
  Tensor<S> pooled = ops::group_mean_rows(tape, x, groups);
  res.logits = ops::add_rowvec(tape, ops::matmul(tape, pooled, model.param("head.weight")),
                               model.param("head.bias"));
  res.probs = ops::softmax_rows(tape, res.logits);
  return res;
}

// Image attention score: mean over heads and query rows of the recorded
// attention at the requested block, reshaped row-major onto the token grid.
// Class-token models restrict to image-token query rows and key columns of
// the same matrix; the result is not renormalized.
template <class S>
AttentionScoreGrid<S> image_attention_score(const AttentionRecord<S>& record,
                                            const ModelConfig& cfg) {
  int block = cfg.attn_block();
  auto it = record.per_block.find(block);
  if (it == record.per_block.end())
    throw ValidationError("image_attention_score: block " + std::to_string(block) +
                          " was not recorded");
  const std::vector<S>& a = it->second;
  const int seq = record.seq, heads = record.heads, N = cfg.num_tokens();
  const int off = cfg.use_class_token ? 1 : 0;
  AttentionScoreGrid<S> g;
  g.rows = cfg.grid();
  g.cols = cfg.grid();
  g.source_block = block;
  g.alpha.assign(N, S(0));
  const S inv = S(1) / static_cast<S>(heads * N);
  for (int hd = 0; hd < heads; ++hd) {
    const S* m = a.data() + static_cast<std::size_t>(hd) * seq * seq;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        g.alpha[j] += m[static_cast<std::size_t>(i + off) * seq + (j + off)] * inv;
  }
  return g;
}

}  // namespace smmix
