#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "smmix/rng.hpp"
#include "smmix/tensor.hpp"
#include "smmix/vit.hpp"

namespace smmix {

enum class MixMode { None, Smmix, Mixup, Cutmix };

inline const char* mix_mode_name(MixMode m) {
  switch (m) {
    case MixMode::None: return "none";
    case MixMode::Smmix: return "smmix";
    case MixMode::Mixup: return "mixup";
    case MixMode::Cutmix: return "cutmix";
  }
  return "?";
}

enum class DeltaMode { Uniform25to75, Fixed05, Uniform01 };

// Complete record of one mixing event. Region geometry is in token-grid
// units; centers follow the window convention "offset p covers row
// center + p - floor(h/2)", so the top-left corner is center - floor(h/2).
struct MixPlan {
  int source_index = 0, target_index = 0;
  double delta = 0;
  int h = 0, w = 0;
  int source_center_i = 0, source_center_j = 0;
  int target_center_i = 0, target_center_j = 0;
  double lambda_m = 0;
  int grid_rows = 0, grid_cols = 0;
  std::vector<std::uint8_t> mask;  // rows*cols; 1 where the pasted source region sits

  int source_top() const { return source_center_i - h / 2; }
  int source_left() const { return source_center_j - w / 2; }
  int target_top() const { return target_center_i - h / 2; }
  int target_left() const { return target_center_j - w / 2; }

  std::string to_line() const {
    std::ostringstream os;
    os << source_index << ' ' << target_index << ' ' << delta << ' ' << h << ' ' << w << ' '
       << source_center_i << ' ' << source_center_j << ' ' << target_center_i << ' '
       << target_center_j << ' ' << lambda_m;
    return os.str();
  }
};

template <class S>
struct MixedBatch {
  std::vector<Tensor<S>> images;
  Tensor<S> labels;  // [B x C], every row a distribution
  std::vector<MixPlan> plans;  // empty for mixup batches
  MixMode mode = MixMode::None;
};

inline double sample_side_ratio(Rng& rng, DeltaMode mode = DeltaMode::Uniform25to75) {
  switch (mode) {
    case DeltaMode::Fixed05: return 0.5;
    case DeltaMode::Uniform01: return rng.next_double();
    case DeltaMode::Uniform25to75:
    default: return rng.uniform(0.25, 0.75);
  }
}

// Sum of every h x w window of the grid via 2-D prefix sums; entry (t, l) is
// the window with top-left (t, l). Output is (rows-h+1) x (cols-w+1).
template <class S>
std::vector<double> window_sums(const AttentionScoreGrid<S>& alpha, int h, int w) {
  const int rows = alpha.rows, cols = alpha.cols;
  if (h < 1 || w < 1 || h > rows || w > cols)
    throw DimensionError("window_sums: window " + std::to_string(h) + "x" + std::to_string(w) +
                         " does not fit grid " + std::to_string(rows) + "x" + std::to_string(cols));
  // prefix[(r+1)*(cols+1) + c+1] = sum of alpha[0..r][0..c]
  std::vector<double> prefix(static_cast<std::size_t>(rows + 1) * (cols + 1), 0.0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      prefix[(r + 1) * static_cast<std::size_t>(cols + 1) + c + 1] =
          static_cast<double>(alpha.alpha[static_cast<std::size_t>(r) * cols + c]) +
          prefix[r * static_cast<std::size_t>(cols + 1) + c + 1] +
          prefix[(r + 1) * static_cast<std::size_t>(cols + 1) + c] -
          prefix[r * static_cast<std::size_t>(cols + 1) + c];
  const int out_rows = rows - h + 1, out_cols = cols - w + 1;
  std::vector<double> out(static_cast<std::size_t>(out_rows) * out_cols);
  auto at = [&](int r, int c) { return prefix[static_cast<std::size_t>(r) * (cols + 1) + c]; };
  for (int t = 0; t < out_rows; ++t)
    for (int l = 0; l < out_cols; ++l)
      out[static_cast<std::size_t>(t) * out_cols + l] =
          at(t + h, l + w) - at(t, l + w) - at(t + h, l) + at(t, l);
  return out;
}

struct RegionCenters {
  int source_i = 0, source_j = 0;
  int target_i = 0, target_j = 0;
};

// Centers of the max-sum window of alpha_src and the min-sum window of
// alpha_tgt. Windows must lie fully inside the grid; ties break toward the
// smallest row-major top-left index.
template <class S>
RegionCenters select_regions(const AttentionScoreGrid<S>& alpha_src,
                             const AttentionScoreGrid<S>& alpha_tgt, int h, int w) {
  auto argbest = [&](const std::vector<double>& sums, int out_cols, bool want_max) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < sums.size(); ++i)
      if (want_max ? sums[i] > sums[best] : sums[i] < sums[best]) best = i;
    return std::pair<int, int>(static_cast<int>(best) / out_cols,
                               static_cast<int>(best) % out_cols);
  };
  auto src_sums = window_sums(alpha_src, h, w);
  auto tgt_sums = window_sums(alpha_tgt, h, w);
  auto [st, sl] = argbest(src_sums, alpha_src.cols - w + 1, true);
  auto [tt, tl] = argbest(tgt_sums, alpha_tgt.cols - w + 1, false);
  RegionCenters c;
  c.source_i = st + h / 2;
  c.source_j = sl + w / 2;
  c.target_i = tt + h / 2;
  c.target_j = tl + w / 2;
  return c;
}

namespace detail {

// Copies the P x P pixel block of token cell (sr, sc) in src onto token cell
// (tr, tc) in dst. Pure copy, no blending.
template <class S>
void copy_token_block(Tensor<S>& dst, const Tensor<S>& src, int tr, int tc, int sr, int sc,
                      const ModelConfig& cfg) {
  const int P = cfg.patch_size, H = cfg.image_size, C = cfg.channels;
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < P; ++y)
      for (int x = 0; x < P; ++x)
        dst.value()[(static_cast<std::size_t>(c) * H + tr * P + y) * H + tc * P + x] =
            src.value()[(static_cast<std::size_t>(c) * H + sr * P + y) * H + sc * P + x];
}

template <class S>
Tensor<S> clone_values(const Tensor<S>& t) {
  return Tensor<S>::from(t.shape(), t.value());
}

}  // namespace detail

// Max-min attention region mixing. Target i receives the max-attention
// window of source B-1-i pasted over its own min-attention window;
// y = lambda_m * y_src + (1 - lambda_m) * y_tgt.
template <class S>
MixedBatch<S> apply_smmix(const std::vector<Tensor<S>>& images, const Tensor<S>& labels,
                          const std::vector<AttentionScoreGrid<S>>& alphas, Rng& rng,
                          const ModelConfig& cfg, DeltaMode delta_mode = DeltaMode::Uniform25to75) {
  const int B = static_cast<int>(images.size());
  if (B < 2) throw ValidationError("apply_smmix: batch size must be >= 2");
  if (static_cast<int>(alphas.size()) != B)
    throw ValidationError("apply_smmix: need one attention grid per image");
  const int rows = cfg.grid(), cols = cfg.grid(), C = labels.cols();

  MixedBatch<S> out;
  out.mode = MixMode::Smmix;
  out.labels = Tensor<S>({B, C});
  out.images.reserve(B);
  out.plans.reserve(B);
  for (int tgt = 0; tgt < B; ++tgt) {
    int src = B - 1 - tgt;
    double delta = sample_side_ratio(rng, delta_mode);
    int h = static_cast<int>(delta * rows), w = static_cast<int>(delta * cols);
    // Empty or full regions leave fine-grained labels undefined; resample,
    // then fall back to delta = 0.5 (only reachable in Uniform01 mode).
    for (int attempt = 0; attempt < 8 && (h == 0 || w == 0 || h == rows || w == cols); ++attempt) {
      delta = sample_side_ratio(rng, delta_mode);
      h = static_cast<int>(delta * rows);
      w = static_cast<int>(delta * cols);
    }
    if (h == 0 || w == 0 || h == rows || w == cols) {
      delta = 0.5;
      h = static_cast<int>(delta * rows);
      w = static_cast<int>(delta * cols);
    }

    RegionCenters centers = select_regions(alphas[src], alphas[tgt], h, w);
    MixPlan plan;
    plan.source_index = src;
    plan.target_index = tgt;
    plan.delta = delta;
    plan.h = h;
    plan.w = w;
    plan.source_center_i = centers.source_i;
    plan.source_center_j = centers.source_j;
    plan.target_center_i = centers.target_i;
    plan.target_center_j = centers.target_j;
    plan.lambda_m = static_cast<double>(h) * w / (static_cast<double>(rows) * cols);
    plan.grid_rows = rows;
    plan.grid_cols = cols;
    plan.mask.assign(static_cast<std::size_t>(rows) * cols, 0);

    Tensor<S> mixed = detail::clone_values(images[tgt]);
    for (int p = 0; p < h; ++p)
      for (int q = 0; q < w; ++q) {
        int tr = plan.target_top() + p, tc = plan.target_left() + q;
        int sr = plan.source_top() + p, sc = plan.source_left() + q;
        plan.mask[static_cast<std::size_t>(tr) * cols + tc] = 1;
        detail::copy_token_block(mixed, images[src], tr, tc, sr, sc, cfg);
      }
    out.images.push_back(std::move(mixed));
    S lam = static_cast<S>(plan.lambda_m);
    for (int c = 0; c < C; ++c)
      out.labels.at(tgt, c) = lam * labels.at(src, c) + (S(1) - lam) * labels.at(tgt, c);
    out.plans.push_back(std::move(plan));
  }
  return out;
}

// CutMix with token-aligned rectangles: a uniformly placed random window of
// the source is pasted at the same location in the target; the label mix
// ratio is the exact pasted-area fraction.
template <class S>
MixedBatch<S> apply_cutmix(const std::vector<Tensor<S>>& images, const Tensor<S>& labels, Rng& rng,
                           const ModelConfig& cfg) {
  const int B = static_cast<int>(images.size());
  if (B < 2) throw ValidationError("apply_cutmix: batch size must be >= 2");
  const int rows = cfg.grid(), cols = cfg.grid(), C = labels.cols();
  MixedBatch<S> out;
  out.mode = MixMode::Cutmix;
  out.labels = Tensor<S>({B, C});
  for (int tgt = 0; tgt < B; ++tgt) {
    int src = B - 1 - tgt;
    double lam_draw = rng.beta_symmetric(1.0);
    double side = std::sqrt(lam_draw);
    int h = std::min(rows, static_cast<int>(std::round(side * rows)));
    int w = std::min(cols, static_cast<int>(std::round(side * cols)));
    int top = h < rows ? static_cast<int>(rng.next_below(rows - h + 1)) : 0;
    int left = w < cols ? static_cast<int>(rng.next_below(cols - w + 1)) : 0;

    MixPlan plan;
    plan.source_index = src;
    plan.target_index = tgt;
    plan.delta = side;
    plan.h = h;
    plan.w = w;
    plan.source_center_i = plan.target_center_i = top + h / 2;
    plan.source_center_j = plan.target_center_j = left + w / 2;
    plan.lambda_m = static_cast<double>(h) * w / (static_cast<double>(rows) * cols);
    plan.grid_rows = rows;
    plan.grid_cols = cols;
    plan.mask.assign(static_cast<std::size_t>(rows) * cols, 0);

    Tensor<S> mixed = detail::clone_values(images[tgt]);
    for (int p = 0; p < h; ++p)
      for (int q = 0; q < w; ++q) {
        plan.mask[static_cast<std::size_t>(top + p) * cols + left + q] = 1;
        detail::copy_token_block(mixed, images[src], top + p, left + q, top + p, left + q, cfg);
      }
    out.images.push_back(std::move(mixed));
    S lam = static_cast<S>(plan.lambda_m);
    for (int c = 0; c < C; ++c)
      out.labels.at(tgt, c) = lam * labels.at(src, c) + (S(1) - lam) * labels.at(tgt, c);
    out.plans.push_back(std::move(plan));
  }
  return out;
}

// Convex pixel blend with lambda ~ Beta(0.8, 0.8) and the matching label
// blend. No plans: regions are undefined under blending.
template <class S>
MixedBatch<S> apply_mixup(const std::vector<Tensor<S>>& images, const Tensor<S>& labels, Rng& rng,
                          double beta_alpha = 0.8) {
  const int B = static_cast<int>(images.size());
  if (B < 2) throw ValidationError("apply_mixup: batch size must be >= 2");
  const int C = labels.cols();
  MixedBatch<S> out;
  out.mode = MixMode::Mixup;
  out.labels = Tensor<S>({B, C});
  for (int tgt = 0; tgt < B; ++tgt) {
    int src = B - 1 - tgt;
    S lam = static_cast<S>(rng.beta_symmetric(beta_alpha));
    Tensor<S> mixed(images[tgt].shape());
    for (std::size_t i = 0; i < mixed.size(); ++i)
      mixed.value()[i] = lam * images[src].value()[i] + (S(1) - lam) * images[tgt].value()[i];
    out.images.push_back(std::move(mixed));
    for (int c = 0; c < C; ++c)
      out.labels.at(tgt, c) = lam * labels.at(src, c) + (S(1) - lam) * labels.at(tgt, c);
  }
  return out;
}

}  // namespace smmix
