#pragma once

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "smmix/error.hpp"
#include "smmix/mixer.hpp"
#include "smmix/vit.hpp"

namespace smmix {

// Disjoint token index sets covering all N tokens of one mixed image.
struct RegionIndexSets {
  std::vector<int> source;  // I_s: tokens pasted from the source image
  std::vector<int> target;  // I_t: everything else

  static RegionIndexSets from_plan(const MixPlan& plan) {
    RegionIndexSets r;
    for (int i = 0; i < plan.grid_rows * plan.grid_cols; ++i)
      (plan.mask[i] ? r.source : r.target).push_back(i);
    return r;
  }
};

// Average attention for the four (query region, key region) pairs:
//   ss = 1/Ns^2      sum_{i,j in Is} A[i,j]      st = 1/(Ns*Nt) sum_{i in Is, j in It}
//   ts = 1/(Nt*Ns)   sum_{i in It, j in Is}      tt = 1/Nt^2    sum_{i,j in It}
struct RegionAttentionStats {
  double ss = 0, st = 0, ts = 0, tt = 0;
};

// `record` must contain the requested block; the matrix is head-averaged
// first, and for class-token models restricted to image-token rows/columns.
template <class S>
RegionAttentionStats region_attention_stats(const AttentionRecord<S>& record,
                                            const ModelConfig& cfg,
                                            const RegionIndexSets& regions, int block = 0) {
  if (block == 0) block = cfg.attn_block();
  auto it = record.per_block.find(block);
  if (it == record.per_block.end())
    throw ValidationError("region_attention_stats: block " + std::to_string(block) +
                          " not recorded");
  const int N = cfg.num_tokens();
  const std::size_t ns = regions.source.size(), nt = regions.target.size();
  if (ns < 1 || nt < 1 || ns + nt != static_cast<std::size_t>(N))
    throw ValidationError("region_attention_stats: region sets are not a partition of the grid");
  {
    std::vector<char> seen(N, 0);
    for (int i : regions.source) seen.at(i) += 1;
    for (int i : regions.target) seen.at(i) += 1;
    for (int i = 0; i < N; ++i)
      if (seen[i] != 1)
        throw ValidationError("region_attention_stats: region sets are not a partition");
  }

  // Head-averaged image-token submatrix.
  const int seq = record.seq, heads = record.heads;
  const int off = cfg.use_class_token ? 1 : 0;
  std::vector<double> a(static_cast<std::size_t>(N) * N, 0.0);
  for (int hd = 0; hd < heads; ++hd) {
    const S* m = it->second.data() + static_cast<std::size_t>(hd) * seq * seq;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        a[static_cast<std::size_t>(i) * N + j] +=
            static_cast<double>(m[static_cast<std::size_t>(i + off) * seq + (j + off)]) / heads;
  }

  auto avg = [&](const std::vector<int>& qs, const std::vector<int>& ks) {
    double sum = 0;
    for (int i : qs)
      for (int j : ks) sum += a[static_cast<std::size_t>(i) * N + j];
    return sum / (static_cast<double>(qs.size()) * static_cast<double>(ks.size()));
  };
  RegionAttentionStats st;
  st.ss = avg(regions.source, regions.source);
  st.st = avg(regions.source, regions.target);
  st.ts = avg(regions.target, regions.source);
  st.tt = avg(regions.target, regions.target);
  return st;
}

// One mixed validation item: the image plus both constituent labels.
template <class S>
struct MixedEvalItem {
  Tensor<S> image;
  int y_a = 0, y_b = 0;
};

struct TopKMetrics {
  double top1 = 0;  // fraction with argmax in {y_a, y_b}
  double top2 = 0;  // fraction whose top-2 prediction set equals {y_a, y_b}
  int count = 0;
};

template <class S>
TopKMetrics mixed_top_k_accuracy(VitModel<S>& model, const std::vector<MixedEvalItem<S>>& items,
                                 int eval_batch = 64) {
  TopKMetrics m;
  for (const auto& item : items)
    if (item.y_a == item.y_b)
      throw ValidationError("mixed_top_k_accuracy: item with y_A == y_B");
  int hit1 = 0, hit2 = 0;
  for (std::size_t pos = 0; pos < items.size(); pos += eval_batch) {
    std::size_t end = std::min(items.size(), pos + eval_batch);
    std::vector<Tensor<S>> images;
    for (std::size_t i = pos; i < end; ++i) images.push_back(items[i].image);
    Tape<S> tape;
    tape.grad_enabled = false;
    ForwardOptions<S> fopt;
    fopt.record_attention = false;
    ForwardResult<S> out = forward(tape, model, images, fopt);
    const int C = model.cfg.num_classes;
    for (std::size_t i = pos; i < end; ++i) {
      int r = static_cast<int>(i - pos);
      int first = 0, second = -1;
      for (int c = 1; c < C; ++c)
        if (out.probs.at(r, c) > out.probs.at(r, first)) first = c;
      for (int c = 0; c < C; ++c) {
        if (c == first) continue;
        if (second < 0 || out.probs.at(r, c) > out.probs.at(r, second)) second = c;
      }
      const auto& item = items[i];
      if (first == item.y_a || first == item.y_b) ++hit1;
      if ((first == item.y_a && second == item.y_b) || (first == item.y_b && second == item.y_a))
        ++hit2;
    }
  }
  m.count = static_cast<int>(items.size());
  m.top1 = m.count ? static_cast<double>(hit1) / m.count : 0.0;
  m.top2 = m.count ? static_cast<double>(hit2) / m.count : 0.0;
  return m;
}

// 8-bit min-max normalized PGM plus a companion CSV with the raw values.
template <class S>
void export_attention_map(const AttentionScoreGrid<S>& alpha, const std::string& path) {
  double lo = static_cast<double>(*std::min_element(alpha.alpha.begin(), alpha.alpha.end()));
  double hi = static_cast<double>(*std::max_element(alpha.alpha.begin(), alpha.alpha.end()));
  double span = hi > lo ? hi - lo : 1.0;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << "P5\n" << alpha.cols << ' ' << alpha.rows << "\n255\n";
  for (S v : alpha.alpha)
    os.put(static_cast<char>(
        static_cast<int>(255.0 * (static_cast<double>(v) - lo) / span + 0.5)));
  if (!os) throw IoError("write failure on " + path);

  std::ofstream csv(path + ".csv");
  if (!csv) throw IoError("cannot write " + path + ".csv");
  csv << std::setprecision(12);
  for (int r = 0; r < alpha.rows; ++r) {
    for (int c = 0; c < alpha.cols; ++c) {
      if (c) csv << ',';
      csv << static_cast<double>(alpha.alpha[static_cast<std::size_t>(r) * alpha.cols + c]);
    }
    csv << '\n';
  }
}

template <class S>
AttentionScoreGrid<S> import_attention_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  AttentionScoreGrid<S> g;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    int cols = 0;
    while (std::getline(ls, cell, ',')) {
      g.alpha.push_back(static_cast<S>(std::stod(cell)));
      ++cols;
    }
    g.cols = cols;
    ++g.rows;
  }
  return g;
}

}  // namespace smmix
