#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smmix/tensor.hpp"

namespace smmix {

struct DatasetMeta {
  int height = 32;
  int width = 32;
  int channels = 3;
  int num_classes = 4;
};

// One labelled image; pixels are channel-major u8, value/255 when tensorized.
struct Sample {
  std::uint8_t label = 0;
  std::vector<std::uint8_t> pixels;  // channels * height * width
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Sample> samples;
  std::vector<int> train_indices;  // manifest order
  std::vector<int> val_indices;
};

// Synthesizes n images of num_classes classes (disc, square, triangle,
// cross), each a random-color, random-position, random-scale shape on a
// noise-textured background, and writes data.smds plus an 80/20 train/val
// manifest under out_dir. Byte-identical output for a fixed seed.
void synth_generate(int n, const DatasetMeta& meta, std::uint64_t seed, const std::string& out_dir);

// Loads data.smds + manifest.txt from dir. Distinct FormatError kinds for
// bad magic, bad version, truncation, and out-of-range labels.
Dataset load_dataset(const std::string& dir);

void save_dataset(const Dataset& ds, const std::string& dir);

template <class S>
Tensor<S> sample_to_tensor(const Sample& s, const DatasetMeta& meta) {
  Tensor<S> t({meta.channels, meta.height, meta.width});
  for (std::size_t i = 0; i < s.pixels.size(); ++i)
    t.value()[i] = static_cast<S>(s.pixels[i]) / S(255);
  return t;
}

template <class S>
Tensor<S> one_hot_labels(const std::vector<int>& labels, int num_classes,
                         double label_smoothing = 0.0) {
  Tensor<S> t({static_cast<int>(labels.size()), num_classes});
  S off = static_cast<S>(label_smoothing / num_classes);
  S on = static_cast<S>(1.0 - label_smoothing) + off;
  for (std::size_t r = 0; r < labels.size(); ++r)
    for (int c = 0; c < num_classes; ++c) t.at(static_cast<int>(r), c) = c == labels[r] ? on : off;
  return t;
}

}  // namespace smmix
