#include "smmix/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "smmix/error.hpp"
#include "smmix/rng.hpp"

namespace smmix {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ofstream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

std::uint32_t get_u32(std::ifstream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(FormatFault::Truncated, "dataset file truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (std::uint32_t(b[3]) << 24);
}

std::uint16_t get_u16(std::ifstream& is) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2))
    throw FormatError(FormatFault::Truncated, "dataset file truncated");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

// Draws one shape of the given class into pixels. The bounding box is kept
// fully inside the frame.
void draw_shape(std::vector<std::uint8_t>& px, const DatasetMeta& m, int cls, Rng& rng) {
  const int H = m.height, W = m.width;
  int r = 5 + static_cast<int>(rng.next_below(6));  // half-extent 5..10
  int cx = r + 1 + static_cast<int>(rng.next_below(std::max(1, W - 2 * r - 2)));
  int cy = r + 1 + static_cast<int>(rng.next_below(std::max(1, H - 2 * r - 2)));
  std::uint8_t color[3];
  int bright = static_cast<int>(rng.next_below(3));
  for (int c = 0; c < 3; ++c)
    color[c] = static_cast<std::uint8_t>(
        c == bright ? 180 + rng.next_below(76) : rng.next_below(140));
  auto inside = [&](int x, int y) {
    int dx = x - cx, dy = y - cy;
    switch (cls % 4) {
      case 0: return dx * dx + dy * dy <= r * r;                       // disc
      case 1: return std::abs(dx) <= r && std::abs(dy) <= r;           // square
      case 2: return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) / 2;  // triangle
      default: {                                                       // cross
        int arm = std::max(1, r / 3);
        return (std::abs(dx) <= arm && std::abs(dy) <= r) || (std::abs(dy) <= arm && std::abs(dx) <= r);
      }
    }
  };
  for (int y = cy - r; y <= cy + r; ++y)
    for (int x = cx - r; x <= cx + r; ++x)
      if (inside(x, y))
        for (int c = 0; c < std::min(3, m.channels); ++c)
          px[(static_cast<std::size_t>(c) * H + y) * W + x] = color[c];
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir + "/data.smds", std::ios::binary);
  if (!os) throw IoError("cannot write " + dir + "/data.smds");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(ds.samples.size()));
  put_u16(os, static_cast<std::uint16_t>(ds.meta.height));
  put_u16(os, static_cast<std::uint16_t>(ds.meta.width));
  put_u16(os, static_cast<std::uint16_t>(ds.meta.channels));
  put_u16(os, static_cast<std::uint16_t>(ds.meta.num_classes));
  for (const Sample& s : ds.samples) {
    os.put(static_cast<char>(s.label));
    os.write(reinterpret_cast<const char*>(s.pixels.data()),
             static_cast<std::streamsize>(s.pixels.size()));
  }
  if (!os) throw IoError("write failure on " + dir + "/data.smds");

  std::ofstream mf(dir + "/manifest.txt");
  if (!mf) throw IoError("cannot write " + dir + "/manifest.txt");
  for (int i : ds.train_indices) mf << i << " train\n";
  for (int i : ds.val_indices) mf << i << " val\n";
}

void synth_generate(int n, const DatasetMeta& meta, std::uint64_t seed,
                    const std::string& out_dir) {
  if (n < 1) throw ValidationError("synth_generate: n must be >= 1");
  Dataset ds;
  ds.meta = meta;
  ds.samples.resize(n);
  Rng base(seed);
  const std::size_t npx = static_cast<std::size_t>(meta.channels) * meta.height * meta.width;
  for (int i = 0; i < n; ++i) {
    Rng rng = base.split(static_cast<std::uint64_t>(i) + 1);
    Sample& s = ds.samples[i];
    s.label = static_cast<std::uint8_t>(i % meta.num_classes);  // exactly balanced
    s.pixels.resize(npx);
    for (auto& p : s.pixels) p = static_cast<std::uint8_t>(rng.next_below(80));
    draw_shape(s.pixels, meta, s.label, rng);
  }
  // 80/20 split over a seeded permutation.
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng shuffle_rng = base.split(0);
  for (int i = n - 1; i > 0; --i)
    std::swap(order[i], order[static_cast<int>(shuffle_rng.next_below(i + 1))]);
  int n_train = (n * 4) / 5;
  ds.train_indices.assign(order.begin(), order.begin() + n_train);
  ds.val_indices.assign(order.begin() + n_train, order.end());
  save_dataset(ds, out_dir);
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream is(dir + "/data.smds", std::ios::binary);
  if (!is) throw IoError("cannot open " + dir + "/data.smds");
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError(FormatFault::Truncated, "dataset file truncated");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(FormatFault::BadMagic, "bad dataset magic");
  std::uint32_t version = get_u32(is);
  if (version != kVersion)
    throw FormatError(FormatFault::BadVersion,
                      "unsupported dataset version " + std::to_string(version));
  Dataset ds;
  std::uint32_t count = get_u32(is);
  ds.meta.height = get_u16(is);
  ds.meta.width = get_u16(is);
  ds.meta.channels = get_u16(is);
  ds.meta.num_classes = get_u16(is);
  const std::size_t npx =
      static_cast<std::size_t>(ds.meta.channels) * ds.meta.height * ds.meta.width;
  ds.samples.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    int label = is.get();
    if (label < 0) throw FormatError(FormatFault::Truncated, "dataset file truncated");
    if (label >= ds.meta.num_classes)
      throw FormatError(FormatFault::LabelOutOfRange,
                        "label " + std::to_string(label) + " out of range");
    ds.samples[i].label = static_cast<std::uint8_t>(label);
    ds.samples[i].pixels.resize(npx);
    if (!is.read(reinterpret_cast<char*>(ds.samples[i].pixels.data()),
                 static_cast<std::streamsize>(npx)))
      throw FormatError(FormatFault::Truncated, "dataset file truncated");
  }

  std::ifstream mf(dir + "/manifest.txt");
  if (!mf) throw IoError("cannot open " + dir + "/manifest.txt");
  int idx;
  std::string split;
  while (mf >> idx >> split) {
    if (idx < 0 || idx >= static_cast<int>(count))
      throw FormatError(FormatFault::LabelOutOfRange,
                        "manifest index " + std::to_string(idx) + " out of range");
    (split == "train" ? ds.train_indices : ds.val_indices).push_back(idx);
  }
  return ds;
}

}  // namespace smmix
