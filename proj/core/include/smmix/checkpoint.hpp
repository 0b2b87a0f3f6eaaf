#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "smmix/error.hpp"
#include "smmix/optimizer.hpp"
#include "smmix/rng.hpp"
#include "smmix/vit.hpp"

namespace smmix {

// Checkpoint layout (little-endian):
//   magic "SMMX" | u32 version | u64 manifest length | manifest text | payload
// The manifest carries the model config echo, step counter, rng state, and
// one "tensor <name> <elem_size> <ndim> <dims...> <offset>" line per tensor
// (parameters first, then opt.m.* / opt.v.* optimizer slots). Offsets are
// relative to the payload start.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class S>
struct TrainState {
  VitModel<S>* model = nullptr;
  AdamW<S>* optimizer = nullptr;
  std::int64_t step = 0;
  std::uint64_t rng_key = 0;
  std::uint64_t rng_counter = 0;
};

namespace detail {

template <class S>
void append_tensor_line(std::ostringstream& man, const std::string& name,
                        const std::vector<int>& shape, std::size_t n, std::uint64_t& offset) {
  man << "tensor " << name << ' ' << sizeof(S) << ' ' << shape.size();
  for (int d : shape) man << ' ' << d;
  man << ' ' << offset << '\n';
  offset += n * sizeof(S);
}

}  // namespace detail

template <class S>
void save_checkpoint(const TrainState<S>& state, const std::string& path) {
  const VitModel<S>& model = *state.model;
  const ModelConfig& c = model.cfg;
  std::ostringstream man;
  man << "config " << c.image_size << ' ' << c.patch_size << ' ' << c.channels << ' '
      << c.embed_dim << ' ' << c.num_heads << ' ' << c.depth << ' ' << c.num_classes << ' '
      << (c.use_class_token ? 1 : 0) << ' ' << c.attention_score_block << '\n';
  man << "step " << state.step << '\n';
  man << "rng " << state.rng_key << ' ' << state.rng_counter << '\n';
  man << "adam_t " << (state.optimizer ? state.optimizer->steps() : 0) << '\n';

  std::uint64_t offset = 0;
  for (const auto& [name, t] : model.params)
    detail::append_tensor_line<S>(man, name, t.shape(), t.size(), offset);
  if (state.optimizer) {
    for (std::size_t p = 0; p < model.params.size(); ++p)
      detail::append_tensor_line<S>(man, "opt.m." + model.params[p].first,
                                    model.params[p].second.shape(), model.params[p].second.size(),
                                    offset);
    for (std::size_t p = 0; p < model.params.size(); ++p)
      detail::append_tensor_line<S>(man, "opt.v." + model.params[p].first,
                                    model.params[p].second.shape(), model.params[p].second.size(),
                                    offset);
  }
  std::string manifest = man.str();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path);
  os.write("SMMX", 4);
  std::uint32_t ver = kCheckpointVersion;
  std::uint64_t mlen = manifest.size();
  os.write(reinterpret_cast<const char*>(&ver), 4);
  os.write(reinterpret_cast<const char*>(&mlen), 8);
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  auto write_vec = [&](const std::vector<S>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(S)));
  };
  for (const auto& [name, t] : model.params) write_vec(t.value());
  if (state.optimizer) {
    for (auto& v : state.optimizer->m_state()) write_vec(v);
    for (auto& v : state.optimizer->v_state()) write_vec(v);
  }
  if (!os) throw IoError("write failure on checkpoint " + path);
}

// Loads into an existing model/optimizer pair; shapes are validated against
// the model built from its own ModelConfig.
template <class S>
void load_checkpoint(TrainState<S>& state, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  if (!is.read(magic, 4)) throw FormatError(FormatFault::Truncated, "checkpoint truncated");
  if (std::memcmp(magic, "SMMX", 4) != 0)
    throw FormatError(FormatFault::BadMagic, "bad checkpoint magic");
  std::uint32_t ver = 0;
  std::uint64_t mlen = 0;
  if (!is.read(reinterpret_cast<char*>(&ver), 4) || !is.read(reinterpret_cast<char*>(&mlen), 8))
    throw FormatError(FormatFault::Truncated, "checkpoint truncated");
  if (ver != kCheckpointVersion)
    throw FormatError(FormatFault::BadVersion, "unsupported checkpoint version");
  std::string manifest(mlen, '\0');
  if (!is.read(manifest.data(), static_cast<std::streamsize>(mlen)))
    throw FormatError(FormatFault::Truncated, "checkpoint truncated");

  VitModel<S>& model = *state.model;
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  std::istringstream ms(manifest);
  std::string line;
  while (std::getline(ms, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      ModelConfig c;
      int cls = 0;
      ls >> c.image_size >> c.patch_size >> c.channels >> c.embed_dim >> c.num_heads >> c.depth >>
          c.num_classes >> cls >> c.attention_score_block;
      c.use_class_token = cls != 0;
      const ModelConfig& m = model.cfg;
      if (c.image_size != m.image_size || c.patch_size != m.patch_size ||
          c.channels != m.channels || c.embed_dim != m.embed_dim || c.num_heads != m.num_heads ||
          c.depth != m.depth || c.num_classes != m.num_classes ||
          c.use_class_token != m.use_class_token)
        throw FormatError(FormatFault::ShapeMismatch, "checkpoint config does not match model");
    } else if (kind == "step") {
      ls >> state.step;
    } else if (kind == "rng") {
      ls >> state.rng_key >> state.rng_counter;
    } else if (kind == "adam_t") {
      std::int64_t t = 0;
      ls >> t;
      if (state.optimizer) state.optimizer->set_steps(t);
    } else if (kind == "tensor") {
      Entry e;
      std::size_t esz = 0, nd = 0;
      ls >> e.name >> esz >> nd;
      if (esz != sizeof(S))
        throw FormatError(FormatFault::ShapeMismatch,
                          "checkpoint element size " + std::to_string(esz) +
                              " does not match model scalar size " + std::to_string(sizeof(S)));
      e.shape.resize(nd);
      for (auto& d : e.shape) ls >> d;
      ls >> e.offset;
      entries.push_back(std::move(e));
    }
  }

  std::streampos payload_start = is.tellg();
  auto read_into = [&](std::vector<S>& dst, std::uint64_t offset) {
    is.seekg(payload_start + static_cast<std::streamoff>(offset));
    if (!is.read(reinterpret_cast<char*>(dst.data()),
                 static_cast<std::streamsize>(dst.size() * sizeof(S))))
      throw FormatError(FormatFault::Truncated, "checkpoint payload truncated");
  };
  for (const Entry& e : entries) {
    if (e.name.rfind("opt.m.", 0) == 0 || e.name.rfind("opt.v.", 0) == 0) {
      if (!state.optimizer) continue;
      bool is_m = e.name[4] == 'm';
      std::string pname = e.name.substr(6);
      for (std::size_t p = 0; p < model.params.size(); ++p)
        if (model.params[p].first == pname)
          read_into(is_m ? state.optimizer->m_state()[p] : state.optimizer->v_state()[p],
                    e.offset);
    } else {
      Tensor<S>& t = model.param(e.name);
      if (t.shape() != e.shape)
        throw FormatError(FormatFault::ShapeMismatch, "shape mismatch for tensor " + e.name);
      read_into(t.value(), e.offset);
    }
  }
}

}  // namespace smmix
