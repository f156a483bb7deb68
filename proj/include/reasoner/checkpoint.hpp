#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "reasoner/config.hpp"

// Binary checkpoint, little-endian, doubles stored bit-exact:
//
//   "RSNRCKPT" u32 version
//   u64 len, JSON {"model":..., "train":..., "step":n}
//   section "model"    : u64 count, then per tensor: name, u64 rank, u64 dims[rank], f64 data[]
//   section "momentum" : same layout
//   section "adam"     : u64 t, u64 count, per tensor: name, u64 n, f64 m[n], f64 v[n]
//   u64 len, RNG state as text
namespace reasoner {

inline constexpr char kCheckpointMagic[8] = {'R', 'S', 'N', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}
  template <class T>
  void pod(T v) { os_.write(reinterpret_cast<const char*>(&v), sizeof(T)); }
  void string(const std::string& s) {
    pod<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(const std::vector<double>& v) {
    os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}
  template <class T>
  T pod() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) throw ParseError("truncated checkpoint", 0);
    return v;
  }
  std::string string() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 32)) throw ParseError("corrupt checkpoint string length", 0);
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (!is_) throw ParseError("truncated checkpoint", 0);
    return s;
  }
  void doubles(std::vector<double>& v) {
    is_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!is_) throw ParseError("truncated checkpoint", 0);
  }

 private:
  std::istream& is_;
};

inline void write_tensors(BinaryWriter& w, const ParamList& list) {
  w.pod<std::uint64_t>(list.size());
  for (const auto& p : list) {
    w.string(p.name);
    w.pod<std::uint64_t>(p.tensor.shape().size());
    for (auto d : p.tensor.shape()) w.pod<std::uint64_t>(d);
    w.doubles(p.tensor.data());
  }
}

// Reads into existing tensors; names and shapes must match exactly.
inline void read_tensors(BinaryReader& r, const ParamList& list, const char* section) {
  const auto count = r.pod<std::uint64_t>();
  if (count != list.size())
    throw DimensionError(std::string("checkpoint section ") + section + " holds " + std::to_string(count) +
                         " tensors, model expects " + std::to_string(list.size()));
  for (const auto& p : list) {
    const auto name = r.string();
    if (name != p.name) throw DimensionError("checkpoint tensor '" + name + "' where '" + p.name + "' was expected");
    Shape shape(r.pod<std::uint64_t>());
    for (auto& d : shape) d = r.pod<std::uint64_t>();
    if (shape != p.tensor.shape())
      throw DimensionError("checkpoint tensor " + name + " has shape " + shape_string(shape) + ", model has " +
                           shape_string(p.tensor.shape()));
    auto t = p.tensor;
    r.doubles(t.data());
  }
}

}  // namespace detail

inline void save_checkpoint(Trainer& trainer, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  detail::BinaryWriter w(os);
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  w.pod(kCheckpointVersion);
  json meta{{"model", to_json(trainer.model().config)}, {"train", to_json(trainer.config())}, {"step", trainer.step()}};
  w.string(meta.dump());
  detail::write_tensors(w, trainer.model().all_tensors());
  detail::write_tensors(w, trainer.momentum().parameters());
  auto& opt = trainer.optimizer();
  w.pod<std::uint64_t>(opt.steps_taken());
  const auto& params = trainer.parameters();
  w.pod<std::uint64_t>(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    w.string(params[i].name);
    w.pod<std::uint64_t>(opt.first_moments()[i].size());
    w.doubles(opt.first_moments()[i]);
    w.doubles(opt.second_moments()[i]);
  }
  std::ostringstream rng;
  rng << trainer.rng();
  w.string(rng.str());
  if (!os) throw Error("failed writing " + path);
}

struct CheckpointHeader {
  ModelConfig model;
  TrainConfig train;
  std::size_t step = 0;
};

inline CheckpointHeader read_checkpoint_header(std::istream& is) {
  char magic[sizeof kCheckpointMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw ParseError("not a checkpoint file", 0);
  detail::BinaryReader r(is);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatVersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  CheckpointHeader h;
  const json meta = json::parse(r.string());
  from_json_strict(meta.at("model"), h.model);
  from_json_strict(meta.at("train"), h.train);
  h.step = meta.at("step").get<std::size_t>();
  return h;
}

// Restores a trainer built from the checkpoint's own configs. The optional
// `train_override` replaces the stored TrainConfig (e.g. more steps).
inline Trainer load_checkpoint(const std::string& path, const TrainConfig* train_override = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path);
  const auto h = read_checkpoint_header(is);
  Trainer trainer(h.model, train_override ? *train_override : h.train);
  detail::BinaryReader r(is);
  detail::read_tensors(r, trainer.model().all_tensors(), "model");
  detail::read_tensors(r, trainer.momentum().parameters(), "momentum");
  auto& opt = trainer.optimizer();
  opt.set_steps_taken(r.pod<std::uint64_t>());
  const auto& params = trainer.parameters();
  if (r.pod<std::uint64_t>() != params.size()) throw DimensionError("checkpoint optimizer state does not match model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (r.string() != params[i].name) throw DimensionError("checkpoint optimizer state out of order");
    if (r.pod<std::uint64_t>() != params[i].tensor.size()) throw DimensionError("checkpoint moment size mismatch");
    r.doubles(opt.first_moments()[i]);
    r.doubles(opt.second_moments()[i]);
  }
  std::istringstream rng(r.string());
  rng >> trainer.rng();
  if (!rng) throw ParseError("corrupt RNG state in checkpoint", 0);
  trainer.set_step(h.step);
  return trainer;
}

}  // namespace reasoner
