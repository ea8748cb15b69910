#pragma once

#include "deform/adam.hpp"
#include "deform/io.hpp"
#include "deform/model.hpp"

namespace deform {

// Checkpoint layout (little-endian):
//   magic "DFCKPT01"
//   config block: length-prefixed key=value text
//   u64 optimizer step count
//   u32 parameter count, then per parameter:
//     name, u32 rank, i64 dims..., f64 payload
//   u32 moment-slot count, then per slot: name, f64 m[], f64 v[]
inline constexpr char kCheckpointMagic[9] = "DFCKPT01";

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ParamRegistry& params, const Adam& opt) {
  atomic_write(path, [&](std::ostream& os) {
    os.write(kCheckpointMagic, 8);
    std::ostringstream cfg_text;
    const KeyValueConfig kv = cfg.to_config();
    for (const auto& [k, v] : kv.values()) cfg_text << k << " = " << v << "\n";
    write_string(os, cfg_text.str());
    write_u64(os, opt.step_count());
    const auto named = params.named_all();
    write_u32(os, static_cast<uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
      write_string(os, name);
      write_u32(os, static_cast<uint32_t>(t.rank()));
      for (int64_t d : t.shape()) write_i64(os, d);
      os.write(reinterpret_cast<const char*>(t.data().data()),
               static_cast<std::streamsize>(t.data().size() * sizeof(double)));
    }
    write_u32(os, static_cast<uint32_t>(opt.slots().size()));
    for (const auto& [name, slot] : opt.slots()) {
      write_string(os, name);
      write_f64_array(os, slot.m);
      write_f64_array(os, slot.v);
    }
  });
}

struct LoadedCheckpoint {
  ModelConfig config;
  DeformNet model;
  Adam optimizer;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
    throw IoError("bad checkpoint magic in " + path);
  LoadedCheckpoint out;
  out.config = ModelConfig::from_config(KeyValueConfig::parse_text(read_string(is)));
  out.model = DeformNet(out.config);
  out.optimizer.set_step_count(read_u64(is));
  const uint32_t n_params = read_u32(is);
  for (uint32_t i = 0; i < n_params; ++i) {
    const std::string name = read_string(is);
    const uint32_t rank = read_u32(is);
    Shape shape;
    for (uint32_t d = 0; d < rank; ++d) shape.push_back(read_i64(is));
    Tensor t = out.model.params().get(name);
    if (t.shape() != shape)
      throw IoError("checkpoint shape mismatch for " + name + ": file " + shape_str(shape) +
                    " vs model " + shape_str(t.shape()));
    is.read(reinterpret_cast<char*>(t.mutable_data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint payload for " + name);
  }
  const uint32_t n_slots = read_u32(is);
  for (uint32_t i = 0; i < n_slots; ++i) {
    const std::string name = read_string(is);
    Adam::Slot slot;
    slot.m = read_f64_array(is);
    slot.v = read_f64_array(is);
    out.optimizer.slots()[name] = std::move(slot);
  }
  return out;
}

}  // namespace deform
