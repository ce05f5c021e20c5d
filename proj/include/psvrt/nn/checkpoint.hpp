#pragma once

// Checkpoint layout (little-endian):
//   "PSVK" | version u16 | seed u64 | step u64
//   spec_text_length u32 | spec text (nn::to_text)
//   block_count u32 | per block: value_count u64, value_count x f32
// Blocks follow Network::parameters() order (weights, bias per layer).

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "psvrt/dataset_io.hpp"
#include "psvrt/error.hpp"
#include "psvrt/nn/network.hpp"
#include "psvrt/nn/spec.hpp"

namespace psvrt::nn {

inline constexpr char kCheckpointMagic[4] = {'P', 'S', 'V', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  Network<float> network;
  std::uint64_t step = 0;
};

inline void write_checkpoint(std::ostream& out, Network<float>& net, std::uint64_t step) {
  using io::detail::put_le;
  out.write(kCheckpointMagic, 4);
  put_le(out, kCheckpointVersion);
  put_le(out, net.seed());
  put_le(out, step);
  const std::string text = to_text(net.spec());
  put_le(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto blocks = net.parameters();
  put_le(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    put_le(out, static_cast<std::uint64_t>(b.values.size()));
    for (float v : b.values) put_le(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw IoError("failed writing checkpoint");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  using io::detail::get_le;
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kCheckpointMagic, 4)) throw FormatError("not a checkpoint");
  if (get_le<std::uint16_t>(in) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
  const auto seed = get_le<std::uint64_t>(in);
  const auto step = get_le<std::uint64_t>(in);
  std::string text(get_le<std::uint32_t>(in), '\0');
  in.read(text.data(), static_cast<std::streamsize>(text.size()));
  if (!in) throw FormatError("truncated checkpoint spec");
  Checkpoint cp{Network<float>(from_text(text), seed), step};
  auto blocks = cp.network.parameters();
  if (get_le<std::uint32_t>(in) != blocks.size()) throw FormatError("checkpoint block count mismatch");
  for (auto& b : blocks) {
    if (get_le<std::uint64_t>(in) != b.values.size()) throw FormatError("checkpoint block size mismatch");
    for (auto& v : b.values) v = std::bit_cast<float>(get_le<std::uint32_t>(in));
  }
  return cp;
}

inline void write_checkpoint_file(const std::string& path, Network<float>& net, std::uint64_t step) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_checkpoint(out, net, step);
}

inline Checkpoint read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace psvrt::nn
